//! Evaluation metrics: rank and product-moment correlation, ordinal
//! Krippendorff's alpha, Adjusted Rand Index and binary F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::NoisePolicy;
use crate::wug::{SenseClustering, NOISE};

/// What to do with gold items that have no prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Error,
    DropWithCoverage,
}

/// Gold and predicted values aligned by item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedSeries {
    pub ids: Vec<String>,
    pub gold: Vec<f64>,
    pub pred: Vec<f64>,
    /// Number of gold items before dropping unpredicted ones.
    pub total: usize,
}

impl PairedSeries {
    /// Series from two equally long slices; ids are positions.
    pub fn from_slices(gold: &[f64], pred: &[f64]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Shape(format!(
                "gold has {} items, prediction {}",
                gold.len(),
                pred.len()
            )));
        }
        Ok(PairedSeries {
            ids: (0..gold.len()).map(|i| i.to_string()).collect(),
            gold: gold.to_vec(),
            pred: pred.to_vec(),
            total: gold.len(),
        })
    }

    /// Aligns predictions to gold items, in gold id order. Predictions for
    /// ids without gold are ignored.
    pub fn align(
        gold: &BTreeMap<String, f64>,
        pred: &BTreeMap<String, f64>,
        policy: MissingPolicy,
    ) -> Result<Self> {
        let missing: Vec<String> = gold.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
        if !missing.is_empty() && policy == MissingPolicy::Error {
            return Err(Error::MissingPredictions(missing));
        }
        let mut s = PairedSeries {
            total: gold.len(),
            ..Default::default()
        };
        for (id, &g) in gold {
            if let Some(&p) = pred.get(id) {
                s.ids.push(id.clone());
                s.gold.push(g);
                s.pred.push(p);
            }
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    /// Aligned share of gold items.
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.len() as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub coverage: f64,
    pub n: usize,
}

fn check_correlatable(s: &PairedSeries) -> Result<()> {
    if s.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "correlation needs at least 2 aligned items, got {}",
            s.len()
        )));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    match (constant(&s.gold), constant(&s.pred)) {
        (true, true) => Err(Error::UndefinedMetric("gold and prediction series are constant".into())),
        (true, false) => Err(Error::UndefinedMetric("gold series is constant".into())),
        (false, true) => Err(Error::UndefinedMetric("prediction series is constant".into())),
        _ => Ok(()),
    }
}

fn product_moment(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(s: &PairedSeries) -> Result<Correlation> {
    check_correlatable(s)?;
    Ok(Correlation {
        value: product_moment(&s.gold, &s.pred),
        coverage: s.coverage(),
        n: s.len(),
    })
}

/// Pearson correlation of fractional ranks.
pub fn spearman(s: &PairedSeries) -> Result<Correlation> {
    check_correlatable(s)?;
    Ok(Correlation {
        value: product_moment(&fractional_ranks(&s.gold), &fractional_ranks(&s.pred)),
        coverage: s.coverage(),
        n: s.len(),
    })
}

/// Krippendorff's alpha with the ordinal difference function.
///
/// `units[u][r]` is rater `r`'s value for unit `u` (`None` when missing).
/// Units with fewer than two values are not pairable and are ignored. All
/// pairable values are pooled into one coincidence matrix.
pub fn krippendorff_alpha_ordinal(units: &[Vec<Option<u8>>]) -> Result<f64> {
    let pairable: Vec<Vec<u8>> = units
        .iter()
        .map(|u| u.iter().flatten().copied().collect::<Vec<u8>>())
        .filter(|u| u.len() >= 2)
        .collect();
    if pairable.is_empty() {
        return Err(Error::UndefinedMetric("no unit has two or more values".into()));
    }
    let categories: Vec<u8> = pairable
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<u8>>()
        .into_iter()
        .collect();
    let idx: HashMap<u8, usize> = categories.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let k = categories.len();

    // coincidence matrix
    let mut o = vec![vec![0.0f64; k]; k];
    for u in &pairable {
        let m = u.len() as f64;
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in u.iter().enumerate() {
                if i != j {
                    o[idx[&a]][idx[&b]] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let marginals: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let delta2 = |c: usize, d: usize| -> f64 {
        let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
        let between: f64 = marginals[lo..=hi].iter().sum();
        let v = between - (marginals[c] + marginals[d]) / 2.0;
        v * v
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            let w = delta2(c, d);
            observed += o[c][d] * w;
            expected += marginals[c] * marginals[d] * w;
        }
    }
    if expected == 0.0 {
        return Err(Error::UndefinedMetric(
            "alpha is undefined when all values fall in one category".into(),
        ));
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand Index between two clusterings of the same usages.
///
/// Under [`NoisePolicy::Exclude`], usages that gold marks as noise are
/// removed from both sides first. Two identical partitions score 1 even
/// when the chance-corrected denominator vanishes.
pub fn adjusted_rand_index(
    gold: &SenseClustering,
    pred: &SenseClustering,
    noise: NoisePolicy,
) -> Result<f64> {
    let g_ids: BTreeSet<&str> = gold.ids().collect();
    let p_ids: BTreeSet<&str> = pred.ids().collect();
    if g_ids != p_ids {
        return Err(Error::DomainMismatch {
            only_gold: g_ids.difference(&p_ids).map(|s| (*s).to_owned()).collect(),
            only_pred: p_ids.difference(&g_ids).map(|s| (*s).to_owned()).collect(),
        });
    }

    let mut table: HashMap<(i64, i64), usize> = HashMap::new();
    let mut rows: HashMap<i64, usize> = HashMap::new();
    let mut cols: HashMap<i64, usize> = HashMap::new();
    let mut n = 0usize;
    for (id, g) in gold.iter() {
        if g == NOISE && noise == NoisePolicy::Exclude {
            continue;
        }
        let p = pred.label(id).expect("same domain");
        *table.entry((g, p)).or_default() += 1;
        *rows.entry(g).or_default() += 1;
        *cols.entry(p).or_default() += 1;
        n += 1;
    }

    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denominator = max_index - expected;
    if denominator == 0.0 {
        // only reachable when both partitions are all-singletons or one block
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denominator)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1_positive: f64,
    pub f1_negative: f64,
    pub macro_f1: f64,
    /// Classes whose F1 was set to 0 because they never occur.
    pub undefined_classes: Vec<u8>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Binary classification scores for aligned gold and predicted labels.
pub fn f1_binary(gold: &[bool], pred: &[bool]) -> Result<F1Report> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "gold has {} labels, prediction {}",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("F1 over no items".into()));
    }
    let mut c = Confusion::default();
    for (&g, &p) in gold.iter().zip(pred) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let mut undefined = Vec::new();
    if c.tp + c.fp + c.fn_ == 0 {
        undefined.push(1);
    }
    if c.tn + c.fp + c.fn_ == 0 {
        undefined.push(0);
    }
    let f1_positive = f1(c.tp, c.fp, c.fn_);
    let f1_negative = f1(c.tn, c.fn_, c.fp);
    Ok(F1Report {
        confusion: c,
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1_positive,
        f1_negative,
        macro_f1: 0.5 * (f1_positive + f1_negative),
        undefined_classes: undefined,
    })
}

//! Lemma-level change predictions.
//!
//! Cluster measures read a sense clustering (sense distributions, gained or
//! lost senses, co-clustering of cross-period pairs). Aggregate measures
//! skip clustering and work directly on pair scores or usage vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BinaryThresholds;
use crate::wic::{vector_distance, DistanceMetric, ThresholdSpec};
use crate::wug::{Grouping, SenseClustering, UsagePair, NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePolicy {
    /// Noise usages are ignored.
    #[default]
    Exclude,
    /// Noise usages count as one more cluster.
    Include,
}

/// Relative frequency of each sense among a set of usages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseDistribution {
    probabilities: BTreeMap<i64, f64>,
    support: usize,
}

impl SenseDistribution {
    /// Normalizes raw counts. Zero counts are dropped.
    pub fn from_counts(counts: &BTreeMap<i64, usize>) -> Result<Self> {
        let support: usize = counts.values().sum();
        if support == 0 {
            return Err(Error::Degenerate("sense distribution over no usages".into()));
        }
        let probabilities = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&k, &c)| (k, c as f64 / support as f64))
            .collect();
        Ok(SenseDistribution {
            probabilities,
            support,
        })
    }

    pub fn probability(&self, label: i64) -> f64 {
        self.probabilities.get(&label).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probabilities.iter().map(|(&k, &v)| (k, v))
    }
}

/// Sense distribution of the given usages (typically one period's).
pub fn sense_distribution(
    clustering: &SenseClustering,
    usage_ids: &[&str],
    noise: NoisePolicy,
) -> Result<SenseDistribution> {
    let mut counts = BTreeMap::new();
    for id in usage_ids {
        let label = clustering
            .label(id)
            .ok_or_else(|| Error::Unassigned((*id).to_owned()))?;
        if label == NOISE && noise == NoisePolicy::Exclude {
            continue;
        }
        *counts.entry(label).or_insert(0usize) += 1;
    }
    SenseDistribution::from_counts(&counts)
}

fn entropy_bits(probabilities: impl Iterator<Item = f64>) -> f64 {
    -probabilities
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// Jensen-Shannon distance with base-2 logarithms, in `[0, 1]`.
///
/// Labels missing from one distribution have probability zero there.
pub fn jsd_distance(p: &SenseDistribution, q: &SenseDistribution) -> f64 {
    let labels: BTreeSet<i64> = p.iter().chain(q.iter()).map(|(k, _)| k).collect();
    let mid = labels
        .iter()
        .map(|&k| 0.5 * (p.probability(k) + q.probability(k)));
    let divergence = entropy_bits(mid)
        - 0.5 * (entropy_bits(p.iter().map(|(_, v)| v)) + entropy_bits(q.iter().map(|(_, v)| v)));
    divergence.clamp(0.0, 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryChange {
    pub binary: bool,
    pub gain: bool,
    pub loss: bool,
}

/// Sense gain: some cluster has at least `min_attested` later usages and at
/// most `max_other` earlier ones. Loss is the mirror image; binary change
/// is either.
pub fn binary_change(
    clustering: &SenseClustering,
    usages: &[(&str, Grouping)],
    thresholds: BinaryThresholds,
    noise: NoisePolicy,
) -> Result<BinaryChange> {
    let mut counts: BTreeMap<i64, [usize; 2]> = BTreeMap::new();
    for (id, g) in usages {
        let label = clustering
            .label(id)
            .ok_or_else(|| Error::Unassigned((*id).to_owned()))?;
        if label == NOISE && noise == NoisePolicy::Exclude {
            continue;
        }
        counts.entry(label).or_default()[(g.as_u8() - 1) as usize] += 1;
    }
    let m = thresholds.min_attested;
    let k = thresholds.max_other;
    let gain = counts.values().any(|&[old, new]| new >= m && old <= k);
    let loss = counts.values().any(|&[old, new]| old >= m && new <= k);
    Ok(BinaryChange {
        binary: gain || loss,
        gain,
        loss,
    })
}

/// Share of cross-period pairs whose usages share a cluster.
///
/// With [`NoisePolicy::Exclude`], pairs touching a noise usage are skipped.
pub fn compare_from_clusters(
    clustering: &SenseClustering,
    compare_pairs: &[UsagePair],
    noise: NoisePolicy,
) -> Result<f64> {
    let mut total = 0usize;
    let mut same = 0usize;
    for p in compare_pairs {
        let label = |id: &str| {
            clustering
                .label(id)
                .ok_or_else(|| Error::Unassigned(id.to_owned()))
        };
        let (a, b) = (label(&p.id1)?, label(&p.id2)?);
        if noise == NoisePolicy::Exclude && (a == NOISE || b == NOISE) {
            continue;
        }
        total += 1;
        if a == b {
            same += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("no COMPARE pairs to average".into()));
    }
    Ok(same as f64 / total as f64)
}

/// Average pairwise score over cross-period pairs, in the scores' own
/// orientation.
pub fn apd(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Degenerate("average over no pairs".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Average of the discretized (1..=4) scores.
pub fn apd_thresholded(scores: &[f64], thresholds: &ThresholdSpec) -> Result<f64> {
    let ordinal: Vec<f64> = scores
        .iter()
        .map(|&s| f64::from(thresholds.discretize(s)))
        .collect();
    apd(&ordinal)
}

/// Distance between the mean vectors of the two periods.
pub fn cos_prototype(earlier: &[Array1<f64>], later: &[Array1<f64>], metric: DistanceMetric) -> Result<f64> {
    let mean = |vs: &[Array1<f64>], which: &str| -> Result<Array1<f64>> {
        let first = vs
            .first()
            .ok_or_else(|| Error::Degenerate(format!("no {which} usage vectors")))?;
        let mut sum = Array1::<f64>::zeros(first.len());
        for v in vs {
            if v.len() != first.len() {
                return Err(Error::Shape(format!("vectors of dimension {} and {}", first.len(), v.len())));
            }
            sum += v;
        }
        Ok(sum / vs.len() as f64)
    };
    let a = mean(earlier, "earlier")?;
    let b = mean(later, "later")?;
    vector_distance(a.view(), b.view(), metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiaSenseVariant {
    /// Cross-period APD divided by mean within-period APD.
    #[default]
    Ratio,
    /// Cross-period APD minus mean within-period APD.
    Difference,
}

/// APD normalized by within-period variation. All inputs are distances.
///
/// The within-period term is `(APD_earlier + APD_later) / 2`. The
/// difference variant accepts an empty within-period population and then
/// uses only the other one.
pub fn diasense(
    cross: &[f64],
    within_earlier: &[f64],
    within_later: &[f64],
    variant: DiaSenseVariant,
) -> Result<f64> {
    let cross_apd = apd(cross)?;
    let within = match variant {
        DiaSenseVariant::Ratio => 0.5 * (apd(within_earlier)? + apd(within_later)?),
        DiaSenseVariant::Difference => match (apd(within_earlier), apd(within_later)) {
            (Ok(a), Ok(b)) => 0.5 * (a + b),
            (Ok(a), Err(_)) | (Err(_), Ok(a)) => a,
            (Err(_), Err(_)) => 0.0,
        },
    };
    match variant {
        DiaSenseVariant::Ratio if within == 0.0 => {
            Err(Error::Degenerate("within-period distance is zero".into()))
        }
        DiaSenseVariant::Ratio => Ok(cross_apd / within),
        DiaSenseVariant::Difference => Ok(cross_apd - within),
    }
}

/// Lemma-level measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Jsd,
    Binary,
    BinaryGain,
    BinaryLoss,
    CompareClusters,
    Apd,
    ApdThresholded,
    Cos,
    Diasense,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Jsd => "jsd",
            Measure::Binary => "binary",
            Measure::BinaryGain => "binary-gain",
            Measure::BinaryLoss => "binary-loss",
            Measure::CompareClusters => "compare-clusters",
            Measure::Apd => "apd",
            Measure::ApdThresholded => "apd-thresholded",
            Measure::Cos => "cos",
            Measure::Diasense => "diasense",
        }
    }

    /// Whether the measure needs a sense clustering.
    pub fn needs_clustering(self) -> bool {
        matches!(
            self,
            Measure::Jsd | Measure::Binary | Measure::BinaryGain | Measure::BinaryLoss | Measure::CompareClusters
        )
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown measure {s:?}")))
    }
}

/// Whether larger values mean "more related" or "more changed".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Similarity,
    Distance,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Similarity => "similarity",
            Orientation::Distance => "distance",
        }
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" => Ok(Orientation::Similarity),
            "distance" => Ok(Orientation::Distance),
            _ => Err(Error::format("<predictions>", format!("unknown orientation {s:?}"))),
        }
    }
}

/// One lemma's prediction; `value` is `None` when the measure was undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub lemma: String,
    pub measure: Measure,
    pub value: Option<f64>,
    pub orientation: Orientation,
}

pub fn write_predictions(out: impl Write, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let err = |e: csv::Error| Error::format("<predictions>", e.to_string());
    w.write_record(["lemma", "measure", "value", "orientation"]).map_err(err)?;
    for p in predictions {
        let value = p.value.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        w.write_record([p.lemma.as_str(), p.measure.as_str(), &value, p.orientation.as_str()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))
}

pub fn read_predictions(input: impl Read) -> Result<Vec<Prediction>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::row("<predictions>", i + 2, e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::row("<predictions>", i + 2, "expected 4 columns"));
        }
        let value = match &rec[2] {
            "NA" => None,
            v => Some(
                v.parse()
                    .map_err(|_| Error::row("<predictions>", i + 2, format!("bad value {v:?}")))?,
            ),
        };
        out.push(Prediction {
            lemma: rec[0].to_owned(),
            measure: rec[1].parse()?,
            value,
            orientation: rec[3].parse()?,
        });
    }
    Ok(out)
}

//! Usage pairs, graded WiC scores and their ordinal discretization.
//!
//! All scores use one orientation: larger means more related. Distances
//! are converted on entry.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{usage_vector, EmbeddingStore, PoolingSpec};
use crate::error::{Error, Result};
use crate::wug::{canonical_pair, Grouping, PairType, Usage, UsagePair};

/// Enumerates usage pairs of the requested type.
///
/// With `max_pairs`, a uniform sample without replacement is drawn using
/// `seed`. The result is sorted and free of duplicates.
pub fn generate_pairs(
    usages: &[Usage],
    pair_type: PairType,
    max_pairs: Option<usize>,
    seed: u64,
) -> Vec<UsagePair> {
    let mut sorted: Vec<&Usage> = usages.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.dedup_by(|a, b| a.id == b.id);

    let mut pairs = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            let specific = PairType::of(a.grouping, b.grouping);
            let keep = match pair_type {
                PairType::All => true,
                t => t == specific,
            };
            if keep {
                pairs.push(UsagePair::new(&a.id, &b.id, pair_type));
            }
        }
    }
    pairs.sort();
    match max_pairs {
        Some(k) if k < pairs.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, pairs.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| pairs[i].clone()).collect()
        }
        _ => pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Euclidean,
    Manhattan,
}

impl DistanceMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Manhattan => "manhattan",
        }
    }
}

pub fn vector_distance(
    v1: ArrayView1<'_, f64>,
    v2: ArrayView1<'_, f64>,
    metric: DistanceMetric,
) -> Result<f64> {
    if v1.len() != v2.len() {
        return Err(Error::Shape(format!(
            "vectors of dimension {} and {}",
            v1.len(),
            v2.len()
        )));
    }
    let diff = || v1.iter().zip(v2.iter()).map(|(a, b)| a - b);
    Ok(match metric {
        DistanceMetric::Euclidean => diff().map(|d| d * d).sum::<f64>().sqrt(),
        DistanceMetric::Manhattan => diff().map(f64::abs).sum(),
        DistanceMetric::Cosine => {
            let n1 = v1.dot(&v1).sqrt();
            let n2 = v2.dot(&v2).sqrt();
            if n1 == 0.0 || n2 == 0.0 {
                return Err(Error::Degenerate("cosine distance of a zero vector".into()));
            }
            let cos = (v1.dot(&v2) / (n1 * n2)).clamp(-1.0, 1.0);
            1.0 - cos
        }
    })
}

/// Where a score came from; determines how it maps back to a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScoreSource {
    /// Computed from stored vectors with the given metric.
    EmbeddingDistance { metric: DistanceMetric },
    /// Imported from a file; `negated` when the file held distances.
    External { negated: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: UsagePair,
    /// Similarity: larger means more related.
    pub score: f64,
    pub source: ScoreSource,
}

impl PairScore {
    /// The score as a distance (smaller means more related).
    ///
    /// Cosine similarities and imported similarities map to `1 - score`;
    /// negated distances map back to `-score`.
    pub fn distance(&self) -> f64 {
        match self.source {
            ScoreSource::EmbeddingDistance {
                metric: DistanceMetric::Cosine,
            }
            | ScoreSource::External { negated: false } => 1.0 - self.score,
            _ => -self.score,
        }
    }
}

/// Scores pairs by the distance between their usage vectors.
///
/// Cosine yields `1 - cosine distance`; other metrics yield the negated
/// distance.
pub fn score_pairs_from_embeddings(
    pairs: &[UsagePair],
    store: &EmbeddingStore,
    spec: &PoolingSpec,
    metric: DistanceMetric,
) -> Result<Vec<PairScore>> {
    let mut missing: Vec<String> = pairs
        .iter()
        .flat_map(|p| [&p.id1, &p.id2])
        .filter(|id| !store.contains_key(*id))
        .cloned()
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }

    let mut cache: HashMap<&str, Array1<f64>> = HashMap::new();
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        for id in [&p.id1, &p.id2] {
            if !cache.contains_key(id.as_str()) {
                cache.insert(id, usage_vector(&store[id], spec)?);
            }
        }
        let d = vector_distance(cache[p.id1.as_str()].view(), cache[p.id2.as_str()].view(), metric)?;
        let score = match metric {
            DistanceMetric::Cosine => 1.0 - d,
            _ => -d,
        };
        out.push(PairScore {
            pair: p.clone(),
            score,
            source: ScoreSource::EmbeddingDistance { metric },
        });
    }
    Ok(out)
}

/// Scores read from an external file, plus any warnings raised while merging.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    pub scores: Vec<PairScore>,
    pub warnings: Vec<String>,
}

impl ExternalScores {
    /// Lookup by canonical pair.
    pub fn by_pair(&self) -> HashMap<(String, String), &PairScore> {
        self.scores.iter().map(|s| (s.pair.key(), s)).collect()
    }
}

pub fn read_external_scores(name: &str, input: impl Read, is_distance: bool) -> Result<ExternalScores> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(name, e.to_string()))?
        .clone();
    let col = |c: &str| {
        headers
            .iter()
            .position(|h| h.trim() == c)
            .ok_or_else(|| Error::format(name, format!("missing required column {c:?}")))
    };
    let (c1, c2, cs) = (col("identifier1")?, col("identifier2")?, col("score")?);

    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::row(name, line, e.to_string()))?;
        let raw = rec[cs].trim();
        let v: f64 = raw
            .parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| Error::row(name, line, format!("score {raw:?} is not a finite number")))?;
        acc.entry(canonical_pair(rec[c1].trim(), rec[c2].trim()))
            .or_default()
            .push(if is_distance { -v } else { v });
    }

    let mut out = ExternalScores::default();
    for ((a, b), vals) in acc {
        let score = vals.iter().sum::<f64>() / vals.len() as f64;
        if vals.len() > 1 {
            out.warnings.push(format!(
                "{name}: pair ({a}, {b}) scored {} times; using the mean {score}",
                vals.len()
            ));
        }
        out.scores.push(PairScore {
            pair: UsagePair::new(&a, &b, PairType::All),
            score,
            source: ScoreSource::External {
                negated: is_distance,
            },
        });
    }
    Ok(out)
}

/// Reads `identifier1`, `identifier2`, `score`. With `is_distance`, scores
/// are negated so that larger means more related.
pub fn load_external_scores(path: impl AsRef<Path>, is_distance: bool) -> Result<ExternalScores> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_external_scores(&path.display().to_string(), f, is_distance)
}

/// Cut points `t1 < t2 < t3` on the similarity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ThresholdSpec([f64; 3]);

impl ThresholdSpec {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Result<Self> {
        if !(t1.is_finite() && t3.is_finite() && t1 < t2 && t2 < t3) {
            return Err(Error::InvalidSpec(format!(
                "thresholds must be finite and strictly increasing, got ({t1}, {t2}, {t3})"
            )));
        }
        Ok(ThresholdSpec([t1, t2, t3]))
    }

    pub fn values(&self) -> [f64; 3] {
        self.0
    }

    /// Maps a score to 1..=4; each interval includes its lower bound.
    pub fn discretize(&self, score: f64) -> u8 {
        1 + self.0.iter().filter(|&&t| score >= t).count() as u8
    }
}

impl TryFrom<[f64; 3]> for ThresholdSpec {
    type Error = Error;

    fn try_from(t: [f64; 3]) -> Result<Self> {
        ThresholdSpec::new(t[0], t[1], t[2])
    }
}

impl From<ThresholdSpec> for [f64; 3] {
    fn from(t: ThresholdSpec) -> Self {
        t.0
    }
}

pub fn discretize(score: f64, th: &ThresholdSpec) -> u8 {
    th.discretize(score)
}

/// Restricts pairs to one specific type using the usages' groupings.
/// Pairs with an unknown usage are dropped.
pub fn pairs_of_type<'a>(
    pairs: impl IntoIterator<Item = &'a UsagePair>,
    groupings: &HashMap<&str, Grouping>,
    wanted: PairType,
) -> Vec<&'a UsagePair> {
    pairs
        .into_iter()
        .filter(|p| {
            match (groupings.get(p.id1.as_str()), groupings.get(p.id2.as_str())) {
                (Some(&a), Some(&b)) => wanted == PairType::All || PairType::of(a, b) == wanted,
                _ => false,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingRecord;
    use crate::wug::CharSpan;
    use ndarray::array;

    fn usage(id: &str, g: Grouping) -> Usage {
        Usage {
            id: id.into(),
            lemma: "w".into(),
            pos: None,
            date: None,
            grouping: g,
            context: "w".into(),
            target_span: CharSpan::new(0, 1),
            sentence_span: None,
            extra: Default::default(),
        }
    }

    #[test]
    fn pair_counts() {
        let mut us: Vec<Usage> = (0..3).map(|i| usage(&format!("o{i}"), Grouping::Earlier)).collect();
        us.extend((0..2).map(|i| usage(&format!("n{i}"), Grouping::Later)));
        assert_eq!(generate_pairs(&us, PairType::Compare, None, 0).len(), 6);
        assert_eq!(generate_pairs(&us, PairType::Earlier, None, 0).len(), 3);
        assert_eq!(generate_pairs(&us, PairType::Later, None, 0).len(), 1);
        assert_eq!(generate_pairs(&us[..4], PairType::All, None, 0).len(), 6);
        assert!(generate_pairs(&us[..1], PairType::All, None, 0).is_empty());
        assert!(generate_pairs(&us[..3], PairType::Compare, None, 0).is_empty());

        let all = generate_pairs(&us, PairType::All, None, 0);
        let sample = generate_pairs(&us, PairType::All, Some(4), 9);
        assert_eq!(sample.len(), 4);
        assert_eq!(sample, generate_pairs(&us, PairType::All, Some(4), 9));
        assert!(sample.iter().all(|p| all.contains(p)));
        assert!(sample.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn distances() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        let c = array![1.0, 1.0];
        let d = |x: &Array1<f64>, y: &Array1<f64>, m| vector_distance(x.view(), y.view(), m).unwrap();
        assert!((d(&a, &b, DistanceMetric::Cosine) - 1.0).abs() < 1e-15);
        assert!((d(&a, &b, DistanceMetric::Euclidean) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d(&a, &b, DistanceMetric::Manhattan), 2.0);
        assert!((d(&a, &c, DistanceMetric::Cosine) - 0.29289321881345254).abs() < 1e-12);
        for m in [DistanceMetric::Cosine, DistanceMetric::Euclidean, DistanceMetric::Manhattan] {
            assert!(d(&c, &c, m).abs() < 1e-15);
        }
        let z = array![0.0, 0.0];
        assert!(matches!(
            vector_distance(a.view(), z.view(), DistanceMetric::Cosine),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn embedding_scores() {
        let mut store = EmbeddingStore::new();
        for (id, v) in [("a", [1.0f32, 0.0]), ("b", [0.0, 1.0]), ("c", [2.0, 0.0])] {
            store.insert(id.into(), EmbeddingRecord::from_vec(id, (1, 1, 2), v.to_vec()).unwrap());
        }
        let pairs = vec![
            UsagePair::new("a", "c", PairType::All),
            UsagePair::new("a", "b", PairType::All),
        ];
        let spec = PoolingSpec::default();
        let s = score_pairs_from_embeddings(&pairs, &store, &spec, DistanceMetric::Cosine).unwrap();
        assert!((s[0].score - 1.0).abs() < 1e-15);
        assert!(s[1].score.abs() < 1e-15);
        let e = score_pairs_from_embeddings(&pairs, &store, &spec, DistanceMetric::Euclidean).unwrap();
        assert_eq!(e[0].score, -1.0);
        assert_eq!(e[0].distance(), 1.0);
        assert!(score_pairs_from_embeddings(&[], &store, &spec, DistanceMetric::Cosine)
            .unwrap()
            .is_empty());

        let bad = vec![UsagePair::new("a", "x", PairType::All), UsagePair::new("y", "b", PairType::All)];
        match score_pairs_from_embeddings(&bad, &store, &spec, DistanceMetric::Cosine) {
            Err(Error::MissingEmbeddings(ids)) => assert_eq!(ids, vec!["x", "y"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn external_scores() {
        let data = "identifier1\tidentifier2\tscore\nu1\tu2\t0.93\nu4\tu3\t0.5\nu3\tu4\t0.7\n";
        let s = read_external_scores("s.tsv", data.as_bytes(), false).unwrap();
        assert_eq!(s.scores.len(), 2);
        assert_eq!(s.scores[0].score, 0.93);
        assert_eq!(s.scores[1].pair.key(), ("u3".into(), "u4".into()));
        assert!((s.scores[1].score - 0.6).abs() < 1e-15);
        assert_eq!(s.warnings.len(), 1);

        let neg = read_external_scores("s.tsv", data.as_bytes(), true).unwrap();
        assert_eq!(neg.scores[0].score, -0.93);
        assert_eq!(neg.scores[0].distance(), 0.93);

        let empty = read_external_scores("s.tsv", "identifier1\tidentifier2\tscore\n".as_bytes(), false)
            .unwrap();
        assert!(empty.scores.is_empty());

        let bad = "identifier1\tidentifier2\tscore\nu1\tu2\thigh\n";
        assert!(read_external_scores("s.tsv", bad.as_bytes(), false).is_err());
    }

    #[test]
    fn thresholds() {
        let th = ThresholdSpec::new(0.2, 0.4, 0.6).unwrap();
        assert_eq!(th.discretize(0.5), 3);
        assert_eq!(th.discretize(0.4), 3);
        assert_eq!(th.discretize(0.2), 2);
        assert_eq!(th.discretize(-1e300), 1);
        assert_eq!(th.discretize(0.6), 4);
        assert!(ThresholdSpec::new(0.4, 0.4, 0.6).is_err());
        assert!(serde_json::from_str::<ThresholdSpec>("[0.5, 0.2, 0.9]").is_err());
    }
}

//! Config-driven evaluation runs.
//!
//! A run selects lemmas from a dataset, then for each lemma retrieves
//! usages, forms pairs, scores them, clusters if the measure needs it,
//! computes the prediction, and finally compares all predictions with gold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{correlation_cluster, ClusteringParams};
use crate::embed::{read_store_file, usage_vector, EmbeddingStore, PoolingSpec};
use crate::error::{Error, ErrorKind, Result};
use crate::ingest::{BinaryThresholds, Dataset, GoldLabels, SplitName, SupportedTask};
use crate::measures::{
    apd, apd_thresholded, binary_change, compare_from_clusters, cos_prototype, diasense,
    jsd_distance, sense_distribution, DiaSenseVariant, Measure, NoisePolicy, Orientation,
};
use crate::metrics::{
    adjusted_rand_index, f1_binary, krippendorff_alpha_ordinal, pearson, spearman, Correlation,
    MissingPolicy, PairedSeries,
};
use crate::wic::{
    generate_pairs, load_external_scores, score_pairs_from_embeddings, DistanceMetric, PairScore,
    ScoreSource, ThresholdSpec,
};
use crate::wug::{
    build_graph, Grouping, Judgment, PairType, SenseClustering, Usage, UsagePair, WordUsageGraph,
};

/// What a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    WicGraded,
    WicOrdinal,
    Wsi,
    LscdGraded,
    LscdBinary,
    Compare,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::WicGraded => "wic-graded",
            Task::WicOrdinal => "wic-ordinal",
            Task::Wsi => "wsi",
            Task::LscdGraded => "lscd-graded",
            Task::LscdBinary => "lscd-binary",
            Task::Compare => "compare",
        }
    }

    /// The dataset capability the task's gold labels come from.
    pub fn requires(self) -> SupportedTask {
        match self {
            Task::WicGraded | Task::WicOrdinal => SupportedTask::Wic,
            Task::Wsi => SupportedTask::Wsi,
            Task::LscdGraded => SupportedTask::LscdGraded,
            Task::LscdBinary => SupportedTask::LscdBinary,
            Task::Compare => SupportedTask::Compare,
        }
    }

    pub fn default_measure(self) -> Option<Measure> {
        match self {
            Task::LscdGraded => Some(Measure::Jsd),
            Task::LscdBinary => Some(Measure::Binary),
            Task::Compare => Some(Measure::Apd),
            _ => None,
        }
    }

    pub fn accepts(self, m: Measure) -> bool {
        use Measure::*;
        match self {
            Task::LscdGraded => matches!(m, Jsd | Apd | ApdThresholded | Cos | Diasense),
            Task::LscdBinary => matches!(m, Binary | BinaryGain | BinaryLoss),
            Task::Compare => matches!(m, Apd | CompareClusters),
            _ => false,
        }
    }

    /// Orientation of the gold labels for lemma-level tasks.
    pub fn gold_orientation(self) -> Option<Orientation> {
        match self {
            Task::LscdGraded => Some(Orientation::Distance),
            Task::Compare | Task::WicGraded => Some(Orientation::Similarity),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Orientation of a measure's values.
pub fn measure_orientation(m: Measure) -> Orientation {
    match m {
        Measure::Apd | Measure::ApdThresholded | Measure::CompareClusters => Orientation::Similarity,
        _ => Orientation::Distance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelection {
    #[default]
    All,
    Train,
    Dev,
    Test,
}

impl SplitSelection {
    pub fn split_name(self) -> Option<SplitName> {
        match self {
            SplitSelection::All => None,
            SplitSelection::Train => Some(SplitName::Train),
            SplitSelection::Dev => Some(SplitName::Dev),
            SplitSelection::Test => Some(SplitName::Test),
        }
    }

    pub fn as_str(self) -> &'static str {
        self.split_name().map_or("all", SplitName::as_str)
    }
}

impl FromStr for SplitSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown split {s:?}")))
    }
}

/// Which usages enter the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UseSource {
    /// Exactly the usages shown to annotators.
    #[default]
    GoldenUses,
    /// A seeded uniform sample of `n` usages per lemma.
    CorpusSample { n: usize },
}

/// Which usage pairs get scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairSource {
    /// The pairs annotators judged.
    #[default]
    GoldenPairs,
    Generated {
        pair_type: PairType,
        #[serde(default)]
        max_pairs: Option<usize>,
    },
}

/// Where pair scores come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scorer {
    /// Aggregated human judgments; pairs nobody rated get no score.
    #[default]
    GoldJudgments,
    Embedding {
        store: PathBuf,
        #[serde(default)]
        pooling: PoolingSpec,
        #[serde(default)]
        metric: DistanceMetric,
    },
    ExternalFile {
        path: PathBuf,
        /// The file holds distances rather than similarities.
        #[serde(default)]
        distance: bool,
    },
}

/// How the ordinal WiC task forms reliability units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Model label against the aggregated gold label (median rounded half up).
    #[default]
    AggregatedGold,
    /// Model label pooled with every individual annotator rating.
    Annotators,
}

/// One evaluation run. Unset fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub split: SplitSelection,
    pub task: Task,
    #[serde(default)]
    pub uses: UseSource,
    #[serde(default)]
    pub pairs: PairSource,
    #[serde(default)]
    pub scorer: Scorer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdSpec>,
    /// The `seed` field is ignored; per-lemma seeds derive from the run seed.
    #[serde(default)]
    pub clustering: ClusteringParams,
    /// Overrides the dataset's attestation thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_thresholds: Option<BinaryThresholds>,
    #[serde(default)]
    pub noise: NoisePolicy,
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default)]
    pub diasense: DiaSenseVariant,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// A config with every component at its default.
    pub fn new(dataset: impl Into<PathBuf>, task: Task) -> Self {
        RunConfig {
            dataset: dataset.into(),
            split: SplitSelection::All,
            task,
            uses: UseSource::default(),
            pairs: PairSource::default(),
            scorer: Scorer::default(),
            measure: None,
            thresholds: None,
            clustering: ClusteringParams::default(),
            binary_thresholds: None,
            noise: NoisePolicy::default(),
            missing: MissingPolicy::default(),
            diasense: DiaSenseVariant::default(),
            alpha_mode: AlphaMode::default(),
            seed: 0,
            out: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset);
        match &mut cfg.scorer {
            Scorer::Embedding { store, .. } => fix(store),
            Scorer::ExternalFile { path, .. } => fix(path),
            Scorer::GoldJudgments => {}
        }
        if let Some(out) = &mut cfg.out {
            fix(out);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn effective_measure(&self) -> Option<Measure> {
        self.measure.or(self.task.default_measure())
    }

    /// Hex SHA-256 of the config without its output directory, so the same
    /// run written to two places carries the same hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn needs_clustering(&self) -> bool {
        self.task == Task::Wsi || self.effective_measure().is_some_and(Measure::needs_clustering)
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.measure, self.task.default_measure()) {
            (Some(m), None) => {
                return bad(format!("task {} takes no measure, got {m}", self.task));
            }
            (Some(m), Some(_)) if !self.task.accepts(m) => {
                return bad(format!("task {} does not accept measure {m}", self.task));
            }
            _ => {}
        }
        let measure = self.effective_measure();
        if self.thresholds.is_none() {
            if self.task == Task::WicOrdinal {
                return bad("wic-ordinal needs thresholds".into());
            }
            if measure == Some(Measure::ApdThresholded) {
                return bad("apd-thresholded needs thresholds".into());
            }
            if self.needs_clustering() && matches!(self.scorer, Scorer::Embedding { .. }) {
                return bad("clustering embedding scores needs thresholds to map them onto the judgment scale".into());
            }
        }
        if measure == Some(Measure::Cos) && !matches!(self.scorer, Scorer::Embedding { .. }) {
            return bad("measure cos needs an embedding scorer".into());
        }
        if let UseSource::CorpusSample { n: 0 } = self.uses {
            return bad("corpus-sample needs n >= 1".into());
        }
        if let Some(b) = self.binary_thresholds {
            if b.min_attested == 0 {
                return bad("binary min_attested must be at least 1".into());
            }
        }
        self.clustering
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks against the loaded dataset; run before any computation.
    pub fn validate_for(&self, ds: &Dataset, lemmas: &[&str]) -> Result<()> {
        if !ds.supports(self.task.requires()) {
            return Err(Error::Config(format!(
                "dataset {} has no gold labels for task {}",
                ds.manifest.name, self.task
            )));
        }
        let label: Option<fn(&GoldLabels) -> bool> = match self.effective_measure() {
            Some(Measure::BinaryGain) => Some(|g| g.change_binary_gain.is_some()),
            Some(Measure::BinaryLoss) => Some(|g| g.change_binary_loss.is_some()),
            _ => None,
        };
        if let Some(has) = label {
            if let Some(l) = lemmas.iter().find(|l| !ds.gold.get(**l).is_some_and(has)) {
                return Err(Error::Config(format!("lemma {l} lacks a gold label for this measure")));
            }
        }
        Ok(())
    }
}

/// Deterministic sub-seed for one lemma and pipeline stage.
pub fn derive_seed(seed: u64, lemma: &str, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(lemma.as_bytes());
    h.update([0]);
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Uniform sample of `n` usages without replacement, in id order.
/// Returns every usage when `n` is at least their number.
pub fn sample_uses(usages: &[Usage], n: usize, seed: u64) -> Vec<Usage> {
    use rand::SeedableRng;
    let mut sorted: Vec<&Usage> = usages.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if n >= sorted.len() {
        return sorted.into_iter().cloned().collect();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, sorted.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sorted[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub dataset_version: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    pub split: SplitSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_orientation: Option<Orientation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_orientation: Option<Orientation>,
    pub lemmas: Vec<String>,
}

/// One prediction: lemma-level when `pair` is `None`, otherwise one pair.
/// For WSI the value is the lemma's ARI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub lemma: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<UsagePair>,
    pub value: Option<f64>,
    pub gold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub value: Option<f64>,
    pub coverage: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub predictions: Vec<PredictionRow>,
    pub metrics: Vec<MetricResult>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub timing: Timing,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

struct LemmaOutcome {
    rows: Vec<PredictionRow>,
    units: Vec<(PairType, Vec<Option<u8>>)>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    ds: &'a Dataset,
    external: Option<HashMap<(String, String), &'a PairScore>>,
    store: Option<&'a EmbeddingStore>,
}

fn soft_error(e: &Error) -> bool {
    matches!(e, Error::Degenerate(_) | Error::Unassigned(_))
}

fn key(lemma: &str, p: &UsagePair) -> String {
    format!("{lemma}\t{}\t{}", p.id1, p.id2)
}

impl Runner<'_> {
    fn lemma(&self, lemma: &str) -> Result<LemmaOutcome> {
        let data = &self.ds.lemmas[lemma];
        let usages = match self.cfg.uses {
            UseSource::GoldenUses => data.usages.clone(),
            UseSource::CorpusSample { n } => {
                sample_uses(&data.usages, n, derive_seed(self.cfg.seed, lemma, "uses"))
            }
        };
        let groupings: HashMap<&str, Grouping> =
            usages.iter().map(|u| (u.id.as_str(), u.grouping)).collect();
        let judgments: Vec<Judgment> = data
            .judgments
            .iter()
            .filter(|j| groupings.contains_key(j.id1.as_str()) && groupings.contains_key(j.id2.as_str()))
            .cloned()
            .collect();
        let gold_graph = build_graph(&usages, &judgments, self.ds.manifest.aggregation)?;
        let typed = |a: &str, b: &str| UsagePair::new(a, b, PairType::of(groupings[a], groupings[b]));

        let pairs: Vec<UsagePair> = match self.cfg.pairs {
            PairSource::GoldenPairs => judgments
                .iter()
                .filter(|j| j.id1 != j.id2)
                .map(|j| typed(&j.id1, &j.id2))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            PairSource::Generated { pair_type, max_pairs } => generate_pairs(
                &usages,
                pair_type,
                max_pairs,
                derive_seed(self.cfg.seed, lemma, "pairs"),
            )
            .iter()
            .map(|p| typed(&p.id1, &p.id2))
            .collect(),
        };
        let scores = self.score(&pairs, &gold_graph)?;

        match self.cfg.task {
            Task::WicGraded | Task::WicOrdinal => Ok(self.wic(lemma, &pairs, &scores, &gold_graph)),
            Task::Wsi => {
                let gold = data.clusters.as_ref().expect("validated: dataset has clusters");
                let (value, note) = match self.wsi(lemma, &usages, &scores, gold) {
                    Ok(v) => (Some(v), None),
                    Err(e) if soft_error(&e) => (None, Some(e.to_string())),
                    Err(e) => return Err(e),
                };
                Ok(LemmaOutcome {
                    rows: vec![PredictionRow {
                        lemma: lemma.to_owned(),
                        pair: None,
                        value,
                        gold: None,
                        note,
                    }],
                    units: Vec::new(),
                })
            }
            Task::LscdGraded | Task::LscdBinary | Task::Compare => {
                let measure = self.cfg.effective_measure().expect("lemma-level task has a measure");
                let (value, note) = match self.measure(lemma, measure, &usages, &scores) {
                    Ok(v) => (Some(v), None),
                    Err(e) if soft_error(&e) => (None, Some(e.to_string())),
                    Err(e) => return Err(e),
                };
                let gold = self.ds.gold.get(lemma);
                let gold = match (self.cfg.task, measure) {
                    (Task::LscdGraded, _) => gold.and_then(|g| g.change_graded),
                    (Task::Compare, _) => gold.and_then(|g| g.compare),
                    (_, Measure::BinaryGain) => gold.and_then(|g| g.change_binary_gain).map(f64::from),
                    (_, Measure::BinaryLoss) => gold.and_then(|g| g.change_binary_loss).map(f64::from),
                    _ => gold.and_then(|g| g.change_binary).map(f64::from),
                };
                Ok(LemmaOutcome {
                    rows: vec![PredictionRow {
                        lemma: lemma.to_owned(),
                        pair: None,
                        value,
                        gold,
                        note,
                    }],
                    units: Vec::new(),
                })
            }
        }
    }

    fn score(&self, pairs: &[UsagePair], gold_graph: &WordUsageGraph) -> Result<Vec<PairScore>> {
        match &self.cfg.scorer {
            Scorer::GoldJudgments => Ok(pairs
                .iter()
                .filter_map(|p| {
                    gold_graph.edge(&p.id1, &p.id2).map(|e| PairScore {
                        pair: p.clone(),
                        score: e.weight,
                        source: ScoreSource::External { negated: false },
                    })
                })
                .collect()),
            Scorer::ExternalFile { .. } => {
                let table = self.external.as_ref().expect("external scores loaded");
                let mut missing = Vec::new();
                let mut out = Vec::with_capacity(pairs.len());
                for p in pairs {
                    match table.get(&p.key()) {
                        Some(s) => out.push(PairScore {
                            pair: p.clone(),
                            score: s.score,
                            source: s.source,
                        }),
                        None => missing.push(format!("{} {}", p.id1, p.id2)),
                    }
                }
                if missing.is_empty() {
                    Ok(out)
                } else {
                    Err(Error::MissingScores(missing))
                }
            }
            Scorer::Embedding { pooling, metric, .. } => {
                let store = self.store.expect("store loaded");
                score_pairs_from_embeddings(pairs, store, pooling, *metric)
            }
        }
    }

    fn wic(
        &self,
        lemma: &str,
        pairs: &[UsagePair],
        scores: &[PairScore],
        gold_graph: &WordUsageGraph,
    ) -> LemmaOutcome {
        let by_pair: HashMap<(String, String), f64> =
            scores.iter().map(|s| (s.pair.key(), s.score)).collect();
        let ordinal = self.cfg.task == Task::WicOrdinal;
        let th = self.cfg.thresholds;
        let mut rows = Vec::with_capacity(pairs.len());
        let mut units = Vec::new();
        for p in pairs {
            let edge = gold_graph.edge(&p.id1, &p.id2);
            let score = by_pair.get(&p.key()).copied();
            let value = match (ordinal, score) {
                (true, Some(s)) => Some(f64::from(th.expect("validated").discretize(s))),
                (_, s) => s,
            };
            if let (true, Some(e), Some(v)) = (ordinal, edge, value) {
                let model = Some(v as u8);
                let unit = match self.cfg.alpha_mode {
                    AlphaMode::AggregatedGold => vec![Some(round_half_up(e.weight)), model],
                    AlphaMode::Annotators => e
                        .judgments
                        .iter()
                        .map(|&r| Some(r))
                        .chain(std::iter::once(model))
                        .collect(),
                };
                units.push((p.pair_type, unit));
            }
            rows.push(PredictionRow {
                lemma: lemma.to_owned(),
                pair: Some(p.clone()),
                value,
                gold: edge.map(|e| e.weight),
                note: None,
            });
        }
        LemmaOutcome { rows, units }
    }

    /// Edge weights for clustering on the judgment scale.
    fn cluster_graph(&self, usages: &[Usage], scores: &[PairScore]) -> Result<WordUsageGraph> {
        let weight = |s: &PairScore| match (&self.cfg.scorer, self.cfg.thresholds) {
            (Scorer::GoldJudgments, _) | (_, None) => s.score,
            (_, Some(t)) => f64::from(t.discretize(s.score)),
        };
        WordUsageGraph::from_scores(
            usages,
            scores
                .iter()
                .map(|s| (s.pair.id1.as_str(), s.pair.id2.as_str(), weight(s))),
        )
    }

    fn cluster(&self, lemma: &str, usages: &[Usage], scores: &[PairScore]) -> Result<SenseClustering> {
        let graph = self.cluster_graph(usages, scores)?;
        if graph.is_empty() {
            return Err(Error::Degenerate("no usages to cluster".into()));
        }
        let params = ClusteringParams {
            seed: derive_seed(self.cfg.seed, lemma, "clustering"),
            ..self.cfg.clustering.clone()
        };
        correlation_cluster(&graph, &params)
    }

    fn wsi(
        &self,
        lemma: &str,
        usages: &[Usage],
        scores: &[PairScore],
        gold: &SenseClustering,
    ) -> Result<f64> {
        let predicted = self.cluster(lemma, usages, scores)?;
        // evaluate on usages present in both the run and the gold clustering
        let gold_part: SenseClustering = gold
            .iter()
            .filter(|(id, _)| predicted.label(id).is_some())
            .map(|(id, l)| (id.to_owned(), l))
            .collect();
        let pred_part: SenseClustering = predicted
            .iter()
            .filter(|(id, _)| gold_part.label(id).is_some())
            .map(|(id, l)| (id.to_owned(), l))
            .collect();
        if gold_part.is_empty() {
            return Err(Error::Degenerate("no clustered usage has a gold cluster".into()));
        }
        adjusted_rand_index(&gold_part, &pred_part, self.cfg.noise)
    }

    fn measure(&self, lemma: &str, m: Measure, usages: &[Usage], scores: &[PairScore]) -> Result<f64> {
        let ids = |g: Grouping| -> Vec<&str> {
            usages
                .iter()
                .filter(|u| u.grouping == g)
                .map(|u| u.id.as_str())
                .collect()
        };
        let of_type = |t: PairType| scores.iter().filter(move |s| s.pair.pair_type == t);
        let compare: Vec<f64> = of_type(PairType::Compare).map(|s| s.score).collect();
        let noise = self.cfg.noise;
        match m {
            Measure::Jsd => {
                let c = self.cluster(lemma, usages, scores)?;
                let p = sense_distribution(&c, &ids(Grouping::Earlier), noise)?;
                let q = sense_distribution(&c, &ids(Grouping::Later), noise)?;
                Ok(jsd_distance(&p, &q))
            }
            Measure::Binary | Measure::BinaryGain | Measure::BinaryLoss => {
                let c = self.cluster(lemma, usages, scores)?;
                let tagged: Vec<(&str, Grouping)> =
                    usages.iter().map(|u| (u.id.as_str(), u.grouping)).collect();
                let th = self.cfg.binary_thresholds.unwrap_or(self.ds.manifest.binary);
                let b = binary_change(&c, &tagged, th, noise)?;
                let flag = match m {
                    Measure::BinaryGain => b.gain,
                    Measure::BinaryLoss => b.loss,
                    _ => b.binary,
                };
                Ok(if flag { 1.0 } else { 0.0 })
            }
            Measure::CompareClusters => {
                let c = self.cluster(lemma, usages, scores)?;
                let pairs: Vec<UsagePair> = of_type(PairType::Compare).map(|s| s.pair.clone()).collect();
                compare_from_clusters(&c, &pairs, noise)
            }
            Measure::Apd => apd(&compare),
            Measure::ApdThresholded => {
                apd_thresholded(&compare, self.cfg.thresholds.as_ref().expect("validated"))
            }
            Measure::Cos => {
                let Scorer::Embedding { pooling, metric, .. } = &self.cfg.scorer else {
                    unreachable!("validated: cos needs embeddings")
                };
                let vectors = |g: Grouping| self.vectors(&ids(g), pooling);
                cos_prototype(&vectors(Grouping::Earlier)?, &vectors(Grouping::Later)?, *metric)
            }
            Measure::Diasense => {
                let dist = |t: PairType| of_type(t).map(PairScore::distance).collect::<Vec<f64>>();
                diasense(
                    &dist(PairType::Compare),
                    &dist(PairType::Earlier),
                    &dist(PairType::Later),
                    self.cfg.diasense,
                )
            }
        }
    }

    fn vectors(&self, ids: &[&str], spec: &PoolingSpec) -> Result<Vec<ndarray::Array1<f64>>> {
        let store = self.store.expect("store loaded");
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !store.contains_key(**id))
            .map(|id| (*id).to_owned())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        ids.iter().map(|id| usage_vector(&store[*id], spec)).collect()
    }
}

fn round_half_up(w: f64) -> u8 {
    (w + 0.5).floor().clamp(1.0, 4.0) as u8
}

/// Turns a metric failure into a report note when the missing policy
/// allows partial results.
fn settle(
    name: &str,
    result: Result<(f64, f64, usize)>,
    coverage: f64,
    policy: MissingPolicy,
) -> Result<MetricResult> {
    match result {
        Ok((value, coverage, n)) => Ok(MetricResult {
            name: name.to_owned(),
            value: Some(value),
            coverage,
            n,
            note: None,
        }),
        Err(e) if policy == MissingPolicy::Error => Err(e),
        Err(e) => Ok(MetricResult {
            name: name.to_owned(),
            value: None,
            coverage,
            n: 0,
            note: Some(e.to_string()),
        }),
    }
}

fn corr(c: Result<Correlation>) -> Result<(f64, f64, usize)> {
    c.map(|c| (c.value, c.coverage, c.n))
}

fn correlations(
    prefix: &str,
    gold: &BTreeMap<String, f64>,
    pred: &BTreeMap<String, f64>,
    policy: MissingPolicy,
) -> Result<Vec<MetricResult>> {
    let series = PairedSeries::align(gold, pred, policy)?;
    let cov = series.coverage();
    Ok(vec![
        settle(&format!("{prefix}spearman"), corr(spearman(&series)), cov, policy)?,
        settle(&format!("{prefix}pearson"), corr(pearson(&series)), cov, policy)?,
    ])
}

fn collect_maps(rows: &[PredictionRow], flip: bool) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let mut gold = BTreeMap::new();
    let mut pred = BTreeMap::new();
    for r in rows {
        let k = match &r.pair {
            Some(p) => key(&r.lemma, p),
            None => r.lemma.clone(),
        };
        if let Some(g) = r.gold {
            gold.insert(k.clone(), g);
        }
        if let Some(v) = r.value {
            pred.insert(k, if flip { -v } else { v });
        }
    }
    (gold, pred)
}

const BREAKDOWN: [PairType; 3] = [PairType::Compare, PairType::Earlier, PairType::Later];

fn evaluate(cfg: &RunConfig, rows: &[PredictionRow], units: &[(PairType, Vec<Option<u8>>)]) -> Result<Vec<MetricResult>> {
    let policy = cfg.missing;
    match cfg.task {
        Task::WicGraded => {
            let (gold, pred) = collect_maps(rows, false);
            let mut out = correlations("", &gold, &pred, policy)?;
            for t in BREAKDOWN {
                let subset: Vec<PredictionRow> = rows
                    .iter()
                    .filter(|r| r.pair.as_ref().is_some_and(|p| p.pair_type == t))
                    .cloned()
                    .collect();
                let (g, p) = collect_maps(&subset, false);
                if g.is_empty() {
                    continue;
                }
                let prefix = format!("{}-", t.as_str().to_ascii_lowercase());
                // breakdowns are supplementary and never fail the run
                out.extend(correlations(&prefix, &g, &p, MissingPolicy::DropWithCoverage)?);
            }
            Ok(out)
        }
        Task::WicOrdinal => {
            let gold_items = rows.iter().filter(|r| r.gold.is_some()).count();
            let missing: Vec<String> = rows
                .iter()
                .filter(|r| r.gold.is_some() && r.value.is_none())
                .filter_map(|r| r.pair.as_ref().map(|p| key(&r.lemma, p)))
                .collect();
            if !missing.is_empty() && policy == MissingPolicy::Error {
                return Err(Error::MissingPredictions(missing));
            }
            let alpha = |us: Vec<Vec<Option<u8>>>| -> Result<(f64, f64, usize)> {
                let n = us.len();
                let cov = if gold_items == 0 { 0.0 } else { n as f64 / gold_items as f64 };
                krippendorff_alpha_ordinal(&us).map(|a| (a, cov, n))
            };
            let cov = if gold_items == 0 { 0.0 } else { units.len() as f64 / gold_items as f64 };
            let mut out = vec![settle(
                "krippendorff-alpha",
                alpha(units.iter().map(|(_, u)| u.clone()).collect()),
                cov,
                policy,
            )?];
            for t in BREAKDOWN {
                let us: Vec<Vec<Option<u8>>> =
                    units.iter().filter(|(pt, _)| *pt == t).map(|(_, u)| u.clone()).collect();
                if us.is_empty() {
                    continue;
                }
                let name = format!("{}-krippendorff-alpha", t.as_str().to_ascii_lowercase());
                out.push(settle(&name, alpha(us), cov, MissingPolicy::DropWithCoverage)?);
            }
            Ok(out)
        }
        Task::Wsi => {
            let missing: Vec<String> = rows
                .iter()
                .filter(|r| r.value.is_none())
                .map(|r| r.lemma.clone())
                .collect();
            if !missing.is_empty() && policy == MissingPolicy::Error {
                return Err(Error::MissingPredictions(missing));
            }
            let values: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
            let cov = if rows.is_empty() { 0.0 } else { values.len() as f64 / rows.len() as f64 };
            let mean = if values.is_empty() {
                Err(Error::UndefinedMetric("no lemma has an ARI".into()))
            } else {
                Ok((values.iter().sum::<f64>() / values.len() as f64, cov, values.len()))
            };
            Ok(vec![settle("ari-mean", mean, cov, policy)?])
        }
        Task::LscdGraded | Task::Compare => {
            let measure = cfg.effective_measure().expect("lemma-level task has a measure");
            let flip = Some(measure_orientation(measure)) != cfg.task.gold_orientation();
            let (gold, pred) = collect_maps(rows, flip);
            correlations("", &gold, &pred, policy)
        }
        Task::LscdBinary => {
            let (gold, pred) = collect_maps(rows, false);
            let series = PairedSeries::align(&gold, &pred, policy)?;
            let cov = series.coverage();
            let as_bool = |v: &[f64]| v.iter().map(|&x| x >= 0.5).collect::<Vec<bool>>();
            match f1_binary(&as_bool(&series.gold), &as_bool(&series.pred)) {
                Ok(r) => {
                    let note = (!r.undefined_classes.is_empty()).then(|| {
                        let cls: Vec<String> = r.undefined_classes.iter().map(u8::to_string).collect();
                        format!("class {} never occurs; its F1 is set to 0", cls.join(", "))
                    });
                    let m = |name: &str, value: f64, note: Option<String>| MetricResult {
                        name: name.to_owned(),
                        value: Some(value),
                        coverage: cov,
                        n: series.len(),
                        note,
                    };
                    Ok(vec![
                        m("f1", r.f1_positive, None),
                        m("f1-macro", r.macro_f1, note),
                        m("precision", r.precision, None),
                        m("recall", r.recall, None),
                    ])
                }
                Err(e) => Ok(vec![settle("f1", Err(e), cov, policy)?]),
            }
        }
    }
}

/// Executes a run and returns its report without writing files.
pub fn run(cfg: &RunConfig) -> Result<EvalReport> {
    let start = Instant::now();
    cfg.validate()?;
    let ds = Dataset::load(&cfg.dataset)?;
    let lemmas = ds.select(cfg.split.split_name());
    cfg.validate_for(&ds, &lemmas)?;

    let mut warnings = Vec::new();
    let external = match &cfg.scorer {
        Scorer::ExternalFile { path, distance } => {
            let e = load_external_scores(path, *distance)?;
            warnings.extend(e.warnings.iter().cloned());
            Some(e)
        }
        _ => None,
    };
    let store = match &cfg.scorer {
        Scorer::Embedding { store, .. } => Some(read_store_file(store)?),
        _ => None,
    };
    let runner = Runner {
        cfg,
        ds: &ds,
        external: external.as_ref().map(|e| e.by_pair()),
        store: store.as_ref(),
    };

    let outcomes: Vec<LemmaOutcome> = lemmas
        .par_iter()
        .map(|l| runner.lemma(l))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut units = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        units.extend(o.units);
    }
    for r in &rows {
        if let Some(n) = &r.note {
            warnings.push(format!("{}: prediction missing: {n}", r.lemma));
        }
    }
    let metrics = evaluate(cfg, &rows, &units)?;

    let measure = cfg.effective_measure();
    let prediction_orientation = match cfg.task {
        Task::WicGraded => Some(Orientation::Similarity),
        _ => measure.map(measure_orientation),
    };
    Ok(EvalReport {
        metadata: RunMetadata {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            dataset: ds.manifest.name.clone(),
            dataset_version: ds.manifest.version.clone(),
            task: cfg.task,
            measure,
            split: cfg.split,
            prediction_orientation,
            gold_orientation: cfg.task.gold_orientation(),
            lemmas: lemmas.iter().map(|l| (*l).to_owned()).collect(),
        },
        predictions: rows,
        metrics,
        warnings,
        timing: Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// CLI exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::UndefinedMetric => 4,
        ErrorKind::Computation => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wug::CharSpan;

    fn usage(id: &str) -> Usage {
        Usage {
            id: id.into(),
            lemma: "w".into(),
            pos: None,
            date: None,
            grouping: Grouping::Earlier,
            context: "w".into(),
            target_span: CharSpan::new(0, 1),
            sentence_span: None,
            extra: Default::default(),
        }
    }

    #[test]
    fn sampling() {
        let us: Vec<Usage> = (0..100).map(|i| usage(&format!("u{i:03}"))).collect();
        assert_eq!(sample_uses(&us, 100, 1), us);
        assert_eq!(sample_uses(&us, 500, 1).len(), 100);
        assert_eq!(sample_uses(&us, 1, 7), sample_uses(&us, 1, 7));
        let ids = |s: Vec<Usage>| s.into_iter().map(|u| u.id).collect::<BTreeSet<_>>();
        let a = ids(sample_uses(&us, 50, 1));
        let b = ids(sample_uses(&us, 50, 2));
        assert_eq!(a.len(), 50);
        assert_ne!(a, b);
    }

    #[test]
    fn task_measure_compatibility() {
        let mut c = RunConfig::new("x", Task::Compare);
        assert!(c.validate().is_ok());
        c.measure = Some(Measure::Jsd);
        assert_eq!(c.validate().unwrap_err().kind(), ErrorKind::Config);
        c.measure = Some(Measure::CompareClusters);
        assert!(c.validate().is_ok());

        let mut w = RunConfig::new("x", Task::Wsi);
        w.measure = Some(Measure::Apd);
        assert!(w.validate().is_err());

        let o = RunConfig::new("x", Task::WicOrdinal);
        assert!(o.validate().is_err());

        let mut g = RunConfig::new("x", Task::LscdGraded);
        g.measure = Some(Measure::Cos);
        assert!(g.validate().is_err());
    }

    #[test]
    fn config_json() {
        let c = RunConfig::from_json(
            r#"{"dataset": "d/manifest.json", "task": "lscd-graded", "measure": "apd",
                "scorer": {"kind": "external-file", "path": "s.tsv"},
                "pairs": {"kind": "generated", "pair_type": "COMPARE", "max_pairs": 10},
                "thresholds": [0.2, 0.4, 0.6], "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(c.measure, Some(Measure::Apd));
        assert_eq!(
            c.pairs,
            PairSource::Generated {
                pair_type: PairType::Compare,
                max_pairs: Some(10)
            }
        );
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_json(r#"{"dataset": "d", "task": "lscd-graded", "typo": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": "d", "task": "nope"}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let mut a = RunConfig::new("x", Task::Wsi);
        let h = a.hash();
        a.out = Some("somewhere".into());
        assert_eq!(a.hash(), h);
        a.seed = 1;
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn seeds_differ_by_lemma_and_stage() {
        assert_ne!(derive_seed(1, "a", "uses"), derive_seed(1, "b", "uses"));
        assert_ne!(derive_seed(1, "a", "uses"), derive_seed(1, "a", "pairs"));
        assert_eq!(derive_seed(1, "a", "uses"), derive_seed(1, "a", "uses"));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(3.0), 3);
        assert_eq!(round_half_up(1.4), 1);
    }
}

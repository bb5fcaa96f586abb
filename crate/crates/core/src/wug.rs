//! Usages, judgments and Word Usage Graphs.
//!
//! A Word Usage Graph has one node per usage of a lemma and one edge per
//! judged usage pair. Edge weights aggregate the annotators' ratings on the
//! four-point relatedness scale (1 = unrelated, 4 = identical meaning).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time period a usage was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Grouping {
    Earlier,
    Later,
}

impl Grouping {
    pub fn as_u8(self) -> u8 {
        match self {
            Grouping::Earlier => 1,
            Grouping::Later => 2,
        }
    }
}

impl TryFrom<u8> for Grouping {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            1 => Ok(Grouping::Earlier),
            2 => Ok(Grouping::Later),
            other => Err(format!(
                "grouping {other} is not supported; split multi-period data into period pairs (1, 2)"
            )),
        }
    }
}

impl From<Grouping> for u8 {
    fn from(g: Grouping) -> u8 {
        g.as_u8()
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Half-open `[start, end)` interval of character (not byte) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    /// Checks `start < end <= len`.
    pub fn fits(&self, len: usize) -> bool {
        self.start < self.end && self.end <= len
    }

    /// Parses the `start:end` notation used in usage files.
    pub fn parse(s: &str) -> Option<CharSpan> {
        let (a, b) = s.trim().split_once(':')?;
        Some(CharSpan::new(a.parse().ok()?, b.parse().ok()?))
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// One attested occurrence of a target word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub id: String,
    pub lemma: String,
    pub pos: Option<String>,
    pub date: Option<String>,
    pub grouping: Grouping,
    pub context: String,
    pub target_span: CharSpan,
    pub sentence_span: Option<CharSpan>,
    /// Columns of the source file this toolkit does not interpret.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl Usage {
    /// The target word as it appears in the context.
    pub fn target(&self) -> String {
        self.context
            .chars()
            .skip(self.target_span.start)
            .take(self.target_span.end - self.target_span.start)
            .collect()
    }
}

/// A rating on the four-point relatedness scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Ordinal(u8);

impl Ordinal {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 4;

    pub fn new(value: u8) -> Option<Ordinal> {
        (Self::MIN..=Self::MAX).contains(&value).then_some(Ordinal(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Ordinal {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        Ordinal::new(value).ok_or_else(|| format!("rating {value} outside 1..=4"))
    }
}

impl From<Ordinal> for u8 {
    fn from(o: Ordinal) -> u8 {
        o.0
    }
}

/// Returns the pair in canonical (lexicographically ascending) order.
pub fn canonical_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

/// One annotator's rating of a usage pair. `rating == None` means the
/// annotator could not decide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub id1: String,
    pub id2: String,
    pub annotator: String,
    pub rating: Option<Ordinal>,
}

impl Judgment {
    pub fn new(id1: &str, id2: &str, annotator: &str, rating: Option<Ordinal>) -> Self {
        let (id1, id2) = canonical_pair(id1, id2);
        Judgment {
            id1,
            id2,
            annotator: annotator.to_owned(),
            rating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PairType {
    /// One usage from each period.
    Compare,
    /// Both usages from the earlier period.
    Earlier,
    /// Both usages from the later period.
    Later,
    /// Any pair.
    All,
}

impl PairType {
    /// The specific type of a pair with the given groupings.
    pub fn of(g1: Grouping, g2: Grouping) -> PairType {
        match (g1, g2) {
            (Grouping::Earlier, Grouping::Earlier) => PairType::Earlier,
            (Grouping::Later, Grouping::Later) => PairType::Later,
            _ => PairType::Compare,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairType::Compare => "COMPARE",
            PairType::Earlier => "EARLIER",
            PairType::Later => "LATER",
            PairType::All => "ALL",
        }
    }
}

impl std::str::FromStr for PairType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "COMPARE" => Ok(PairType::Compare),
            "EARLIER" => Ok(PairType::Earlier),
            "LATER" => Ok(PairType::Later),
            "ALL" => Ok(PairType::All),
            _ => Err(format!("unknown pair type {s:?}")),
        }
    }
}

/// Two usage ids in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UsagePair {
    pub id1: String,
    pub id2: String,
    pub pair_type: PairType,
}

impl UsagePair {
    pub fn new(a: &str, b: &str, pair_type: PairType) -> Self {
        let (id1, id2) = canonical_pair(a, b);
        UsagePair { id1, id2, pair_type }
    }

    pub fn key(&self) -> (String, String) {
        (self.id1.clone(), self.id2.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

/// Aggregates the non-missing ratings of one pair.
pub fn edge_weight(ratings: &[Option<Ordinal>], method: Aggregation) -> Result<f64> {
    let mut values: Vec<u8> = ratings.iter().flatten().map(|r| r.get()).collect();
    if values.is_empty() {
        return Err(Error::NoValidJudgments);
    }
    values.sort_unstable();
    Ok(aggregate_sorted(&values, method))
}

fn aggregate_sorted(sorted: &[u8], method: Aggregation) -> f64 {
    let n = sorted.len();
    match method {
        Aggregation::Mean => sorted.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64,
        Aggregation::Median if n % 2 == 1 => f64::from(sorted[n / 2]),
        Aggregation::Median => (f64::from(sorted[n / 2 - 1]) + f64::from(sorted[n / 2])) / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeData {
    pub weight: f64,
    /// Non-missing ratings in ascending order; empty for model-scored edges.
    pub judgments: Vec<u8>,
}

/// Usages of one lemma as nodes, judged or scored pairs as weighted edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordUsageGraph {
    pub lemma: String,
    nodes: BTreeMap<String, Usage>,
    edges: BTreeMap<(String, String), EdgeData>,
}

impl WordUsageGraph {
    /// An edgeless graph over `usages`.
    pub fn with_nodes(usages: &[Usage]) -> Result<Self> {
        let lemmas: BTreeSet<&str> = usages.iter().map(|u| u.lemma.as_str()).collect();
        if lemmas.len() > 1 {
            return Err(Error::MixedLemmas(lemmas.into_iter().map(String::from).collect()));
        }
        let mut nodes = BTreeMap::new();
        for u in usages {
            if nodes.insert(u.id.clone(), u.clone()).is_some() {
                return Err(Error::DuplicateUsage(u.id.clone()));
            }
        }
        Ok(WordUsageGraph {
            lemma: lemmas.into_iter().next().unwrap_or_default().to_owned(),
            nodes,
            edges: BTreeMap::new(),
        })
    }

    /// Builds a graph from model scores instead of human judgments.
    /// Later duplicates of a pair overwrite earlier ones.
    pub fn from_scores<'a>(
        usages: &[Usage],
        scores: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    ) -> Result<Self> {
        let mut g = Self::with_nodes(usages)?;
        let mut unknown = BTreeSet::new();
        for (a, b, w) in scores {
            for id in [a, b] {
                if !g.nodes.contains_key(id) {
                    unknown.insert(id.to_owned());
                }
            }
            if a != b {
                g.edges.insert(
                    canonical_pair(a, b),
                    EdgeData {
                        weight: w,
                        judgments: Vec::new(),
                    },
                );
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownUsages(unknown.into_iter().collect()));
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in ascending order.
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn usages(&self) -> impl Iterator<Item = &Usage> {
        self.nodes.values()
    }

    pub fn usage(&self, id: &str) -> Option<&Usage> {
        self.nodes.get(id)
    }

    /// Edges as `(id1, id2, data)` with `id1 < id2`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &EdgeData)> {
        self.edges
            .iter()
            .map(|((a, b), e)| (a.as_str(), b.as_str(), e))
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&EdgeData> {
        self.edges.get(&canonical_pair(a, b))
    }

    /// Keeps only the usages of one period and the edges between them.
    pub fn subgraph_by_grouping(&self, grouping: Grouping) -> WordUsageGraph {
        let nodes: BTreeMap<_, _> = self
            .nodes
            .iter()
            .filter(|(_, u)| u.grouping == grouping)
            .map(|(k, u)| (k.clone(), u.clone()))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|((a, b), _)| nodes.contains_key(a) && nodes.contains_key(b))
            .map(|(k, e)| (k.clone(), e.clone()))
            .collect();
        WordUsageGraph {
            lemma: self.lemma.clone(),
            nodes,
            edges,
        }
    }
}

/// Builds the graph of one lemma from its usages and human judgments.
///
/// Every judged pair with at least one non-missing rating becomes an edge
/// whose weight is `aggregation` over those ratings.
pub fn build_graph(
    usages: &[Usage],
    judgments: &[Judgment],
    aggregation: Aggregation,
) -> Result<WordUsageGraph> {
    let mut g = WordUsageGraph::with_nodes(usages)?;

    let unknown: BTreeSet<String> = judgments
        .iter()
        .flat_map(|j| [&j.id1, &j.id2])
        .filter(|id| !g.nodes.contains_key(*id))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownUsages(unknown.into_iter().collect()));
    }

    let mut ratings: BTreeMap<(String, String), Vec<u8>> = BTreeMap::new();
    for j in judgments {
        if j.id1 == j.id2 {
            continue;
        }
        let entry = ratings.entry(canonical_pair(&j.id1, &j.id2)).or_default();
        if let Some(r) = j.rating {
            entry.push(r.get());
        }
    }
    for (key, mut values) in ratings {
        if values.is_empty() {
            continue;
        }
        values.sort_unstable();
        let weight = aggregate_sorted(&values, aggregation);
        g.edges.insert(
            key,
            EdgeData {
                weight,
                judgments: values,
            },
        );
    }
    Ok(g)
}

/// Label used for usages that belong to no sense cluster.
pub const NOISE: i64 = -1;

/// Hard partition of usages into sense clusters.
///
/// Labels are arbitrary integers; [`NOISE`] marks unclustered usages.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SenseClustering {
    assignment: BTreeMap<String, i64>,
}

impl SenseClustering {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns `id`, failing if it already has a label.
    pub fn insert(&mut self, id: &str, label: i64) -> Result<()> {
        if self.assignment.insert(id.to_owned(), label).is_some() {
            return Err(Error::DuplicateUsage(id.to_owned()));
        }
        Ok(())
    }

    pub fn label(&self, id: &str) -> Option<i64> {
        self.assignment.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// `(id, label)` in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.assignment.keys().map(String::as_str)
    }

    /// Distinct labels, noise included if present.
    pub fn labels(&self) -> BTreeSet<i64> {
        self.assignment.values().copied().collect()
    }

    /// Number of clusters, not counting noise.
    pub fn cluster_count(&self) -> usize {
        self.labels().into_iter().filter(|&l| l != NOISE).count()
    }

    /// Clusters as sorted id lists, ordered by their smallest member.
    pub fn blocks(&self) -> Vec<Vec<&str>> {
        let mut by_label: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
        for (id, l) in self.iter() {
            by_label.entry(l).or_default().push(id);
        }
        let mut blocks: Vec<Vec<&str>> = by_label.into_values().collect();
        blocks.sort();
        blocks
    }

    /// Same partition of the same ids, ignoring label names.
    pub fn same_partition(&self, other: &SenseClustering) -> bool {
        self.blocks() == other.blocks()
    }
}

impl FromIterator<(String, i64)> for SenseClustering {
    /// Later duplicates overwrite earlier ones; use [`SenseClustering::insert`]
    /// to reject them.
    fn from_iter<I: IntoIterator<Item = (String, i64)>>(iter: I) -> Self {
        SenseClustering {
            assignment: iter.into_iter().collect(),
        }
    }
}

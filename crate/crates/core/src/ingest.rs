//! Readers and writers for WUG-style dataset releases.
//!
//! All files are tab-separated UTF-8 with a header row. Fields are never
//! quoted, so contexts must not contain tabs or line breaks. Columns the
//! readers do not know are ignored (usage files keep them in
//! [`Usage::extra`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{jsd_distance, sense_distribution, NoisePolicy};
use crate::wug::{CharSpan, Grouping, Judgment, Ordinal, SenseClustering, Usage};

/// A parsed TSV file: header plus data rows tagged with their line number.
struct Table {
    name: String,
    columns: HashMap<String, usize>,
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(name: &str, input: impl Read) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .quoting(false)
            .has_headers(true)
            .from_reader(input);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::format(name, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_owned())
            .collect();
        let columns = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.clone(), i))
            .collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::row(name, i + 2, e.to_string()))?;
            rows.push((i + 2, record.iter().map(String::from).collect()));
        }
        Ok(Table {
            name: name.to_owned(),
            columns,
            headers,
            rows,
        })
    }

    fn open(path: &Path) -> Result<Table> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Table::read(&path.display().to_string(), file)
    }

    fn require(&self, column: &str) -> Result<usize> {
        self.columns
            .get(column)
            .copied()
            .ok_or_else(|| Error::format(&self.name, format!("missing required column {column:?}")))
    }

    fn optional(&self, column: &str) -> Option<usize> {
        self.columns.get(column).copied()
    }

    fn row_error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::row(&self.name, line, message)
    }
}

fn non_empty(row: &[String], col: Option<usize>) -> Option<&str> {
    col.map(|c| row[c].trim()).filter(|v| !v.is_empty())
}

fn tsv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("<output>", e.to_string())
}

const USE_COLUMNS: [&str; 8] = [
    "lemma",
    "pos",
    "date",
    "grouping",
    "identifier",
    "context",
    "indexes_target_token",
    "indexes_target_sentence",
];

pub fn read_uses(name: &str, input: impl Read) -> Result<Vec<Usage>> {
    uses_from_table(Table::read(name, input)?)
}

/// Parses a usage file. Required columns: `lemma`, `identifier`, `context`,
/// `grouping`, `indexes_target_token`.
pub fn parse_uses(path: impl AsRef<Path>) -> Result<Vec<Usage>> {
    uses_from_table(Table::open(path.as_ref())?)
}

fn uses_from_table(t: Table) -> Result<Vec<Usage>> {
    let lemma = t.require("lemma")?;
    let id = t.require("identifier")?;
    let context = t.require("context")?;
    let grouping = t.require("grouping")?;
    let target = t.require("indexes_target_token")?;
    let pos = t.optional("pos");
    let date = t.optional("date");
    let sentence = t.optional("indexes_target_sentence");
    let extra_cols: Vec<(usize, &String)> = t
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !USE_COLUMNS.contains(&h.as_str()))
        .collect();

    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let line = *line;
        let ctx = row[context].clone();
        let len = ctx.chars().count();
        let parse_span = |col: usize, what: &str| -> Result<CharSpan> {
            let span = CharSpan::parse(&row[col])
                .ok_or_else(|| t.row_error(line, format!("malformed {what} {:?}", row[col])))?;
            if !span.fits(len) {
                return Err(t.row_error(
                    line,
                    format!("{what} {span} out of bounds for context of {len} characters"),
                ));
            }
            Ok(span)
        };
        let target_span = parse_span(target, "indexes_target_token")?;
        let sentence_span = match non_empty(row, sentence) {
            Some(_) => Some(parse_span(sentence.unwrap(), "indexes_target_sentence")?),
            None => None,
        };
        let g: u8 = row[grouping]
            .trim()
            .parse()
            .map_err(|_| t.row_error(line, format!("grouping {:?} is not an integer", row[grouping])))?;
        let g = Grouping::try_from(g).map_err(|m| t.row_error(line, m))?;
        out.push(Usage {
            id: row[id].trim().to_owned(),
            lemma: row[lemma].trim().to_owned(),
            pos: non_empty(row, pos).map(String::from),
            date: non_empty(row, date).map(String::from),
            grouping: g,
            context: ctx,
            target_span,
            sentence_span,
            extra: extra_cols
                .iter()
                .map(|(i, h)| ((*h).clone(), row[*i].clone()))
                .collect(),
        });
    }
    Ok(out)
}

/// Writes usages in the format [`parse_uses`] reads. Extra columns are the
/// union over all usages, in name order.
pub fn write_uses(out: impl Write, usages: &[Usage]) -> Result<()> {
    let extra: BTreeSet<&String> = usages.iter().flat_map(|u| u.extra.keys()).collect();
    let mut w = tsv_writer(out);
    let mut header: Vec<&str> = USE_COLUMNS.to_vec();
    header.extend(extra.iter().map(|s| s.as_str()));
    w.write_record(&header).map_err(csv_err)?;
    for u in usages {
        let mut rec = vec![
            u.lemma.clone(),
            u.pos.clone().unwrap_or_default(),
            u.date.clone().unwrap_or_default(),
            u.grouping.to_string(),
            u.id.clone(),
            u.context.clone(),
            u.target_span.to_string(),
            u.sentence_span.map(|s| s.to_string()).unwrap_or_default(),
        ];
        rec.extend(extra.iter().map(|k| u.extra.get(*k).cloned().unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn parse_rating(raw: &str) -> Option<Option<Ordinal>> {
    let raw = raw.trim();
    if raw == "-" {
        return Some(None);
    }
    let v: f64 = raw.parse().ok()?;
    if v.fract() != 0.0 || !(0.0..=4.0).contains(&v) {
        return None;
    }
    Some(Ordinal::new(v as u8))
}

pub fn read_judgments(name: &str, input: impl Read) -> Result<Vec<Judgment>> {
    judgments_from_table(Table::read(name, input)?)
}

/// Parses a judgment file. Ratings `0` and `-` become missing; pairs are
/// stored in canonical order.
pub fn parse_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    judgments_from_table(Table::open(path.as_ref())?)
}

fn judgments_from_table(t: Table) -> Result<Vec<Judgment>> {
    let c1 = t.require("identifier1")?;
    let c2 = t.require("identifier2")?;
    let ca = t.require("annotator")?;
    let cj = t.require("judgment")?;
    t.rows
        .iter()
        .map(|(line, row)| {
            let rating = parse_rating(&row[cj]).ok_or_else(|| {
                t.row_error(*line, format!("judgment {:?} not in {{0,1,2,3,4,-}}", row[cj]))
            })?;
            Ok(Judgment::new(row[c1].trim(), row[c2].trim(), row[ca].trim(), rating))
        })
        .collect()
}

pub fn write_judgments(out: impl Write, judgments: &[Judgment]) -> Result<()> {
    let mut w = tsv_writer(out);
    w.write_record(["identifier1", "identifier2", "annotator", "judgment"])
        .map_err(csv_err)?;
    for j in judgments {
        let rating = j.rating.map(|r| r.get().to_string()).unwrap_or_else(|| "0".into());
        w.write_record([&j.id1, &j.id2, &j.annotator, &rating])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn read_clusters(name: &str, input: impl Read) -> Result<SenseClustering> {
    clusters_from_table(Table::read(name, input)?)
}

/// Parses a cluster file (`identifier`, `cluster`); `-1` marks noise.
pub fn parse_clusters(path: impl AsRef<Path>) -> Result<SenseClustering> {
    clusters_from_table(Table::open(path.as_ref())?)
}

fn clusters_from_table(t: Table) -> Result<SenseClustering> {
    let ci = t.require("identifier")?;
    let cc = t.require("cluster")?;
    let mut c = SenseClustering::new();
    for (line, row) in &t.rows {
        let label: i64 = row[cc]
            .trim()
            .parse()
            .ok()
            .filter(|&l| l >= -1)
            .ok_or_else(|| t.row_error(*line, format!("cluster label {:?} invalid", row[cc])))?;
        c.insert(row[ci].trim(), label)
            .map_err(|_| t.row_error(*line, format!("duplicate identifier {:?}", row[ci].trim())))?;
    }
    Ok(c)
}

pub fn write_clusters(out: impl Write, clustering: &SenseClustering) -> Result<()> {
    let mut w = tsv_writer(out);
    w.write_record(["identifier", "cluster"]).map_err(csv_err)?;
    for (id, label) in clustering.iter() {
        w.write_record([id, &label.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// Lemma-level gold change labels. Absent columns or empty cells are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GoldLabels {
    pub lemma: String,
    pub change_graded: Option<f64>,
    pub change_binary: Option<u8>,
    pub change_binary_gain: Option<u8>,
    pub change_binary_loss: Option<u8>,
    pub compare: Option<f64>,
}

impl GoldLabels {
    fn has_any(&self) -> bool {
        self.change_graded.is_some()
            || self.change_binary.is_some()
            || self.change_binary_gain.is_some()
            || self.change_binary_loss.is_some()
            || self.compare.is_some()
    }
}

pub fn read_gold_lscd(name: &str, input: impl Read) -> Result<BTreeMap<String, GoldLabels>> {
    gold_from_table(Table::read(name, input)?)
}

pub fn parse_gold_lscd(path: impl AsRef<Path>) -> Result<BTreeMap<String, GoldLabels>> {
    gold_from_table(Table::open(path.as_ref())?)
}

fn gold_from_table(t: Table) -> Result<BTreeMap<String, GoldLabels>> {
    let cl = t.require("lemma")?;
    let graded = t.optional("change_graded");
    let binary = t.optional("change_binary");
    let gain = t.optional("change_binary_gain");
    let loss = t.optional("change_binary_loss");
    let compare = t.optional("COMPARE");

    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        let line = *line;
        let real = |col: Option<usize>, name: &str| -> Result<Option<f64>> {
            non_empty(row, col)
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| t.row_error(line, format!("{name} {v:?} is not a number")))
                })
                .transpose()
        };
        let flag = |col: Option<usize>, name: &str| -> Result<Option<u8>> {
            non_empty(row, col)
                .map(|v| match v.parse::<f64>() {
                    Ok(0.0) => Ok(0),
                    Ok(1.0) => Ok(1),
                    _ => Err(t.row_error(line, format!("{name} {v:?} not in {{0,1}}"))),
                })
                .transpose()
        };
        let labels = GoldLabels {
            lemma: row[cl].trim().to_owned(),
            change_graded: real(graded, "change_graded")?,
            change_binary: flag(binary, "change_binary")?,
            change_binary_gain: flag(gain, "change_binary_gain")?,
            change_binary_loss: flag(loss, "change_binary_loss")?,
            compare: real(compare, "COMPARE")?,
        };
        if let Some(g) = labels.change_graded {
            if !(0.0..=1.0).contains(&g) {
                return Err(t.row_error(line, format!("change_graded {g} outside [0, 1]")));
            }
        }
        if !labels.has_any() {
            return Err(t.row_error(line, format!("no gold labels for lemma {:?}", labels.lemma)));
        }
        if out.insert(labels.lemma.clone(), labels).is_some() {
            return Err(t.row_error(line, format!("lemma {:?} listed twice", row[cl].trim())));
        }
    }
    Ok(out)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_gold_lscd(out: impl Write, gold: &BTreeMap<String, GoldLabels>) -> Result<()> {
    let mut w = tsv_writer(out);
    w.write_record([
        "lemma",
        "change_graded",
        "change_binary",
        "change_binary_gain",
        "change_binary_loss",
        "COMPARE",
    ])
    .map_err(csv_err)?;
    for g in gold.values() {
        w.write_record([
            g.lemma.clone(),
            fmt_opt(g.change_graded),
            fmt_opt(g.change_binary),
            fmt_opt(g.change_binary_gain),
            fmt_opt(g.change_binary_loss),
            fmt_opt(g.compare),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Lemma-level assignment to train/dev/test.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split(BTreeMap<String, SplitName>);

impl Split {
    pub fn get(&self, lemma: &str) -> Option<SplitName> {
        self.0.get(lemma).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The lemmas of `lemmas` assigned to `which`, in input order.
    pub fn filter<'a, I>(&self, lemmas: I, which: SplitName) -> Vec<&'a str>
    where
        I: IntoIterator<Item = &'a str>,
    {
        lemmas
            .into_iter()
            .filter(|l| self.get(l) == Some(which))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SplitName)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Deterministic 60/20/20 split for datasets without a published one.
    pub fn seeded(lemmas: &[String], seed: u64) -> Split {
        let mut sorted: Vec<&String> = lemmas.iter().collect();
        sorted.sort();
        sorted.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sorted.shuffle(&mut rng);
        let n = sorted.len();
        let n_train = (n as f64 * 0.6).round() as usize;
        let n_dev = (n as f64 * 0.2).round() as usize;
        Split(
            sorted
                .into_iter()
                .enumerate()
                .map(|(i, l)| {
                    let s = if i < n_train {
                        SplitName::Train
                    } else if i < n_train + n_dev {
                        SplitName::Dev
                    } else {
                        SplitName::Test
                    };
                    (l.clone(), s)
                })
                .collect(),
        )
    }
}

impl FromIterator<(String, SplitName)> for Split {
    fn from_iter<I: IntoIterator<Item = (String, SplitName)>>(iter: I) -> Self {
        Split(iter.into_iter().collect())
    }
}

pub fn read_split(name: &str, input: impl Read) -> Result<Split> {
    split_from_table(Table::read(name, input)?)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Split> {
    split_from_table(Table::open(path.as_ref())?)
}

fn split_from_table(t: Table) -> Result<Split> {
    let cl = t.require("lemma")?;
    let cs = t.require("split")?;
    let mut map = BTreeMap::new();
    for (line, row) in &t.rows {
        let split: SplitName = row[cs].parse().map_err(|m: String| t.row_error(*line, m))?;
        let lemma = row[cl].trim().to_owned();
        if map.insert(lemma.clone(), split).is_some() {
            return Err(t.row_error(*line, format!("lemma {lemma:?} listed twice")));
        }
    }
    Ok(Split(map))
}

pub fn write_split(out: impl Write, split: &Split) -> Result<()> {
    let mut w = tsv_writer(out);
    w.write_record(["lemma", "split"]).map_err(csv_err)?;
    for (lemma, s) in split.iter() {
        w.write_record([lemma, s.as_str()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// Evaluation tasks a dataset can support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SupportedTask {
    #[serde(rename = "WiC")]
    Wic,
    #[serde(rename = "WSI")]
    Wsi,
    #[serde(rename = "LSCD-binary")]
    LscdBinary,
    #[serde(rename = "LSCD-graded")]
    LscdGraded,
    #[serde(rename = "COMPARE")]
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaFiles {
    pub uses: PathBuf,
    pub judgments: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<PathBuf>,
}

fn default_min_new() -> usize {
    1
}

/// Attestation thresholds for binary change, overridable per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryThresholds {
    /// Minimum usages a cluster needs in the period where it is attested.
    #[serde(default = "default_min_new")]
    pub min_attested: usize,
    /// Maximum usages it may have in the other period.
    #[serde(default)]
    pub max_other: usize,
}

impl Default for BinaryThresholds {
    fn default() -> Self {
        BinaryThresholds {
            min_attested: 1,
            max_other: 0,
        }
    }
}

/// Describes one dataset release. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub version: String,
    pub language: String,
    pub tasks: BTreeSet<SupportedTask>,
    #[serde(default)]
    pub aggregation: crate::wug::Aggregation,
    #[serde(default)]
    pub binary: BinaryThresholds,
    pub lemmas: BTreeMap<String, LemmaFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything known about one lemma.
#[derive(Debug, Clone)]
pub struct LemmaData {
    pub usages: Vec<Usage>,
    pub judgments: Vec<Judgment>,
    pub clusters: Option<SenseClustering>,
}

/// A dataset loaded from its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub lemmas: BTreeMap<String, LemmaData>,
    pub gold: BTreeMap<String, GoldLabels>,
    pub split: Option<Split>,
}

impl Dataset {
    /// Loads and cross-checks a dataset.
    ///
    /// Fails if a declared task lacks the files it needs, if any judgment or
    /// cluster refers to an unknown usage (listing all such ids), or if a
    /// usage file holds another lemma's usages.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest = DatasetManifest::from_json(&text)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };

        let mut lemmas = BTreeMap::new();
        let mut dangling = BTreeSet::new();
        for (lemma, files) in &manifest.lemmas {
            let usages = parse_uses(resolve(&files.uses))?;
            if let Some(u) = usages.iter().find(|u| &u.lemma != lemma) {
                return Err(Error::format(
                    files.uses.display().to_string(),
                    format!("usage {:?} belongs to {:?}, expected {lemma:?}", u.id, u.lemma),
                ));
            }
            let judgments = parse_judgments(resolve(&files.judgments))?;
            let clusters = files
                .clusters
                .as_ref()
                .map(|p| parse_clusters(resolve(p)))
                .transpose()?;
            let ids: BTreeSet<&str> = usages.iter().map(|u| u.id.as_str()).collect();
            if ids.len() != usages.len() {
                return Err(Error::format(
                    files.uses.display().to_string(),
                    "duplicate usage identifier",
                ));
            }
            let referenced = judgments
                .iter()
                .flat_map(|j| [j.id1.as_str(), j.id2.as_str()])
                .chain(clusters.iter().flat_map(|c| c.ids()));
            dangling.extend(
                referenced
                    .filter(|id| !ids.contains(id))
                    .map(|id| format!("{lemma}/{id}")),
            );
            lemmas.insert(
                lemma.clone(),
                LemmaData {
                    usages,
                    judgments,
                    clusters,
                },
            );
        }
        if !dangling.is_empty() {
            return Err(Error::UnknownUsages(dangling.into_iter().collect()));
        }

        let gold = manifest
            .gold
            .as_ref()
            .map(|p| parse_gold_lscd(resolve(p)))
            .transpose()?
            .unwrap_or_default();
        let split = manifest.split.as_ref().map(|p| load_split(resolve(p))).transpose()?;

        let ds = Dataset {
            manifest,
            root,
            lemmas,
            gold,
            split,
        };
        ds.check_tasks()?;
        Ok(ds)
    }

    /// Whether the loaded files back `task`.
    pub fn supports(&self, task: SupportedTask) -> bool {
        let all_gold = |f: fn(&GoldLabels) -> bool| {
            self.lemmas
                .keys()
                .all(|l| self.gold.get(l).is_some_and(f))
        };
        match task {
            SupportedTask::Wic => self.lemmas.values().any(|l| !l.judgments.is_empty()),
            SupportedTask::Wsi => self.lemmas.values().all(|l| l.clusters.is_some()),
            SupportedTask::LscdBinary => all_gold(|g| g.change_binary.is_some()),
            SupportedTask::LscdGraded => all_gold(|g| g.change_graded.is_some()),
            SupportedTask::Compare => all_gold(|g| g.compare.is_some()),
        }
    }

    fn check_tasks(&self) -> Result<()> {
        let unbacked: Vec<String> = self
            .manifest
            .tasks
            .iter()
            .filter(|t| !self.supports(**t))
            .map(|t| format!("{t:?}"))
            .collect();
        if unbacked.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "dataset {} declares tasks without backing gold files: {}",
                self.manifest.name,
                unbacked.join(", ")
            )))
        }
    }

    /// Lemma names selected by a split, or all lemmas for `None`.
    ///
    /// Requesting a split from a dataset without a split file selects nothing.
    pub fn select(&self, which: Option<SplitName>) -> Vec<&str> {
        let all = self.lemmas.keys().map(String::as_str);
        match which {
            None => all.collect(),
            Some(s) => match &self.split {
                Some(split) => split.filter(all, s),
                None => Vec::new(),
            },
        }
    }
}

/// One row of the graded-change consistency audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub lemma: String,
    pub released: f64,
    pub recomputed: Option<f64>,
    pub consistent: bool,
}

/// Recomputes graded change from the released clusters and compares it with
/// the released `change_graded` values. Reported, never enforced.
pub fn audit_graded_change(ds: &Dataset, tolerance: f64) -> Vec<AuditRow> {
    let mut rows = Vec::new();
    for (lemma, data) in &ds.lemmas {
        let (Some(clusters), Some(released)) = (
            data.clusters.as_ref(),
            ds.gold.get(lemma).and_then(|g| g.change_graded),
        ) else {
            continue;
        };
        let ids = |g: Grouping| -> Vec<&str> {
            data.usages
                .iter()
                .filter(|u| u.grouping == g)
                .map(|u| u.id.as_str())
                .collect()
        };
        let recomputed = sense_distribution(clusters, &ids(Grouping::Earlier), NoisePolicy::Exclude)
            .and_then(|p| {
                sense_distribution(clusters, &ids(Grouping::Later), NoisePolicy::Exclude)
                    .map(|q| jsd_distance(&p, &q))
            })
            .ok();
        rows.push(AuditRow {
            lemma: lemma.clone(),
            released,
            consistent: recomputed.is_some_and(|r| (r - released).abs() <= tolerance),
            recomputed,
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uses_tsv(rows: &[&str]) -> String {
        let mut s = String::from(
            "lemma\tpos\tdate\tgrouping\tidentifier\tdescription\tcontext\tindexes_target_token\tindexes_target_sentence\n",
        );
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_uses() {
        let ctx = "a".repeat(10) + "plane" + &"b".repeat(25);
        assert_eq!(ctx.chars().count(), 40);
        let data = uses_tsv(&[&format!("plane\tNN\t1850\t2\tu1\tfoo\t{ctx}\t10:15\t0:40")]);
        let us = read_uses("uses.tsv", data.as_bytes()).unwrap();
        assert_eq!(us.len(), 1);
        assert_eq!(us[0].target_span, CharSpan::new(10, 15));
        assert_eq!(us[0].grouping, Grouping::Later);
        assert_eq!(us[0].target(), "plane");
        assert_eq!(us[0].extra.get("description").map(String::as_str), Some("foo"));
        assert_eq!(us[0].date.as_deref(), Some("1850"));
    }

    #[test]
    fn span_uses_character_offsets() {
        let ctx = "über plane";
        let data = uses_tsv(&[&format!("plane\t\t\t1\tu1\t\t{ctx}\t5:10\t")]);
        let us = read_uses("uses.tsv", data.as_bytes()).unwrap();
        assert_eq!(us[0].target(), "plane");
        assert_eq!(us[0].sentence_span, None);
    }

    #[test]
    fn rejects_bad_uses() {
        let ctx = "x".repeat(40);
        let data = uses_tsv(&[
            &format!("plane\t\t\t1\tu1\t\t{ctx}\t0:3\t"),
            &format!("plane\t\t\t1\tu2\t\t{ctx}\t39:45\t"),
        ]);
        match read_uses("uses.tsv", data.as_bytes()) {
            Err(Error::Row { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("out of bounds"), "{message}");
            }
            other => panic!("{other:?}"),
        }

        let missing = "lemma\tidentifier\tcontext\tgrouping\nplane\tu1\tctx\t1\n";
        match read_uses("uses.tsv", missing.as_bytes()) {
            Err(Error::Format { message, .. }) => assert!(message.contains("indexes_target_token")),
            other => panic!("{other:?}"),
        }

        let period3 = uses_tsv(&[&format!("plane\t\t\t3\tu1\t\t{ctx}\t0:3\t")]);
        assert!(read_uses("uses.tsv", period3.as_bytes()).is_err());
    }

    #[test]
    fn parses_judgments() {
        let data = "identifier1\tidentifier2\tannotator\tjudgment\tcomment\n\
                    u1\tu2\tannA\t4\t\n\
                    u2\tu1\tannB\t0\tx\n\
                    u2\tu3\tannB\t-\t\n\
                    u3\tu1\tannC\t2.0\t\n";
        let js = read_judgments("j.tsv", data.as_bytes()).unwrap();
        assert_eq!(js[0], Judgment::new("u1", "u2", "annA", Ordinal::new(4)));
        assert_eq!(
            js[1],
            Judgment {
                id1: "u1".into(),
                id2: "u2".into(),
                annotator: "annB".into(),
                rating: None
            }
        );
        assert_eq!(js[2].rating, None);
        assert_eq!(js[3].rating, Ordinal::new(2));
        assert_eq!((js[3].id1.as_str(), js[3].id2.as_str()), ("u1", "u3"));

        for bad in ["5", "2.5", "x", "-1"] {
            let data = format!("identifier1\tidentifier2\tannotator\tjudgment\nu1\tu2\ta\t{bad}\n");
            assert!(read_judgments("j.tsv", data.as_bytes()).is_err(), "{bad}");
        }
    }

    #[test]
    fn parses_clusters() {
        let c = read_clusters("c.tsv", "identifier\tcluster\nu1\t0\nu2\t0\nu3\t1\nu4\t-1\n".as_bytes())
            .unwrap();
        assert_eq!(c.label("u1"), Some(0));
        assert_eq!(c.label("u3"), Some(1));
        assert_eq!(c.label("u4"), Some(crate::wug::NOISE));
        assert_eq!(c.cluster_count(), 2);
        assert!(read_clusters("c.tsv", "identifier\tcluster\nu1\t0\nu1\t1\n".as_bytes()).is_err());
    }

    #[test]
    fn parses_gold() {
        let g = read_gold_lscd(
            "g.tsv",
            "lemma\tchange_graded\tchange_binary\nplane\t0.88\t1\ntree\t0.1\t\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(g["plane"].change_graded, Some(0.88));
        assert_eq!(g["plane"].change_binary, Some(1));
        assert_eq!(g["tree"].change_binary, None);
        assert_eq!(g["tree"].compare, None);

        let c = read_gold_lscd("g.tsv", "lemma\tCOMPARE\nplane\t2.5\n".as_bytes()).unwrap();
        assert_eq!(c["plane"].compare, Some(2.5));
        assert_eq!(c["plane"].change_graded, None);

        assert!(read_gold_lscd("g.tsv", "lemma\tchange_graded\nplane\t1.2\n".as_bytes()).is_err());
        assert!(read_gold_lscd("g.tsv", "lemma\tchange_binary\nplane\t2\n".as_bytes()).is_err());
    }

    #[test]
    fn splits() {
        let s = read_split("s.tsv", "lemma\tsplit\nplane\ttest\ntree\tdev\n".as_bytes()).unwrap();
        assert_eq!(s.get("plane"), Some(SplitName::Test));
        assert_eq!(s.filter(["plane", "tree", "other"], SplitName::Test), vec!["plane"]);
        assert!(read_split("s.tsv", "lemma\tsplit\nplane\ttest\nplane\tdev\n".as_bytes()).is_err());
        assert!(read_split("s.tsv", "lemma\tsplit\nplane\tvalid\n".as_bytes()).is_err());
        let empty = read_split("s.tsv", "lemma\tsplit\n".as_bytes()).unwrap();
        assert!(empty.filter(["plane"], SplitName::Test).is_empty());
    }

    #[test]
    fn seeded_split_is_deterministic() {
        let lemmas: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let a = Split::seeded(&lemmas, 7);
        assert_eq!(a, Split::seeded(&lemmas, 7));
        let count = |s: SplitName| a.iter().filter(|(_, x)| *x == s).count();
        assert_eq!((count(SplitName::Train), count(SplitName::Dev), count(SplitName::Test)), (6, 2, 2));
    }
}

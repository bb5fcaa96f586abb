//! Synthetic datasets with planted sense structure.
//!
//! Every lemma gets a few stable senses attested in both periods; changed
//! lemmas also get a sense that only occurs later. Annotators rate
//! same-sense pairs 4 and cross-sense pairs 1, and with probability `noise`
//! a rating is replaced by a uniform draw from 1..=4. Gold labels come from
//! the planted clusters through this crate's own measures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{write_store_file, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::ingest::{
    write_clusters, write_gold_lscd, write_judgments, write_split, write_uses, BinaryThresholds,
    DatasetManifest, GoldLabels, LemmaFiles, Split, SupportedTask,
};
use crate::measures::{binary_change, jsd_distance, sense_distribution, NoisePolicy};
use crate::wug::{
    edge_weight, Aggregation, CharSpan, Grouping, Judgment, Ordinal, SenseClustering, Usage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub lemmas: usize,
    /// How many lemmas gain a later-only sense.
    pub changed: usize,
    /// Upper bound on stable senses per lemma.
    pub senses: usize,
    /// Usages per stable sense and period are drawn from `1..=2 * this`.
    pub usages_per_sense: usize,
    /// Probability that a single rating is replaced by a random one.
    pub noise: f64,
    pub annotators: usize,
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            lemmas: 10,
            changed: 5,
            senses: 2,
            usages_per_sense: 3,
            noise: 0.0,
            annotators: 3,
            layers: 2,
            tokens: 2,
            dim: 8,
        }
    }
}

impl FixtureSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fixture: {m}")));
        if self.lemmas == 0 || self.changed > self.lemmas {
            return bad("need at least one lemma and changed <= lemmas");
        }
        if self.senses == 0 || self.usages_per_sense == 0 || self.annotators == 0 {
            return bad("senses, usages_per_sense and annotators must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        if self.layers == 0 || self.tokens == 0 || self.dim == 0 || self.layers > u16::MAX as usize {
            return bad("embedding shape must be positive");
        }
        Ok(())
    }
}

/// File names inside a fixture directory.
pub const MANIFEST: &str = "manifest.json";
pub const GOLD_SCORES: &str = "gold_scores.tsv";
pub const EMBEDDINGS: &str = "embeddings.bin";

struct PlantedLemma {
    usages: Vec<Usage>,
    senses: Vec<i64>,
}

fn plant(name: &str, spec: &FixtureSpec, changed: bool, rng: &mut ChaCha8Rng) -> PlantedLemma {
    let stable = rng.random_range(1..=spec.senses);
    let mut slots: Vec<(i64, Grouping)> = Vec::new();
    let top = 2 * spec.usages_per_sense;
    for k in 0..stable as i64 {
        for g in [Grouping::Earlier, Grouping::Later] {
            let n = rng.random_range(1..=top);
            slots.extend(std::iter::repeat_n((k, g), n));
        }
    }
    if changed {
        let n = rng.random_range(1..=spec.usages_per_sense);
        slots.extend(std::iter::repeat_n((stable as i64, Grouping::Later), n));
    }
    slots.shuffle(rng);

    let mut usages = Vec::with_capacity(slots.len());
    let mut senses = Vec::with_capacity(slots.len());
    for (i, (k, g)) in slots.into_iter().enumerate() {
        let context = format!("the {name} in sense {k} number {i}");
        usages.push(Usage {
            id: format!("{name}-{i:03}"),
            lemma: name.to_owned(),
            pos: Some("NN".into()),
            date: Some(if g == Grouping::Earlier { "1850" } else { "1950" }.into()),
            grouping: g,
            target_span: CharSpan::new(4, 4 + name.chars().count()),
            sentence_span: Some(CharSpan::new(0, context.chars().count())),
            context,
            extra: BTreeMap::new(),
        });
        senses.push(k);
    }
    PlantedLemma { usages, senses }
}

fn rate(same: bool, noise: f64, rng: &mut ChaCha8Rng) -> Ordinal {
    let clean = if same { 4 } else { 1 };
    let v = if noise > 0.0 && rng.random::<f64>() < noise {
        rng.random_range(1..=4)
    } else {
        clean
    };
    Ordinal::new(v).expect("rating in range")
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes a complete dataset into `dir` and returns the manifest path.
///
/// Sense structure and embeddings depend only on `seed`; rating noise is
/// drawn from a separate stream, so fixtures differing only in `noise`
/// share lemmas, usages and clusters.
pub fn make_fixture(spec: &FixtureSpec, seed: u64, dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let dir = dir.as_ref();
    for sub in ["uses", "judgments", "clusters"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let mut structure = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let mut vec_rng = ChaCha8Rng::seed_from_u64(seed);
    vec_rng.set_stream(2);

    let names: Vec<String> = (0..spec.lemmas).map(|i| format!("word{i:02}")).collect();
    let mut order: Vec<usize> = (0..spec.lemmas).collect();
    order.shuffle(&mut structure);
    let mut is_changed = vec![false; spec.lemmas];
    for &i in &order[..spec.changed] {
        is_changed[i] = true;
    }

    let mut lemma_files = BTreeMap::new();
    let mut gold = BTreeMap::new();
    let mut records = Vec::new();
    let mut score_rows = Vec::new();
    let annotators: Vec<String> = (1..=spec.annotators).map(|a| format!("ann{a}")).collect();

    for (li, name) in names.iter().enumerate() {
        let planted = plant(name, spec, is_changed[li], &mut structure);
        let clusters: SenseClustering = planted
            .usages
            .iter()
            .zip(&planted.senses)
            .map(|(u, &k)| (u.id.clone(), k))
            .collect();

        let mut judgments = Vec::new();
        let mut cross = Vec::new();
        let us = &planted.usages;
        for i in 0..us.len() {
            for j in i + 1..us.len() {
                let same = planted.senses[i] == planted.senses[j];
                let ratings: Vec<Option<Ordinal>> = annotators
                    .iter()
                    .map(|_| Some(rate(same, spec.noise, &mut noise_rng)))
                    .collect();
                for (a, r) in annotators.iter().zip(&ratings) {
                    judgments.push(Judgment::new(&us[i].id, &us[j].id, a, *r));
                }
                let median = edge_weight(&ratings, Aggregation::Median)?;
                if us[i].grouping != us[j].grouping {
                    cross.push(median);
                }
                score_rows.push((us[i].id.clone(), us[j].id.clone(), median));
            }
        }

        // one prototype per sense, usage vectors scattered around it
        let protos: BTreeMap<i64, Vec<f32>> = planted
            .senses
            .iter()
            .map(|&k| (k, ()))
            .collect::<BTreeMap<_, _>>()
            .into_keys()
            .map(|k| (k, (0..spec.dim).map(|_| vec_rng.random_range(-1.0f32..1.0)).collect()))
            .collect();
        for (u, k) in us.iter().zip(&planted.senses) {
            let mut values = Vec::with_capacity(spec.layers * spec.tokens * spec.dim);
            for _ in 0..spec.layers * spec.tokens {
                values.extend(protos[k].iter().map(|&x| x + vec_rng.random_range(-0.1f32..0.1)));
            }
            records.push(EmbeddingRecord::from_vec(
                u.id.clone(),
                (spec.layers, spec.tokens, spec.dim),
                values,
            )?);
        }

        let ids = |g: Grouping| -> Vec<&str> {
            us.iter().filter(|u| u.grouping == g).map(|u| u.id.as_str()).collect()
        };
        let p = sense_distribution(&clusters, &ids(Grouping::Earlier), NoisePolicy::Exclude)?;
        let q = sense_distribution(&clusters, &ids(Grouping::Later), NoisePolicy::Exclude)?;
        let tagged: Vec<(&str, Grouping)> = us.iter().map(|u| (u.id.as_str(), u.grouping)).collect();
        let change = binary_change(&clusters, &tagged, BinaryThresholds::default(), NoisePolicy::Exclude)?;
        gold.insert(
            name.clone(),
            GoldLabels {
                lemma: name.clone(),
                change_graded: Some(jsd_distance(&p, &q)),
                change_binary: Some(change.binary as u8),
                change_binary_gain: Some(change.gain as u8),
                change_binary_loss: Some(change.loss as u8),
                compare: Some(cross.iter().sum::<f64>() / cross.len() as f64),
            },
        );

        let files = LemmaFiles {
            uses: PathBuf::from(format!("uses/{name}.tsv")),
            judgments: PathBuf::from(format!("judgments/{name}.tsv")),
            clusters: Some(PathBuf::from(format!("clusters/{name}.tsv"))),
        };
        write_uses(create(&dir.join(&files.uses))?, us)?;
        write_judgments(create(&dir.join(&files.judgments))?, &judgments)?;
        write_clusters(create(&dir.join(files.clusters.as_ref().expect("set above")))?, &clusters)?;
        lemma_files.insert(name.clone(), files);
    }

    write_gold_lscd(create(&dir.join("gold.tsv"))?, &gold)?;
    write_split(create(&dir.join("split.tsv"))?, &Split::seeded(&names, seed))?;
    write_store_file(dir.join(EMBEDDINGS), &records)?;

    let mut scores = String::from("identifier1\tidentifier2\tscore\n");
    for (a, b, s) in &score_rows {
        scores.push_str(&format!("{a}\t{b}\t{s}\n"));
    }
    let p = dir.join(GOLD_SCORES);
    fs::write(&p, scores).map_err(|e| Error::io(&p, e))?;

    let manifest = DatasetManifest {
        name: "synthetic".into(),
        version: format!("seed-{seed}-noise-{}", spec.noise),
        language: "und".into(),
        tasks: [
            SupportedTask::Wic,
            SupportedTask::Wsi,
            SupportedTask::LscdBinary,
            SupportedTask::LscdGraded,
            SupportedTask::Compare,
        ]
        .into_iter()
        .collect(),
        aggregation: Aggregation::Median,
        binary: BinaryThresholds::default(),
        lemmas: lemma_files,
        gold: Some("gold.tsv".into()),
        split: Some("split.tsv".into()),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

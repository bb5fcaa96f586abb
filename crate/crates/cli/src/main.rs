use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lscd_core::clustering::{brute_force_cluster, DEFAULT_THRESHOLD};
use lscd_core::fixture::{make_fixture, FixtureSpec};
use lscd_core::ingest::{audit_graded_change, write_clusters, Dataset, SupportedTask};
use lscd_core::measures::Measure;
use lscd_core::pipeline::{exit_code, run, RunConfig, Scorer, SplitSelection, Task};
use lscd_core::report::{read_report_json, write_plots, write_report, write_timing, ReportFormat};
use lscd_core::wug::build_graph;
use lscd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "lscd-bench", version, about = "Run and score lexical semantic change pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (task, measure, dataset) evaluation.
    Run(RunArgs),
    /// Write a synthetic dataset with planted sense structure.
    Fixture(FixtureArgs),
    /// Re-render saved report.json files.
    Report(ReportArgs),
    /// Check a dataset's manifest and files, and audit its graded gold.
    Validate(ValidateArgs),
    /// Exact brute-force clustering of one small lemma graph.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    measure: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// External WiC scores (identifier1, identifier2, score).
    #[arg(long, conflicts_with = "embeddings")]
    scores: Option<PathBuf>,
    /// The external scores are distances rather than similarities.
    #[arg(long, requires = "scores")]
    scores_are_distances: bool,
    /// Embedding store used for pair scores and prototypes.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "tsv")]
    format: String,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON fixture spec; the flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    lemmas: Option<usize>,
    #[arg(long)]
    changed: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    annotators: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files written by `run`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "plot")]
    format: String,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Largest accepted gap between released and recomputed graded change.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    lemma: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

fn read_fixture_spec(path: &Path) -> Result<FixtureSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn build_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.config, &a.dataset, &a.task) {
        (Some(path), _, _) => RunConfig::load(path)?,
        (None, Some(ds), Some(task)) => RunConfig::new(ds, task.parse()?),
        _ => {
            return Err(Error::Config(
                "either --config or both --dataset and --task are required".into(),
            ))
        }
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(t) = &a.task {
        cfg.task = t.parse::<Task>()?;
    }
    if let Some(m) = &a.measure {
        cfg.measure = Some(m.parse::<Measure>()?);
    }
    if let Some(s) = &a.split {
        cfg.split = s.parse::<SplitSelection>()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(p) = &a.scores {
        cfg.scorer = Scorer::ExternalFile {
            path: p.clone(),
            distance: a.scores_are_distances,
        };
    }
    if let Some(p) = &a.embeddings {
        cfg.scorer = match std::mem::take(&mut cfg.scorer) {
            Scorer::Embedding { pooling, metric, .. } => Scorer::Embedding {
                store: p.clone(),
                pooling,
                metric,
            },
            _ => Scorer::Embedding {
                store: p.clone(),
                pooling: Default::default(),
                metric: Default::default(),
            },
        };
    }
    Ok(cfg)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let cfg = build_config(&a)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let report = run(&cfg)?;
    let mut written = write_report(&report, &out, ReportFormat::Json)?;
    if format != ReportFormat::Json {
        written.extend(write_report(&report, &out, format)?);
    }
    written.push(write_timing(&report, &out)?);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for m in &report.metrics {
        let v = m.value.map_or_else(|| "NA".to_owned(), |v| format!("{v:.6}"));
        println!("{}\t{v}\tcoverage={:.3}\tn={}", m.name, m.coverage, m.n);
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_fixture(a: FixtureArgs) -> Result<()> {
    let mut spec: FixtureSpec = match &a.spec {
        Some(p) => read_fixture_spec(p)?,
        None => FixtureSpec::default(),
    };
    if let Some(v) = a.lemmas {
        spec.lemmas = v;
    }
    if let Some(v) = a.changed {
        spec.changed = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.annotators {
        spec.annotators = v;
    }
    let manifest = make_fixture(&spec, a.seed, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let reports = a
        .inputs
        .iter()
        .map(read_report_json)
        .collect::<Result<Vec<_>>>()?;
    let written = match format {
        ReportFormat::Plot => write_plots(&reports, &a.out)?,
        _ if reports.len() == 1 => write_report(&reports[0], &a.out, format)?,
        _ => {
            // one subdirectory per input keeps tables apart
            let mut all = Vec::new();
            for (i, r) in reports.iter().enumerate() {
                all.extend(write_report(r, a.out.join(format!("{i:02}")), format)?);
            }
            all
        }
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let m = &ds.manifest;
    println!("dataset\t{} {} ({})", m.name, m.version, m.language);
    println!("lemmas\t{}", ds.lemmas.len());
    println!("usages\t{}", ds.lemmas.values().map(|l| l.usages.len()).sum::<usize>());
    println!("judgments\t{}", ds.lemmas.values().map(|l| l.judgments.len()).sum::<usize>());
    for task in [
        SupportedTask::Wic,
        SupportedTask::Wsi,
        SupportedTask::LscdBinary,
        SupportedTask::LscdGraded,
        SupportedTask::Compare,
    ] {
        println!("supports {task:?}\t{}", ds.supports(task));
    }
    for (lemma, data) in &ds.lemmas {
        build_graph(&data.usages, &data.judgments, m.aggregation)
            .map_err(|e| Error::Format {
                file: lemma.clone(),
                message: e.to_string(),
            })?;
    }
    let audit = audit_graded_change(&ds, a.tolerance);
    let inconsistent = audit.iter().filter(|r| !r.consistent).count();
    for r in audit.iter().filter(|r| !r.consistent) {
        let rec = r.recomputed.map_or_else(|| "NA".to_owned(), |v| v.to_string());
        println!("audit\t{}\treleased={}\trecomputed={rec}", r.lemma, r.released);
    }
    println!("graded audit\t{} of {} lemmas consistent", audit.len() - inconsistent, audit.len());
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let data = ds
        .lemmas
        .get(&a.lemma)
        .ok_or_else(|| Error::Config(format!("no lemma {:?} in dataset", a.lemma)))?;
    let graph = build_graph(&data.usages, &data.judgments, ds.manifest.aggregation)?;
    let (clustering, loss) = brute_force_cluster(&graph, a.threshold)?;
    write_clusters(std::io::stdout().lock(), &clustering)?;
    eprintln!("loss {loss}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Fixture(a) => cmd_fixture(a),
        Command::Report(a) => cmd_report(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

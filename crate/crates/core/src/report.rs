//! Report files: TSV tables, a JSON dump, and grouped-bar SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::{EvalReport, MetricResult, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Tsv,
    Json,
    Plot,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            "plot" => Ok(ReportFormat::Plot),
            _ => Err(Error::Config(format!("unknown report format {s:?}; expected tsv, json or plot"))),
        }
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

fn text(s: Option<&str>) -> String {
    s.map_or_else(String::new, |s| s.replace(['\t', '\n'], " "))
}

fn write_file(path: &Path, content: &str) -> Result<PathBuf> {
    fs::write(path, content).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn metadata_tsv(report: &EvalReport) -> String {
    let m = &report.metadata;
    let mut s = String::from("key\tvalue\n");
    let mut row = |k: &str, v: &str| {
        let _ = writeln!(s, "{k}\t{v}");
    };
    row("config_hash", &m.config_hash);
    row("seed", &m.seed.to_string());
    row("dataset", &m.dataset);
    row("dataset_version", &m.dataset_version);
    row("task", m.task.as_str());
    row("measure", m.measure.map_or("", |x| x.as_str()));
    row("split", m.split.as_str());
    row(
        "prediction_orientation",
        m.prediction_orientation.map_or("", |o| o.as_str()),
    );
    row("gold_orientation", m.gold_orientation.map_or("", |o| o.as_str()));
    row("lemmas", &m.lemmas.len().to_string());
    s
}

pub fn predictions_tsv(report: &EvalReport) -> String {
    let mut s = String::from("lemma\tidentifier1\tidentifier2\tpair_type\tvalue\tgold\tnote\n");
    for r in &report.predictions {
        let (a, b, t) = match &r.pair {
            Some(p) => (p.id1.as_str(), p.id2.as_str(), p.pair_type.as_str()),
            None => ("", "", ""),
        };
        let _ = writeln!(
            s,
            "{}\t{a}\t{b}\t{t}\t{}\t{}\t{}",
            r.lemma,
            num(r.value),
            num(r.gold),
            text(r.note.as_deref())
        );
    }
    s
}

pub fn metrics_tsv(report: &EvalReport) -> String {
    let mut s = String::from("metric\tvalue\tcoverage\tn\tnote\n");
    for m in &report.metrics {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            m.name,
            num(m.value),
            m.coverage,
            m.n,
            text(m.note.as_deref())
        );
    }
    s
}

/// Parses a table written by [`metrics_tsv`].
pub fn read_metrics_tsv(mut input: impl Read) -> Result<Vec<MetricResult>> {
    const NAME: &str = "metrics.tsv";
    let mut buf = String::new();
    input
        .read_to_string(&mut buf)
        .map_err(|e| Error::io(NAME, e))?;
    let mut lines = buf.lines();
    if lines.next() != Some("metric\tvalue\tcoverage\tn\tnote") {
        return Err(Error::format(NAME, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let row = |m: &str| Error::row(NAME, i + 2, m);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(row("expected 5 columns"));
            }
            let value = match f[1] {
                "NA" => None,
                v => Some(v.parse().map_err(|_| row("bad value"))?),
            };
            Ok(MetricResult {
                name: f[0].to_owned(),
                value,
                coverage: f[2].parse().map_err(|_| row("bad coverage"))?,
                n: f[3].parse().map_err(|_| row("bad count"))?,
                note: (!f[4].is_empty()).then(|| f[4].to_owned()),
            })
        })
        .collect()
}

pub fn report_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// The metric a task's plot shows.
pub fn headline_metric(task: Task) -> &'static str {
    match task {
        Task::WicOrdinal => "krippendorff-alpha",
        Task::Wsi => "ari-mean",
        Task::LscdBinary => "f1",
        _ => "spearman",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One SVG per task. Each dataset is a group with one bar per run config;
/// undefined metric values leave an empty slot marked "n/a".
pub fn render_plots(reports: &[EvalReport]) -> BTreeMap<Task, String> {
    let mut by_task: BTreeMap<Task, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_task.entry(r.metadata.task).or_default().push(r);
    }
    by_task
        .into_iter()
        .map(|(task, rs)| (task, render_task(task, &rs)))
        .collect()
}

fn config_label(r: &EvalReport) -> String {
    let m = &r.metadata;
    let measure = m.measure.map_or(m.task.as_str(), |x| x.as_str());
    format!("{measure} {}", &m.config_hash[..8.min(m.config_hash.len())])
}

fn render_task(task: Task, reports: &[&EvalReport]) -> String {
    let metric = headline_metric(task);
    let mut configs: Vec<String> = reports.iter().map(|r| config_label(r)).collect();
    configs.sort();
    configs.dedup();
    let mut groups: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for r in reports {
        let ds = format!("{} {}", r.metadata.dataset, r.metadata.dataset_version);
        let v = r.metric(metric).and_then(|m| m.value);
        groups.entry(ds).or_default().insert(config_label(r), v);
    }

    let values: Vec<f64> = groups.values().flat_map(|g| g.values().flatten().copied()).collect();
    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let hi = values.iter().copied().fold(1.0f64, f64::max);
    let (bar, gap, left, top, height) = (28.0, 24.0, 60.0, 40.0, 240.0);
    let group_w = configs.len() as f64 * bar + gap;
    let width = left + groups.len() as f64 * group_w + 20.0 + 160.0;
    let total_h = top + height + 60.0;
    let y = |v: f64| top + (hi - v) / (hi - lo) * height;
    let palette = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="14">{} ({metric})</text>"#,
        task.as_str()
    );
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            width - 180.0,
            left - 6.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    for (gi, (ds, bars)) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + gi as f64 * group_w;
        for (ci, c) in configs.iter().enumerate() {
            let x = x0 + ci as f64 * bar;
            match bars.get(c).copied().flatten() {
                Some(v) => {
                    let (a, b) = (y(v.max(0.0)), y(v.min(0.0)));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{a:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {}: {v}</title></rect>"#,
                        bar - 2.0,
                        b - a,
                        palette[ci % palette.len()],
                        escape(ds),
                        escape(c)
                    );
                }
                None if bars.contains_key(c) => {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">n/a</text>"#,
                        x + bar / 2.0,
                        y(0.0) - 3.0
                    );
                }
                None => {}
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + configs.len() as f64 * bar / 2.0,
            top + height + 18.0,
            escape(ds)
        );
    }
    let legend_x = width - 170.0;
    for (ci, c) in configs.iter().enumerate() {
        let ly = top + ci as f64 * 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x}" y="{ly}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            palette[ci % palette.len()],
            legend_x + 14.0,
            ly + 9.0,
            escape(c)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one report in the given format and returns the files written.
/// `Plot` draws the single report; use [`render_plots`] to combine runs.
pub fn write_report(report: &EvalReport, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    match format {
        ReportFormat::Tsv => Ok(vec![
            write_file(&dir.join("metadata.tsv"), &metadata_tsv(report))?,
            write_file(&dir.join("predictions.tsv"), &predictions_tsv(report))?,
            write_file(&dir.join("metrics.tsv"), &metrics_tsv(report))?,
        ]),
        ReportFormat::Json => Ok(vec![write_file(&dir.join("report.json"), &report_json(report)?)?]),
        ReportFormat::Plot => write_plots(std::slice::from_ref(report), dir),
    }
}

pub fn write_plots(reports: &[EvalReport], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    render_plots(reports)
        .into_iter()
        .map(|(task, svg)| write_file(&dir.join(format!("plot-{}.svg", task.as_str())), &svg))
        .collect()
}

/// Wall-clock timing, kept apart from the reproducible report files.
pub fn write_timing(report: &EvalReport, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_file(&dir.join("timing.json"), &serde_json::to_string(&report.timing)?)
}

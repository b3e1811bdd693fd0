//! Tables and charts recomputed from metrics logs.
//!
//! Everything here reads logs only, iterates in sorted order and formats
//! numbers with fixed precision, so identical logs give identical output.

mod chart;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fewlabel_autodiff::Tensor;
use serde::Serialize;

use crate::error::{io_err, Error, Result};
use crate::metrics::{parse_metrics_jsonl, MetricsRecord};
use crate::trainer::{median, Summary};

pub use chart::bar_chart_svg;

/// Method whose median is drawn as the reference line.
pub const BASELINE: &str = "BIGGAN";

/// Column label for methods that use every label or none.
pub const NO_K: &str = "-";

/// Reads every `metrics.jsonl` below `dir` (sorted by path).
pub fn collect_logs(dir: &Path) -> Result<Vec<MetricsRecord>> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact { path: dir.to_path_buf(), reason: "log directory not found".into() });
    }
    let mut files = Vec::new();
    find_logs(dir, &mut files)?;
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(io_err(&f))?;
        out.extend(parse_metrics_jsonl(&text).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?);
    }
    if out.is_empty() {
        return Err(Error::MissingArtifact { path: dir.to_path_buf(), reason: "no metric logs".into() });
    }
    Ok(out)
}

fn find_logs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            find_logs(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == crate::trainer::METRICS_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Grid position of a run: method row and label-percentage column.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CellKey {
    pub row: String,
    pub col: String,
}

fn cell_key(r: &MetricsRecord) -> CellKey {
    match r.k_percent {
        Some(k) => CellKey { row: r.method.replace(&format!("-k{k}"), ""), col: format!("{k}%") },
        None => CellKey { row: r.method.clone(), col: NO_K.to_string() },
    }
}

/// Last record of every (cell, seed); at equal steps a collapsed record wins.
pub fn final_records(records: &[MetricsRecord]) -> BTreeMap<CellKey, BTreeMap<u64, MetricsRecord>> {
    let mut out: BTreeMap<CellKey, BTreeMap<u64, MetricsRecord>> = BTreeMap::new();
    for r in records {
        let slot = out.entry(cell_key(r)).or_default();
        let replace = match slot.get(&r.seed) {
            None => true,
            Some(old) => r.step > old.step || (r.step == old.step && r.collapsed),
        };
        if replace {
            slot.insert(r.seed, r.clone());
        }
    }
    out
}

/// Where a cell's number comes from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub table: String,
    pub row: String,
    pub col: String,
    pub text: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub steps: Vec<u64>,
    pub collapsed_seeds: Vec<u64>,
    pub embedder_ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Fid,
    InceptionScore,
}

impl Metric {
    fn of(self, r: &MetricsRecord) -> f64 {
        match self {
            Metric::Fid => r.fid_mean,
            Metric::InceptionScore => r.is_mean,
        }
    }
}

/// `"2.0"` for the median grid.
pub fn median_cell(values: &[f64]) -> String {
    format!("{:.1}", median(values).unwrap_or(f64::NAN))
}

/// `"2.0±0.82"` (mean ± population std); the std is omitted for one seed.
pub fn mean_std_cell(values: &[f64]) -> String {
    match Summary::of(values) {
        Some(s) if s.n > 1 => format!("{:.1}±{:.2}", s.mean, s.std),
        Some(s) => format!("{:.1}", s.mean),
        None => String::new(),
    }
}

/// A rendered grid plus the provenance of its cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub title: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: BTreeMap<CellKey, String>,
    pub provenance: Vec<Provenance>,
}

impl Grid {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("### {}\n\n| method |", self.title);
        for c in &self.cols {
            let _ = write!(s, " {c} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.cols.len()));
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "| {r} |");
            for c in &self.cols {
                let v = self.cells.get(&CellKey { row: r.clone(), col: c.clone() }).map_or("", String::as_str);
                let _ = write!(s, " {v} |");
            }
            s.push('\n');
        }
        s
    }
}

fn sorted_cols(keys: impl Iterator<Item = String>) -> Vec<String> {
    let set: BTreeSet<String> = keys.collect();
    let mut cols: Vec<String> = set.into_iter().collect();
    cols.sort_by(|a, b| {
        let num = |s: &str| s.trim_end_matches('%').parse::<f64>().unwrap_or(f64::INFINITY);
        num(a).total_cmp(&num(b)).then_with(|| a.cmp(b))
    });
    cols
}

/// Builds a grid whose cells are `cell(values over seeds)`.
pub fn build_grid(
    title: &str,
    finals: &BTreeMap<CellKey, BTreeMap<u64, MetricsRecord>>,
    metric: Metric,
    cell: impl Fn(&[f64]) -> String,
) -> Grid {
    let rows: Vec<String> = finals.keys().map(|k| k.row.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let cols = sorted_cols(finals.keys().map(|k| k.col.clone()));
    let mut cells = BTreeMap::new();
    let mut provenance = Vec::new();
    for (key, seeds) in finals {
        let values: Vec<f64> = seeds.values().map(|r| metric.of(r)).collect();
        let text = cell(&values);
        let first = seeds.values().next().expect("nonempty");
        provenance.push(Provenance {
            table: title.to_string(),
            row: key.row.clone(),
            col: key.col.clone(),
            text: text.clone(),
            method: first.method.clone(),
            seeds: seeds.keys().copied().collect(),
            steps: seeds.values().map(|r| r.step).collect(),
            collapsed_seeds: seeds.values().filter(|r| r.collapsed).map(|r| r.seed).collect(),
            embedder_ids: seeds.values().map(|r| r.embedder_id.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
        });
        cells.insert(key.clone(), text);
    }
    Grid { title: title.to_string(), rows, cols, cells, provenance }
}

/// Files written by [`write_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub tables: PathBuf,
    pub provenance: PathBuf,
    pub charts: Vec<PathBuf>,
}

/// Report outputs that can be selected individually.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportTarget {
    MedianGrid,
    MeanStdGrid,
    FidChart,
}

impl ReportTarget {
    pub const ALL: [ReportTarget; 3] = [ReportTarget::MedianGrid, ReportTarget::MeanStdGrid, ReportTarget::FidChart];
}

impl std::str::FromStr for ReportTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "median_grid" => Ok(ReportTarget::MedianGrid),
            "mean_std_grid" => Ok(ReportTarget::MeanStdGrid),
            "fid_chart" => Ok(ReportTarget::FidChart),
            _ => Err(format!("unknown report target {s:?}")),
        }
    }
}

/// Median grids, mean±std grids and median-FID bar charts for all logs
/// below `log_dir`, written to `out`.
pub fn write_report(log_dir: &Path, out: &Path) -> Result<ReportFiles> {
    write_report_targets(log_dir, out, &ReportTarget::ALL)
}

/// Like [`write_report`] but restricted to `targets`.
pub fn write_report_targets(log_dir: &Path, out: &Path, targets: &[ReportTarget]) -> Result<ReportFiles> {
    let records = collect_logs(log_dir)?;
    let finals = final_records(&records);
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut grids = Vec::new();
    if targets.contains(&ReportTarget::MedianGrid) {
        grids.push(build_grid("Median FID", &finals, Metric::Fid, median_cell));
        grids.push(build_grid("Median IS", &finals, Metric::InceptionScore, median_cell));
    }
    if targets.contains(&ReportTarget::MeanStdGrid) {
        grids.push(build_grid("FID mean±std", &finals, Metric::Fid, mean_std_cell));
        grids.push(build_grid("IS mean±std", &finals, Metric::InceptionScore, mean_std_cell));
    }
    let mut md = String::from("# Results\n\nFinal metrics per run; medians and population standard deviations over seeds.\n\n");
    let mut provenance = Vec::new();
    for g in &grids {
        md.push_str(&g.to_markdown());
        md.push('\n');
        provenance.extend(g.provenance.iter().cloned());
    }
    let baseline = finals
        .iter()
        .find(|(k, _)| k.row == BASELINE)
        .and_then(|(_, seeds)| median(&seeds.values().map(|r| r.fid_mean).collect::<Vec<_>>()));
    let mut charts = Vec::new();
    let cols = sorted_cols(finals.keys().map(|k| k.col.clone()));
    let chart_cols = if targets.contains(&ReportTarget::FidChart) { cols.len() } else { 0 };
    for col in cols
        .iter()
        .filter(|c| *c != NO_K)
        .chain(cols.iter().filter(|c| *c == NO_K).take(usize::from(cols.len() == 1)))
        .take(chart_cols)
    {
        let bars: Vec<(String, f64)> = finals
            .iter()
            .filter(|(k, _)| &k.col == col || k.col == NO_K)
            .map(|(k, seeds)| (k.row.clone(), median(&seeds.values().map(|r| r.fid_mean).collect::<Vec<_>>()).unwrap_or(f64::NAN)))
            .collect();
        let name = if col == NO_K { "median_fid.svg".to_string() } else { format!("median_fid_k{}.svg", col.trim_end_matches('%')) };
        let title = if col == NO_K { "Median FID".to_string() } else { format!("Median FID, {col} labels") };
        let path = out.join(name);
        std::fs::write(&path, bar_chart_svg(&title, &bars, baseline)).map_err(io_err(&path))?;
        charts.push(path);
    }
    let tables = out.join("tables.md");
    std::fs::write(&tables, md).map_err(io_err(&tables))?;
    let prov = out.join("provenance.json");
    std::fs::write(&prov, serde_json::to_string_pretty(&provenance)?).map_err(io_err(&prov))?;
    Ok(ReportFiles { tables, provenance: prov, charts })
}

/// Writes up to 64 images `[N, C, H, W]` in `[-1, 1]` as an 8×8 PNG grid.
pub fn write_preview(path: &Path, images: &Tensor<f32>) -> Result<()> {
    let (n, c, h, w) = images.dims4();
    let side = 8;
    let mut img = image::RgbImage::new((side * w) as u32, (side * h) as u32);
    let data = images.data();
    for i in 0..n.min(side * side) {
        let (gy, gx) = (i / side, i % side);
        for y in 0..h {
            for x in 0..w {
                let px = |ch: usize| {
                    let v = data[((i * c + ch.min(c - 1)) * h + y) * w + x];
                    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
                };
                img.put_pixel((gx * w + x) as u32, (gy * h + y) as u32, image::Rgb([px(0), px(1), px(2)]));
            }
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

//! Scanpath similarity (DTW, Levenshtein, Sequence Score), per-scanpath
//! summary statistics, pairing schemes and the human-data ingester.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chartgen::{aoi_at, Region, RenderedChart, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::simulator::Scanpath;
use crate::taskgen::Task;

// ---------------------------------------------------------------------------
// Distances

/// Dynamic time warping with Euclidean pixel cost and steps down, right, diagonal.
pub fn dtw_points(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("dtw needs two non-empty scanpaths".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in a {
        cur[0] = f64::INFINITY;
        for (j, q) in b.iter().enumerate() {
            let cost = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            cur[j + 1] = cost + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

pub fn dtw(a: &Scanpath, b: &Scanpath) -> Result<f64> {
    dtw_points(&a.fixations, &b.fixations)
}

/// Unit-cost edit distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Regular grid over an image; fixations map to row-major cell symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPartition {
    pub cols: usize,
    pub rows: usize,
    pub width: f64,
    pub height: f64,
}

impl Default for GridPartition {
    fn default() -> Self {
        GridPartition::over((IMAGE_SIZE as u32, IMAGE_SIZE as u32))
    }
}

impl GridPartition {
    /// The 20x20 action grid stretched over an image of the given size.
    pub fn over(size: (u32, u32)) -> Self {
        GridPartition { cols: crate::vision::GRID, rows: crate::vision::GRID, width: size.0 as f64, height: size.1 as f64 }
    }

    pub fn symbol(&self, p: [f64; 2]) -> usize {
        let c = ((p[0] / self.width * self.cols as f64).floor().max(0.0) as usize).min(self.cols - 1);
        let r = ((p[1] / self.height * self.rows as f64).floor().max(0.0) as usize).min(self.rows - 1);
        r * self.cols + c
    }
}

pub fn levenshtein(a: &Scanpath, b: &Scanpath, grid: &GridPartition) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("levenshtein needs two non-empty scanpaths".into()));
    }
    let sa: Vec<usize> = a.fixations.iter().map(|p| grid.symbol(*p)).collect();
    let sb: Vec<usize> = b.fixations.iter().map(|p| grid.symbol(*p)).collect();
    Ok(edit_distance(&sa, &sb))
}

// ---------------------------------------------------------------------------
// AOI letters and Sequence Score

pub const BACKGROUND: usize = 0;

/// Maps fixations to AOI letters: the smallest AOI under the fixation, or background.
#[derive(Debug, Clone)]
pub struct AoiAlphabet<'a> {
    chart: &'a RenderedChart,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AoiSequence {
    pub letters: Vec<usize>,
}

impl<'a> AoiAlphabet<'a> {
    pub fn new(chart: &'a RenderedChart) -> Self {
        AoiAlphabet { chart }
    }

    /// Fixation in original-size pixels to chart pixels.
    fn to_chart(&self, p: [f64; 2]) -> (i32, i32) {
        let (w, h) = self.chart.original_size;
        let s = IMAGE_SIZE as f64;
        let x = (p[0] * s / w as f64).floor().clamp(0.0, s - 1.0) as i32;
        let y = (p[1] * s / h as f64).floor().clamp(0.0, s - 1.0) as i32;
        (x, y)
    }

    /// Letter of a fixation: AOI index + 1, or [`BACKGROUND`].
    pub fn letter(&self, p: [f64; 2]) -> usize {
        let pt = self.to_chart(p);
        aoi_at(self.chart, pt)
            .ok()
            .flatten()
            .and_then(|a| self.chart.aois.iter().position(|b| std::ptr::eq(a, b)))
            .map_or(BACKGROUND, |i| i + 1)
    }

    pub fn region(&self, p: [f64; 2]) -> Option<Region> {
        aoi_at(self.chart, self.to_chart(p)).ok().flatten().map(|a| a.region())
    }

    pub fn sequence(&self, s: &Scanpath) -> AoiSequence {
        AoiSequence { letters: s.fixations.iter().map(|p| self.letter(*p)).collect() }
    }

    pub fn inside(&self, p: [f64; 2], aoi_id: &str) -> bool {
        let (x, y) = self.to_chart(p);
        self.chart.aoi(aoi_id).is_some_and(|a| a.bbox.contains(x, y))
    }
}

pub fn collapse<T: PartialEq + Clone>(s: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(s.len());
    for x in s {
        if out.last() != Some(x) {
            out.push(x.clone());
        }
    }
    out
}

/// Needleman-Wunsch global alignment score (maximized).
pub fn alignment_score<T: PartialEq>(a: &[T], b: &[T], matched: f64, mismatch: f64, gap: f64) -> f64 {
    let mut prev: Vec<f64> = (0..=b.len()).map(|j| j as f64 * gap).collect();
    let mut cur = vec![0.0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = (i + 1) as f64 * gap;
        for (j, y) in b.iter().enumerate() {
            let diag = prev[j] + if x == y { matched } else { mismatch };
            cur[j + 1] = diag.max(prev[j + 1] + gap).max(cur[j] + gap);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Alignment similarity of collapsed letter sequences, in [0, 1].
pub fn sequence_score_letters<T: PartialEq + Clone>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sequence score needs two non-empty sequences".into()));
    }
    let (ca, cb) = (collapse(a), collapse(b));
    Ok(alignment_score(&ca, &cb, 1.0, 0.0, 0.0) / ca.len().max(cb.len()) as f64)
}

pub fn sequence_score(a: &Scanpath, b: &Scanpath, aois: &AoiAlphabet<'_>) -> Result<f64> {
    sequence_score_letters(&aois.sequence(a).letters, &aois.sequence(b).letters)
}

// ---------------------------------------------------------------------------
// Summary statistics

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub num_fixations: usize,
    /// Percentages in [0, 100].
    pub task_aoi_ratio: f64,
    pub title_ratio: f64,
    pub mark_ratio: f64,
    pub axis_ratio: f64,
    pub transitions: usize,
    pub revisit_title: usize,
    pub revisit_mark: usize,
    pub revisit_axis: usize,
}

/// Counts over a sequence of regions (`None` is background).
pub fn region_stats(regions: &[Option<Region>]) -> SummaryStats {
    let n = regions.len();
    let pct = |r: Region| {
        if n == 0 {
            0.0
        } else {
            100.0 * regions.iter().filter(|x| **x == Some(r)).count() as f64 / n as f64
        }
    };
    let transitions = regions.windows(2).filter(|w| w[0] != w[1]).count();
    let revisits = |r: Region| {
        let entries = regions
            .iter()
            .enumerate()
            .filter(|(i, x)| **x == Some(r) && (*i == 0 || regions[i - 1] != Some(r)))
            .count();
        entries.saturating_sub(1)
    };
    SummaryStats {
        num_fixations: n,
        task_aoi_ratio: 0.0,
        title_ratio: pct(Region::Title),
        mark_ratio: pct(Region::Mark),
        axis_ratio: pct(Region::Axis),
        transitions,
        revisit_title: revisits(Region::Title),
        revisit_mark: revisits(Region::Mark),
        revisit_axis: revisits(Region::Axis),
    }
}

pub fn summary_stats(s: &Scanpath, chart: &RenderedChart, task: &Task) -> Result<SummaryStats> {
    let (w, h) = chart.original_size;
    if let Some(p) = s.fixations.iter().find(|p| !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64)) {
        return Err(Error::Bounds(format!("fixation ({}, {}) outside {w}x{h}", p[0], p[1])));
    }
    let alphabet = AoiAlphabet::new(chart);
    let regions: Vec<Option<Region>> = s.fixations.iter().map(|p| alphabet.region(*p)).collect();
    let mut stats = region_stats(&regions);
    if !s.is_empty() {
        let on_task = s
            .fixations
            .iter()
            .filter(|p| task.task_aoi_ids.iter().any(|id| alphabet.inside(**p, id)))
            .count();
        stats.task_aoi_ratio = 100.0 * on_task as f64 / s.len() as f64;
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Pairing

/// Mean over all cross pairs, and the per-prediction optimum averaged over predictions.
pub fn mean_best<F>(predicted: &[Scanpath], reference: &[Scanpath], higher_is_better: bool, metric: F) -> Result<(f64, f64)>
where
    F: Fn(&Scanpath, &Scanpath) -> Result<f64>,
{
    if predicted.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("mean/best pairing needs non-empty sets".into()));
    }
    let mut total = 0.0;
    let mut best_sum = 0.0;
    for p in predicted {
        let mut best = if higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY };
        for r in reference {
            let v = metric(p, r)?;
            total += v;
            best = if higher_is_better { best.max(v) } else { best.min(v) };
        }
        best_sum += best;
    }
    Ok((total / (predicted.len() * reference.len()) as f64, best_sum / predicted.len() as f64))
}

/// Human-vs-human baseline: the mean includes each scanpath paired with
/// itself, the best does not.
pub fn leave_one_out<F>(humans: &[Scanpath], higher_is_better: bool, metric: F) -> Result<(f64, f64)>
where
    F: Fn(&Scanpath, &Scanpath) -> Result<f64>,
{
    let n = humans.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("leave-one-out needs at least 2 scanpaths, got {n}")));
    }
    let mut total = 0.0;
    let mut best_sum = 0.0;
    for (i, a) in humans.iter().enumerate() {
        let mut best = if higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY };
        for (j, b) in humans.iter().enumerate() {
            let v = metric(a, b)?;
            total += v;
            if i != j {
                best = if higher_is_better { best.max(v) } else { best.min(v) };
            }
        }
        best_sum += best;
    }
    Ok((total / (n * n) as f64, best_sum / n as f64))
}

// ---------------------------------------------------------------------------
// Ingestion

pub const CSV_COLUMNS: [&str; 5] = ["chart_id", "task_id", "fix_index", "x", "y"];

/// Image bounds used to validate ingested coordinates.
#[derive(Debug, Clone, Default)]
pub struct Bounds {
    pub per_chart: HashMap<String, (u32, u32)>,
    pub default: Option<(u32, u32)>,
}

impl Bounds {
    pub fn uniform(size: (u32, u32)) -> Self {
        Bounds { per_chart: HashMap::new(), default: Some(size) }
    }

    fn check(&self, chart_id: &str, p: [f64; 2], location: impl Fn() -> String) -> Result<()> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::parse(location(), "non-finite coordinate"));
        }
        let Some((w, h)) = self.per_chart.get(chart_id).copied().or(self.default) else {
            return Err(Error::parse(location(), format!("no image bounds declared for chart {chart_id:?}")));
        };
        if p[0] < 0.0 || p[1] < 0.0 || p[0] >= w as f64 || p[1] >= h as f64 {
            return Err(Error::parse(location(), format!("fixation ({}, {}) outside {w}x{h}", p[0], p[1])));
        }
        Ok(())
    }
}

/// Reads scanpaths from JSON Lines or from CSV (`chart_id,task_id,fix_index,x,y`,
/// optional `method`). In CSV, rows group by (chart_id, task_id, method); a
/// fix_index that does not increase starts a new scanpath within a group.
pub fn ingest_scanpaths(path: &Path, bounds: &Bounds) -> Result<Vec<Scanpath>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        || !text.trim_start().starts_with('{') && !text.trim().is_empty();
    if is_csv {
        parse_csv(&text, bounds)
    } else {
        parse_jsonl(&text, bounds)
    }
}

pub fn parse_jsonl(text: &str, bounds: &Bounds) -> Result<Vec<Scanpath>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("line {}", n + 1);
        let s: Scanpath = serde_json::from_str(line).map_err(|e| Error::parse(loc(), e.to_string()))?;
        if s.fixations.is_empty() {
            return Err(Error::parse(loc(), "scanpath has no fixations"));
        }
        for p in &s.fixations {
            bounds.check(&s.chart_id, *p, loc)?;
        }
        out.push(s);
    }
    Ok(out)
}

pub fn parse_csv(text: &str, bounds: &Bounds) -> Result<Vec<Scanpath>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::parse("line 1", e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (k, name) in CSV_COLUMNS.iter().enumerate() {
        idx[k] = col(name).ok_or_else(|| Error::parse("line 1", format!("missing column {name:?}")))?;
    }
    let method_col = col("method");

    // Insertion-ordered groups.
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: HashMap<(String, String, String), Vec<Vec<(i64, [f64; 2])>>> = HashMap::new();
    for (n, rec) in reader.records().enumerate() {
        let line = n + 2;
        let loc = || format!("line {line}");
        let rec = rec.map_err(|e| Error::parse(loc(), e.to_string()))?;
        let field = |k: usize| rec.get(idx[k]).ok_or_else(|| Error::parse(loc(), format!("missing {}", CSV_COLUMNS[k])));
        let chart_id = field(0)?.to_string();
        let task_id = field(1)?.to_string();
        let fix: i64 = field(2)?.parse().map_err(|_| Error::parse(loc(), "fix_index is not an integer"))?;
        let x: f64 = field(3)?.parse().map_err(|_| Error::parse(loc(), "x is not a number"))?;
        let y: f64 = field(4)?.parse().map_err(|_| Error::parse(loc(), "y is not a number"))?;
        bounds.check(&chart_id, [x, y], loc)?;
        let method = method_col.and_then(|c| rec.get(c)).unwrap_or("human").to_string();
        let key = (chart_id, task_id, method);
        let paths = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        let restart = paths.last().and_then(|p| p.last()).map_or(true, |(last, _)| fix <= *last);
        if restart {
            paths.push(Vec::new());
        }
        paths.last_mut().expect("just pushed").push((fix, [x, y]));
    }
    let mut out = Vec::new();
    for key in order {
        for rows in groups.remove(&key).unwrap_or_default() {
            out.push(Scanpath {
                chart_id: key.0.clone(),
                task_id: key.1.clone(),
                method: key.2.clone(),
                fixations: rows.into_iter().map(|(_, p)| p).collect(),
                cell_trace: Vec::new(),
                answer: None,
                op_trace: Vec::new(),
            });
        }
    }
    Ok(out)
}

pub fn to_csv(scanpaths: &[Scanpath]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Validation(format!("csv encoding: {e}"));
    w.write_record(["chart_id", "task_id", "method", "fix_index", "x", "y"]).map_err(io)?;
    for s in scanpaths {
        for (i, p) in s.fixations.iter().enumerate() {
            w.write_record([
                s.chart_id.as_str(),
                s.task_id.as_str(),
                s.method.as_str(),
                &i.to_string(),
                &p[0].to_string(),
                &p[1].to_string(),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub method: String,
    pub scanpaths: usize,
    pub sequence_score_mean: Option<f64>,
    pub sequence_score_best: Option<f64>,
    pub lev_mean: Option<f64>,
    pub lev_best: Option<f64>,
    pub dtw_mean: Option<f64>,
    pub dtw_best: Option<f64>,
    pub num_fixations_mean: f64,
    pub num_fixations_sd: f64,
    pub task_aoi_ratio: f64,
    pub title_ratio: f64,
    pub mark_ratio: f64,
    pub axis_ratio: f64,
    pub fixation_transitions: f64,
    pub revisit_title: f64,
    pub revisit_mark: f64,
    pub revisit_axis: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
}

pub const REFERENCE_METHOD: &str = "reference";

/// Charts and tasks needed to interpret scanpaths.
pub struct CorpusView<'a> {
    pub charts: HashMap<String, &'a RenderedChart>,
    pub tasks: HashMap<String, &'a Task>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 } else { 0.0 };
    (m, var.sqrt())
}

fn avg(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per (task family, method). Similarity columns pair each task's
/// predictions with that task's reference scanpaths; the reference row
/// holds the leave-one-out baseline.
pub fn build_report(predicted: &[Scanpath], reference: &[Scanpath], corpus: &CorpusView<'_>) -> Result<MetricReport> {
    let lookup = |s: &Scanpath| -> Result<(&RenderedChart, &Task)> {
        let chart = corpus
            .charts
            .get(&s.chart_id)
            .ok_or_else(|| Error::Validation(format!("unknown chart {:?}", s.chart_id)))?;
        let task = corpus
            .tasks
            .get(&s.task_id)
            .ok_or_else(|| Error::Validation(format!("unknown task {:?}", s.task_id)))?;
        Ok((chart, task))
    };
    let mut refs_by_task: BTreeMap<&str, Vec<Scanpath>> = BTreeMap::new();
    for r in reference {
        lookup(r)?;
        refs_by_task.entry(r.task_id.as_str()).or_default().push(r.clone());
    }
    // (family, method) -> task_id -> scanpaths
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<Scanpath>>> = BTreeMap::new();
    for s in predicted {
        let (_, task) = lookup(s)?;
        groups
            .entry((task.kind.family().to_string(), s.method.clone()))
            .or_default()
            .entry(s.task_id.clone())
            .or_default()
            .push(s.clone());
    }
    for r in reference {
        let (_, task) = lookup(r)?;
        groups
            .entry((task.kind.family().to_string(), REFERENCE_METHOD.to_string()))
            .or_default()
            .entry(r.task_id.clone())
            .or_default()
            .push(r.clone());
    }

    let mut rows = Vec::new();
    for ((family, method), by_task) in groups {
        let mut row = ReportRow { task: family, method: method.clone(), ..ReportRow::default() };
        let (mut ss, mut lev, mut dt) = ((vec![], vec![]), (vec![], vec![]), (vec![], vec![]));
        let mut stats = Vec::new();
        for (task_id, paths) in &by_task {
            let (chart, task) = lookup(&paths[0])?;
            for p in paths {
                stats.push(summary_stats(p, chart, task)?);
            }
            let alphabet = AoiAlphabet::new(chart);
            let grid = GridPartition::over(chart.original_size);
            let ss_f = |a: &Scanpath, b: &Scanpath| sequence_score(a, b, &alphabet);
            let lev_f = |a: &Scanpath, b: &Scanpath| levenshtein(a, b, &grid).map(|v| v as f64);
            let pairs = if method == REFERENCE_METHOD {
                if paths.len() < 2 {
                    continue;
                }
                (
                    leave_one_out(paths, true, ss_f)?,
                    leave_one_out(paths, false, lev_f)?,
                    leave_one_out(paths, false, dtw)?,
                )
            } else {
                let Some(refs) = refs_by_task.get(task_id.as_str()) else { continue };
                (
                    mean_best(paths, refs, true, ss_f)?,
                    mean_best(paths, refs, false, lev_f)?,
                    mean_best(paths, refs, false, dtw)?,
                )
            };
            ss.0.push(pairs.0 .0);
            ss.1.push(pairs.0 .1);
            lev.0.push(pairs.1 .0);
            lev.1.push(pairs.1 .1);
            dt.0.push(pairs.2 .0);
            dt.1.push(pairs.2 .1);
        }
        row.scanpaths = stats.len();
        (row.sequence_score_mean, row.sequence_score_best) = (avg(&ss.0), avg(&ss.1));
        (row.lev_mean, row.lev_best) = (avg(&lev.0), avg(&lev.1));
        (row.dtw_mean, row.dtw_best) = (avg(&dt.0), avg(&dt.1));
        let col = |f: &dyn Fn(&SummaryStats) -> f64| stats.iter().map(f).collect::<Vec<f64>>();
        (row.num_fixations_mean, row.num_fixations_sd) = mean_sd(&col(&|s| s.num_fixations as f64));
        row.task_aoi_ratio = mean_sd(&col(&|s| s.task_aoi_ratio)).0;
        row.title_ratio = mean_sd(&col(&|s| s.title_ratio)).0;
        row.mark_ratio = mean_sd(&col(&|s| s.mark_ratio)).0;
        row.axis_ratio = mean_sd(&col(&|s| s.axis_ratio)).0;
        row.fixation_transitions = mean_sd(&col(&|s| s.transitions as f64)).0;
        row.revisit_title = mean_sd(&col(&|s| s.revisit_title as f64)).0;
        row.revisit_mark = mean_sd(&col(&|s| s.revisit_mark as f64)).0;
        row.revisit_axis = mean_sd(&col(&|s| s.revisit_axis as f64)).0;
        rows.push(row);
    }
    Ok(MetricReport { rows })
}

pub const REPORT_COLUMNS: [&str; 19] = [
    "task",
    "method",
    "scanpaths",
    "sequence_score_mean",
    "sequence_score_best",
    "lev_mean",
    "lev_best",
    "dtw_mean",
    "dtw_best",
    "num_fixations_mean",
    "num_fixations_sd",
    "task_aoi_ratio",
    "title_ratio",
    "mark_ratio",
    "axis_ratio",
    "fixation_transitions",
    "revisit_title",
    "revisit_mark",
    "revisit_axis",
];

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.task.clone(),
                r.method.clone(),
                r.scanpaths.to_string(),
                opt(r.sequence_score_mean),
                opt(r.sequence_score_best),
                opt(r.lev_mean),
                opt(r.lev_best),
                opt(r.dtw_mean),
                opt(r.dtw_best),
                r.num_fixations_mean.to_string(),
                r.num_fixations_sd.to_string(),
                r.task_aoi_ratio.to_string(),
                r.title_ratio.to_string(),
                r.mark_ratio.to_string(),
                r.axis_ratio.to_string(),
                r.fixation_transitions.to_string(),
                r.revisit_title.to_string(),
                r.revisit_mark.to_string(),
                r.revisit_axis.to_string(),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

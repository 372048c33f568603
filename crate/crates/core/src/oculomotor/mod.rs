//! Low-level gaze control: one learned policy per subtask kind, the
//! environments they are trained in, and subtask execution against memory.

mod env;
mod net;
mod ppo;

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

pub use env::{GazeEpisode, RewardConfig, StepResult, SubtaskKind, DEFAULT_GLOBAL_CAP, DEFAULT_STEP_CAP};
pub use net::{log_softmax, param_count, Forward, NetConfig, PolicyParams};
pub use ppo::{
    act, ppo_train, ppo_train_from, sample_loss_grad, select, ActMode, BatchLog, EpisodeSource, LossTerms,
    PpoConfig, TrainOutcome, LOG_HEADER,
};

use crate::chartgen::{Aoi, AoiKind, BBox, RenderedChart};
use crate::cognitive::SubtaskOp;
use crate::error::{Error, Result};
use crate::memory::{Memory, MemoryEvent, MemoryItem};
use crate::rng::SimRng;
use crate::vision::{self, bbox_cell, read_text, sample_pixel_with, to_cell, GridCoord, Scene, CELL, CHANNELS, GRID};

// ---------------------------------------------------------------------------
// Checkpoints

const MAGIC: &[u8; 8] = b"CGAZEPOL";
const VERSION: u32 = 1;
const ENDIAN_TAG: u32 = 0x0102_0304;

impl PolicyParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            ENDIAN_TAG,
            self.config.conv_channels as u32,
            self.config.hidden as u32,
            CHANNELS as u32,
            GRID as u32,
            self.weights.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for w in &self.weights {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::parse("policy checkpoint", m);
        if bytes.len() < 36 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        if word(0) != VERSION {
            return Err(bad(&format!("unsupported version {}", word(0))));
        }
        if word(1) != ENDIAN_TAG {
            return Err(bad("endianness tag mismatch"));
        }
        let config = NetConfig { conv_channels: word(2) as usize, hidden: word(3) as usize };
        if word(4) as usize != CHANNELS || word(5) as usize != GRID {
            return Err(bad("observation shape mismatch"));
        }
        let n = word(6) as usize;
        if n != param_count(config) {
            return Err(bad(&format!("{n} weights do not match layer sizes")));
        }
        let body = &bytes[36..];
        if body.len() != 4 * n {
            return Err(bad("truncated weights"));
        }
        let weights: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let p = PolicyParams { config, weights };
        if !p.is_finite() {
            return Err(bad("non-finite weight"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One policy per subtask kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub search: PolicyParams,
    pub find_mark: PolicyParams,
    pub read_value: PolicyParams,
}

impl PolicySet {
    pub fn get(&self, kind: SubtaskKind) -> &PolicyParams {
        match kind {
            SubtaskKind::Search => &self.search,
            SubtaskKind::FindMark => &self.find_mark,
            SubtaskKind::ReadValue => &self.read_value,
        }
    }

    pub fn checkpoint_path(dir: &Path, kind: SubtaskKind) -> std::path::PathBuf {
        dir.join(format!("{}.policy", kind.name()))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for kind in SubtaskKind::ALL {
            self.get(kind).save(&Self::checkpoint_path(dir, kind))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |kind| {
            let path = Self::checkpoint_path(dir, kind);
            if !path.exists() {
                return Err(Error::Config(format!("missing policy checkpoint {}", path.display())));
            }
            PolicyParams::load(&path)
        };
        Ok(PolicySet {
            search: load(SubtaskKind::Search)?,
            find_mark: load(SubtaskKind::FindMark)?,
            read_value: load(SubtaskKind::ReadValue)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Target resolution shared by training environments and subtask execution

fn numeric_eq(a: &str, b: &str) -> bool {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() < 1e-9,
        _ => false,
    }
}

/// Text AOIs whose text equals the query (case-insensitive, or numerically).
pub fn search_targets(chart: &RenderedChart, query: &str) -> Vec<Aoi> {
    chart
        .aois
        .iter()
        .filter(|a| {
            a.text
                .as_deref()
                .is_some_and(|t| t.eq_ignore_ascii_case(query.trim()) || numeric_eq(t, query))
        })
        .cloned()
        .collect()
}

fn point_rect_distance(p: (f64, f64), b: &BBox) -> f64 {
    let dx = (b.x0 as f64 - p.0).max(0.0).max(p.0 - b.x1 as f64);
    let dy = (b.y0 as f64 - p.1).max(0.0).max(p.1 - b.y1 as f64);
    (dx * dx + dy * dy).sqrt()
}

fn cell_center(c: GridCoord) -> (f64, f64) {
    ((c.col * CELL) as f64 + CELL as f64 / 2.0, (c.row * CELL) as f64 + CELL as f64 / 2.0)
}

/// The bar belonging to the category label nearest the reference cell.
pub fn find_mark_target(chart: &RenderedChart, reference: GridCoord) -> Option<(usize, Aoi)> {
    let datum = chart
        .aois
        .iter()
        .filter(|a| a.kind == AoiKind::CategoryLabel)
        .min_by(|a, b| {
            let da = bbox_cell(&a.bbox).distance(reference);
            let db = bbox_cell(&b.bbox).distance(reference);
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        })?
        .datum_index?;
    Some((datum, chart.mark_of(datum)?.clone()))
}

/// The AOI carrying the value of the bar whose tip is at the reference cell
/// (or, failing that, the bar nearest it), and the value it shows. Thin bars
/// share cells, so a longer neighbour can pass through a shorter bar's tip cell.
pub fn read_value_target(chart: &RenderedChart, reference: GridCoord) -> Option<(usize, Aoi, f64)> {
    let p = cell_center(reference);
    let tip_here = |a: &Aoi| a.datum_index.and_then(|d| tip_cell(chart, d)) == Some(reference);
    let datum = chart
        .aois
        .iter()
        .filter(|a| a.kind == AoiKind::Mark)
        .min_by(|a, b| {
            let da = (!tip_here(a), point_rect_distance(p, &a.bbox));
            let db = (!tip_here(b), point_rect_distance(p, &b.bbox));
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        })?
        .datum_index?;
    let value = chart.spec.data[datum].value;
    if let Some(label) = chart.value_label_of(datum) {
        return Some((datum, label.clone(), value));
    }
    let tick = chart.nearest_tick(value)?;
    let shown = tick.datum_index? as f64 * chart.spec.tick_step;
    Some((datum, tick.clone(), shown))
}

/// Cell holding the far end of a bar.
pub fn tip_cell(chart: &RenderedChart, datum: usize) -> Option<GridCoord> {
    let (x, y) = chart.mark_tip(datum)?;
    to_cell((x.clamp(0, 319), y.clamp(0, 319))).ok()
}

// ---------------------------------------------------------------------------
// Training environments

/// A chart prepared for gaze episodes.
#[derive(Debug, Clone)]
pub struct PreparedChart {
    pub chart: Arc<RenderedChart>,
    pub scene: Arc<Scene>,
}

impl PreparedChart {
    pub fn new(chart: RenderedChart) -> Self {
        let scene = Scene::new(&chart);
        PreparedChart { chart: Arc::new(chart), scene: Arc::new(scene) }
    }
}

/// Synthetic episodes for one subtask kind, drawn from a pool of charts.
pub struct SubtaskEnv {
    pub kind: SubtaskKind,
    pub pool: Vec<PreparedChart>,
    pub step_cap: usize,
    pub fovea_radius: usize,
    pub reward: RewardConfig,
}

fn jitter<R: Rng + ?Sized>(c: GridCoord, rng: &mut R) -> GridCoord {
    let mut j = |v: usize| (v as i64 + rng.gen_range(-1..=1)).clamp(0, GRID as i64 - 1) as usize;
    GridCoord { col: j(c.col), row: j(c.row) }
}

impl SubtaskEnv {
    pub fn new(kind: SubtaskKind, pool: Vec<PreparedChart>) -> Self {
        SubtaskEnv { kind, pool, step_cap: DEFAULT_STEP_CAP, fovea_radius: vision::DEFAULT_FOVEA_RADIUS, reward: RewardConfig::default() }
    }

    fn episode(&self, pc: &PreparedChart, targets: Vec<Aoi>, reference: Option<GridCoord>, start: GridCoord) -> GazeEpisode {
        let mut ep = GazeEpisode::new(pc.chart.clone(), pc.scene.clone(), targets, reference, start, self.step_cap);
        ep.fovea_radius = self.fovea_radius;
        ep.reward = self.reward;
        ep
    }

    /// Builds an episode for a given datum (ignored for search).
    pub fn episode_for<R: Rng + ?Sized>(&self, pc: &PreparedChart, datum: usize, rng: &mut R) -> Option<GazeEpisode> {
        let chart = &pc.chart;
        match self.kind {
            SubtaskKind::Search => {
                let texts: Vec<&Aoi> = chart.aois.iter().filter(|a| a.text.is_some()).collect();
                let labels: Vec<&&Aoi> = texts.iter().filter(|a| a.kind == AoiKind::CategoryLabel).collect();
                let pick: &Aoi = if rng.gen_bool(0.7) && !labels.is_empty() {
                    labels.choose(rng)?
                } else {
                    texts.choose(rng)?
                };
                let targets = search_targets(chart, pick.text.as_deref()?);
                let start = GridCoord::from_index(rng.gen_range(0..GRID * GRID));
                Some(self.episode(pc, targets, None, start))
            }
            SubtaskKind::FindMark => {
                let mark = chart.mark_of(datum)?;
                if mark.bbox.is_empty() {
                    return None;
                }
                let reference = bbox_cell(&chart.label_of(datum)?.bbox);
                Some(self.episode(pc, vec![mark.clone()], Some(reference), jitter(reference, rng)))
            }
            SubtaskKind::ReadValue => {
                let reference = tip_cell(chart, datum)?;
                if chart.mark_of(datum)?.bbox.is_empty() {
                    return None;
                }
                let (_, target, _) = read_value_target(chart, reference)?;
                Some(self.episode(pc, vec![target], Some(reference), jitter(reference, rng)))
            }
        }
    }
}

impl EpisodeSource for SubtaskEnv {
    fn sample(&self, rng: &mut SimRng) -> GazeEpisode {
        loop {
            let pc = self.pool.choose(rng).expect("non-empty chart pool");
            let datum = rng.gen_range(0..pc.chart.spec.data.len());
            if let Some(ep) = self.episode_for(pc, datum, rng) {
                return ep;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Subtask execution

pub struct SubtaskContext<'a> {
    pub chart: &'a PreparedChart,
    pub policies: &'a PolicySet,
    pub fovea_radius: usize,
    pub reward: RewardConfig,
    pub mode: ActMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskResult {
    pub cells: Vec<GridCoord>,
    pub outcome: String,
    pub hit: bool,
    pub events: Vec<MemoryEvent>,
}

/// The finding a successful subtask adds to memory.
pub fn finding_for(chart: &RenderedChart, op: &SubtaskOp) -> Option<MemoryItem> {
    match op {
        SubtaskOp::FindAssociatedMark { reference } => {
            let (datum, _) = find_mark_target(chart, *reference)?;
            Some(MemoryItem::mark(*reference, tip_cell(chart, datum)?, 0))
        }
        SubtaskOp::ReadAssociatedValue { reference } => {
            let (_, aoi, value) = read_value_target(chart, *reference)?;
            Some(MemoryItem::value(*reference, value, bbox_cell(&aoi.bbox), 0))
        }
        _ => None,
    }
}

/// Resolves an op to its targets and policy.
pub fn resolve_op(chart: &RenderedChart, op: &SubtaskOp) -> Result<(SubtaskKind, Vec<Aoi>, Option<GridCoord>)> {
    Ok(match op {
        SubtaskOp::SearchTextLabel { query } => (SubtaskKind::Search, search_targets(chart, query), None),
        SubtaskOp::FindAssociatedMark { reference } => (
            SubtaskKind::FindMark,
            find_mark_target(chart, *reference).map(|(_, a)| vec![a]).unwrap_or_default(),
            Some(*reference),
        ),
        SubtaskOp::ReadAssociatedValue { reference } => (
            SubtaskKind::ReadValue,
            read_value_target(chart, *reference).map(|(_, a, _)| vec![a]).unwrap_or_default(),
            Some(*reference),
        ),
        SubtaskOp::Answer { .. } => return Err(Error::State("answer is not a gaze subtask".into())),
    })
}

/// Runs the policy for one subtask from `gaze`, reading text at every fixation
/// into memory. `t0` is the number of fixations made before this subtask.
pub fn run_subtask(
    op: &SubtaskOp,
    ctx: &SubtaskContext<'_>,
    memory: &mut Memory,
    gaze: GridCoord,
    t0: usize,
    rng: &mut SimRng,
    step_cap: usize,
) -> Result<SubtaskResult> {
    let chart = &ctx.chart.chart;
    let (kind, targets, reference) = resolve_op(chart, op)?;
    let mut ep = GazeEpisode::new(ctx.chart.chart.clone(), ctx.chart.scene.clone(), targets, reference, gaze, step_cap);
    ep.fovea_radius = ctx.fovea_radius;
    ep.reward = ctx.reward;
    let policy = ctx.policies.get(kind);
    let mut events = Vec::new();
    let mut obs = ep.observation();
    while !ep.done {
        let cell = act(policy, &obs, rng, ctx.mode)?;
        let res = ep.step(cell)?;
        let t = t0 + ep.fixation_trace.len();
        for (text, position) in read_text(chart, cell, ctx.fovea_radius) {
            let item = MemoryItem::text(text, position, t);
            let outcome = memory.insert(item.clone(), t, rng);
            events.push(MemoryEvent { t, item: MemoryItem { t_i: t, ..item }, outcome });
        }
        if res.hit {
            if let Some(item) = finding_for(chart, op) {
                let item = MemoryItem { t_i: t, ..item };
                let outcome = memory.insert(item.clone(), t, rng);
                events.push(MemoryEvent { t, item, outcome });
            }
        }
        obs = res.observation;
    }
    let last = ep.fixation_trace.last().copied();
    let outcome = match (ep.hit, op, last) {
        (true, SubtaskOp::SearchTextLabel { query }, Some(c)) => format!("found \"{query}\" near cell {c}"),
        (true, SubtaskOp::FindAssociatedMark { reference }, _) => {
            let tip = finding_for(chart, op).map(|i| i.position).unwrap_or(*reference);
            format!("found bar ending at cell {tip} for label at {reference}")
        }
        (true, SubtaskOp::ReadAssociatedValue { reference }, _) => match finding_for(chart, op) {
            Some(MemoryItem { text, .. }) => format!("read {text}"),
            None => format!("read value for bar at {reference}"),
        },
        _ => "not found".to_string(),
    };
    Ok(SubtaskResult { cells: ep.fixation_trace, outcome, hit: ep.hit, events })
}

/// Maps cells to pixels in the original chart size, rounding half up.
pub fn rescale_scanpath<R: Rng + ?Sized>(cells: &[GridCoord], rng: &mut R, original_size: (u32, u32)) -> Result<Vec<[f64; 2]>> {
    if original_size.0 == 0 || original_size.1 == 0 {
        return Err(Error::Parameter("original size must be positive".into()));
    }
    let sx = original_size.0 as f64 / crate::chartgen::IMAGE_SIZE as f64;
    let sy = original_size.1 as f64 / crate::chartgen::IMAGE_SIZE as f64;
    cells
        .iter()
        .map(|c| {
            let (x, y) = sample_pixel_with(*c, rng)?;
            Ok([(x as f64 * sx + 0.5).floor(), (y as f64 * sy + 0.5).floor()])
        })
        .collect()
}

/// Trains the three gaze policies on a shared chart pool.
pub fn train_policies(
    pool: &[PreparedChart],
    net: NetConfig,
    cfg: &PpoConfig,
    reward: RewardConfig,
    step_cap: usize,
    seed: u64,
) -> Result<(PolicySet, Vec<(SubtaskKind, Vec<BatchLog>)>)> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("training chart pool".into()));
    }
    reward.validate()?;
    let mut trained = Vec::new();
    let mut logs = Vec::new();
    for (k, kind) in SubtaskKind::ALL.into_iter().enumerate() {
        let mut env = SubtaskEnv::new(kind, pool.to_vec());
        env.step_cap = step_cap;
        env.reward = reward;
        let out = ppo_train(&env, net, cfg, crate::rng::derive_seed(seed, &[k as u64]))?;
        logs.push((kind, out.log));
        trained.push(out.params);
    }
    let read_value = trained.pop().expect("three policies");
    let find_mark = trained.pop().expect("three policies");
    let search = trained.pop().expect("three policies");
    Ok((PolicySet { search, find_mark, read_value }, logs))
}

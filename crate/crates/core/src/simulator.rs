//! End-to-end scanpath prediction: the cognitive controller picks subtasks,
//! gaze policies execute them, memory carries findings between them.
//! Also hosts the non-hierarchical baselines.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chartgen::RenderedChart;
use crate::cognitive::{decide_external, decide_rule_based, CognitiveState, SubtaskOp, TextCompletion};
use crate::error::{Error, Result};
use crate::memory::{Memory, MemoryEvent, MemoryItem, DEFAULT_CAPACITY, DEFAULT_RHO};
use crate::oculomotor::{
    finding_for, resolve_op, rescale_scanpath, run_subtask, ActMode, PolicySet, PreparedChart, RewardConfig,
    SubtaskContext, DEFAULT_GLOBAL_CAP, DEFAULT_STEP_CAP,
};
use crate::rng::{rng_from, SimRng};
use crate::taskgen::{GroundTruth, Task};
use crate::vision::{read_text, GridCoord, Scene, CELLS, DEFAULT_FOVEA_RADIUS, GRID};

pub const MODEL_METHOD: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op: SubtaskOp,
    /// Half-open range of fixation indices produced by this op.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scanpath {
    pub chart_id: String,
    pub task_id: String,
    pub method: String,
    /// Pixel coordinates in the chart's original size.
    pub fixations: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cell_trace: Vec<GridCoord>,
    #[serde(default)]
    pub answer: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub op_trace: Vec<OpRecord>,
}

impl Scanpath {
    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitiveMode {
    Rule,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub step_cap: usize,
    pub global_cap: usize,
    pub fovea_radius: usize,
    pub memory_capacity: usize,
    pub rho: f64,
    pub reward: RewardConfig,
    pub mode: CognitiveMode,
    pub act_mode: ActMode,
    /// Keep going with rule-based decisions when the external service fails.
    pub fallback_on_service_error: bool,
    pub max_tokens: u32,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            step_cap: DEFAULT_STEP_CAP,
            global_cap: DEFAULT_GLOBAL_CAP,
            fovea_radius: DEFAULT_FOVEA_RADIUS,
            memory_capacity: DEFAULT_CAPACITY,
            rho: DEFAULT_RHO,
            reward: RewardConfig::default(),
            mode: CognitiveMode::Rule,
            act_mode: ActMode::Sample,
            fallback_on_service_error: true,
            max_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scanpath: Scanpath,
    pub memory_trace: Vec<MemoryEvent>,
    pub outcomes: Vec<String>,
}

pub fn predict(
    chart: &PreparedChart,
    task: &Task,
    policies: &PolicySet,
    cfg: &PredictConfig,
    seed: u64,
    endpoint: Option<&dyn TextCompletion>,
) -> Result<Prediction> {
    if cfg.global_cap == 0 || cfg.step_cap == 0 {
        return Err(Error::Parameter("fixation caps must be positive".into()));
    }
    if cfg.mode == CognitiveMode::External && endpoint.is_none() {
        return Err(Error::Config("external cognitive mode needs an endpoint".into()));
    }
    let mut rng = rng_from(seed, &[0x9E7D]);
    let mut memory = Memory::new(cfg.memory_capacity, cfg.rho)?;
    let mut state = CognitiveState::new(&chart.chart, task);
    let ctx = SubtaskContext {
        chart,
        policies,
        fovea_radius: cfg.fovea_radius,
        reward: cfg.reward,
        mode: cfg.act_mode,
    };
    let mut cells: Vec<GridCoord> = Vec::new();
    let mut op_trace = Vec::new();
    let mut events = Vec::new();
    let mut outcomes = Vec::new();
    let mut answer = None;
    let mut gaze = GridCoord::center();
    let mut last = String::new();

    while cells.len() < cfg.global_cap {
        let (mut op, mut next) = match (cfg.mode, endpoint) {
            (CognitiveMode::External, Some(ep)) => {
                match decide_external(ep, cfg.max_tokens, &state, &memory, task, &last) {
                    Ok(d) => d,
                    Err(e @ Error::Service(_)) if cfg.fallback_on_service_error => {
                        log::warn!("{}: {e}; using rule-based decision", task.task_id);
                        decide_rule_based(&state, &memory, task)
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => decide_rule_based(&state, &memory, task),
        };
        if op.is_answer() && cells.is_empty() {
            // An answer before looking at anything would leave an empty scanpath.
            (op, next) = decide_rule_based(&state, &memory, task);
        }
        state = next;
        if let SubtaskOp::Answer { proposed } = &op {
            answer = Some(proposed.clone());
            op_trace.push(OpRecord { op, start: cells.len(), end: cells.len() });
            break;
        }
        let cap = cfg.step_cap.min(cfg.global_cap - cells.len());
        let res = run_subtask(&op, &ctx, &mut memory, gaze, cells.len(), &mut rng, cap)?;
        let start = cells.len();
        cells.extend(&res.cells);
        gaze = *cells.last().unwrap_or(&gaze);
        events.extend(res.events);
        outcomes.push(res.outcome.clone());
        last = res.outcome;
        op_trace.push(OpRecord { op, start, end: cells.len() });
    }
    let fixations = rescale_scanpath(&cells, &mut rng, chart.chart.original_size)?;
    Ok(Prediction {
        scanpath: Scanpath {
            chart_id: task.chart_id.clone(),
            task_id: task.task_id.clone(),
            method: MODEL_METHOD.into(),
            fixations,
            cell_trace: cells,
            answer,
            op_trace,
        },
        memory_trace: events,
        outcomes,
    })
}

/// Recomputes, from the chart and the recorded traces alone, the memory
/// insertions a prediction must have made: every text in the fovea at every
/// fixation, plus the finding of each subtask that ended on its target.
pub fn replay_insertions(chart: &RenderedChart, scanpath: &Scanpath, fovea_radius: usize) -> Result<Vec<(usize, MemoryItem)>> {
    let mut out = Vec::new();
    for rec in &scanpath.op_trace {
        if rec.op.is_answer() {
            continue;
        }
        let (_, targets, _) = resolve_op(chart, &rec.op)?;
        for k in rec.start..rec.end {
            let cell = *scanpath
                .cell_trace
                .get(k)
                .ok_or_else(|| Error::State(format!("op range {}..{} exceeds the trace", rec.start, rec.end)))?;
            let t = k + 1;
            for (text, position) in read_text(chart, cell, fovea_radius) {
                out.push((t, MemoryItem::text(text, position, t)));
            }
            let fovea = cell.fovea(fovea_radius);
            if k + 1 == rec.end && targets.iter().any(|a| a.bbox.intersects(&fovea)) {
                if let Some(item) = finding_for(chart, &rec.op) {
                    out.push((t, MemoryItem { t_i: t, ..item }));
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Baselines

fn baseline_path(chart: &RenderedChart, method: &str, cells: Vec<GridCoord>, rng: &mut SimRng) -> Result<Scanpath> {
    Ok(Scanpath {
        chart_id: chart.spec.chart_id.clone(),
        task_id: String::new(),
        method: method.into(),
        fixations: rescale_scanpath(&cells, rng, chart.original_size)?,
        cell_trace: cells,
        answer: None,
        op_trace: Vec::new(),
    })
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("baselines need at least one fixation".into()));
    }
    Ok(())
}

/// Independent uniform cells.
pub fn baseline_random(chart: &RenderedChart, n_fixations: usize, seed: u64) -> Result<Scanpath> {
    check_n(n_fixations)?;
    let mut rng = rng_from(seed, &[0xBA5E, 1]);
    let cells = (0..n_fixations).map(|_| GridCoord::from_index(rng.gen_range(0..CELLS))).collect();
    baseline_path(chart, "random", cells, &mut rng)
}

/// Cells drawn in proportion to saliency, halving a cell's weight at each visit.
pub fn baseline_saliency(chart: &RenderedChart, scene: &Scene, n_fixations: usize, seed: u64) -> Result<Scanpath> {
    check_n(n_fixations)?;
    let mut rng = rng_from(seed, &[0xBA5E, 2]);
    let mut weights = scene.saliency.to_vec();
    let mut cells = Vec::with_capacity(n_fixations);
    for _ in 0..n_fixations {
        let total: f64 = weights.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = CELLS - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..CELLS)
        };
        weights[idx] *= 0.5;
        cells.push(GridCoord::from_index(idx));
    }
    baseline_path(chart, "saliency", cells, &mut rng)
}

pub const CENTER_SCALE: f64 = 4.0;

/// Central bias: each coordinate is a normal with sd 4 cells around the image
/// centre, floored to a cell and redrawn when it leaves the grid, so cell
/// indices are symmetric around 9.5.
pub fn baseline_center(chart: &RenderedChart, n_fixations: usize, seed: u64) -> Result<Scanpath> {
    check_n(n_fixations)?;
    let mut rng = rng_from(seed, &[0xBA5E, 3]);
    let normal = Normal::new(GRID as f64 / 2.0, CENTER_SCALE).expect("finite scale");
    let draw = |rng: &mut SimRng| loop {
        let v: f64 = normal.sample(rng);
        if (0.0..GRID as f64).contains(&v) {
            return v.floor() as usize;
        }
    };
    let cells = (0..n_fixations)
        .map(|_| {
            let col = draw(&mut rng);
            let row = draw(&mut rng);
            GridCoord { col, row }
        })
        .collect();
    baseline_path(chart, "center", cells, &mut rng)
}

// ---------------------------------------------------------------------------
// JSON Lines

pub fn to_jsonl(scanpaths: &[Scanpath]) -> Result<String> {
    let mut out = String::new();
    for s in scanpaths {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &std::path::Path, scanpaths: &[Scanpath]) -> Result<()> {
    crate::write_atomic(path, to_jsonl(scanpaths)?.as_bytes())
}

pub fn memory_trace_jsonl(events: &[MemoryEvent]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

//! The gaze POMDP for a single subtask.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chartgen::{Aoi, RenderedChart};
use crate::error::{Error, Result};
use crate::vision::{observe, GridCoord, ObservationStack, Scene, VisitHistory, DEFAULT_FOVEA_RADIUS, GRID};

pub const DEFAULT_STEP_CAP: usize = 20;
pub const DEFAULT_GLOBAL_CAP: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub hit_reward: f64,
    pub distance_weight: f64,
    pub step_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { hit_reward: 10.0, distance_weight: 0.1, step_penalty: 0.05 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hit_reward > 0.0) || !(self.distance_weight >= 0.0) || !(self.step_penalty >= 0.0) {
            return Err(Error::Parameter(format!("invalid reward config {self:?}")));
        }
        Ok(())
    }

    /// Largest possible saccade, corner to corner, in cells.
    pub fn max_distance() -> f64 {
        (GRID - 1) as f64 * std::f64::consts::SQRT_2
    }
}

/// Which gaze policy a subtask uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    Search,
    FindMark,
    ReadValue,
}

impl SubtaskKind {
    pub const ALL: [SubtaskKind; 3] = [SubtaskKind::Search, SubtaskKind::FindMark, SubtaskKind::ReadValue];

    pub fn name(self) -> &'static str {
        match self {
            SubtaskKind::Search => "search",
            SubtaskKind::FindMark => "find_mark",
            SubtaskKind::ReadValue => "read_value",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GazeEpisode {
    pub chart: Arc<RenderedChart>,
    pub scene: Arc<Scene>,
    /// Any of these counts as reaching the goal.
    pub targets: Vec<Aoi>,
    pub reference: Option<GridCoord>,
    pub history: VisitHistory,
    pub fixation_trace: Vec<GridCoord>,
    pub step_cap: usize,
    pub fovea_radius: usize,
    pub reward: RewardConfig,
    /// Where the eyes rest before the first step.
    pub gaze: GridCoord,
    pub done: bool,
    pub hit: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: ObservationStack,
    pub reward: f64,
    pub done: bool,
    pub hit: bool,
}

impl GazeEpisode {
    pub fn new(
        chart: Arc<RenderedChart>,
        scene: Arc<Scene>,
        targets: Vec<Aoi>,
        reference: Option<GridCoord>,
        start: GridCoord,
        step_cap: usize,
    ) -> Self {
        GazeEpisode {
            chart,
            scene,
            targets,
            reference,
            history: VisitHistory::default(),
            fixation_trace: Vec::new(),
            step_cap,
            fovea_radius: DEFAULT_FOVEA_RADIUS,
            reward: RewardConfig::default(),
            gaze: start,
            done: step_cap == 0,
            hit: false,
        }
    }

    pub fn observation(&self) -> ObservationStack {
        observe(&self.scene, self.gaze, &self.history, self.reference, self.fovea_radius)
    }

    pub fn is_hit(&self, cell: GridCoord) -> bool {
        let fovea = cell.fovea(self.fovea_radius);
        self.targets.iter().any(|t| t.bbox.intersects(&fovea))
    }

    pub fn step(&mut self, action: GridCoord) -> Result<StepResult> {
        if self.done {
            return Err(Error::State("step on a finished gaze episode".into()));
        }
        let action = GridCoord::new(action.col, action.row)?;
        let d = if self.fixation_trace.is_empty() { 0.0 } else { self.gaze.distance(action) };
        let hit = self.is_hit(action);
        self.fixation_trace.push(action);
        self.history.visit(action);
        self.gaze = action;
        self.hit = hit;
        self.done = hit || self.fixation_trace.len() >= self.step_cap;
        let r = &self.reward;
        let reward = if hit { r.hit_reward } else { 0.0 } - r.distance_weight * d - r.step_penalty;
        Ok(StepResult { observation: self.observation(), reward, done: self.done, hit })
    }
}

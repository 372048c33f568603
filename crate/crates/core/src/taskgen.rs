//! Analytical tasks over a chart (retrieve value, filter, find extreme),
//! their ground truth, and the grader.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chartgen::{format_value, RenderedChart};
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const DEFAULT_VALUE_TOLERANCE: f64 = 0.05;

const BUILTIN_TEMPLATES: &str = include_str!("../resources/prompts.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extreme {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RetrieveValue,
    Filter,
    FindExtreme(Extreme),
}

impl TaskKind {
    pub fn short(self) -> &'static str {
        match self {
            TaskKind::RetrieveValue => "rv",
            TaskKind::Filter => "f",
            TaskKind::FindExtreme(Extreme::Max) => "fe-max",
            TaskKind::FindExtreme(Extreme::Min) => "fe-min",
        }
    }

    /// Task family label used in reports (both extremes pool into FE).
    pub fn family(self) -> &'static str {
        match self {
            TaskKind::RetrieveValue => "RV",
            TaskKind::Filter => "F",
            TaskKind::FindExtreme(_) => "FE",
        }
    }

    fn template_key(self) -> &'static str {
        match self {
            TaskKind::RetrieveValue => "retrieve_value",
            TaskKind::Filter => "filter",
            TaskKind::FindExtreme(Extreme::Max) => "find_extreme_max",
            TaskKind::FindExtreme(Extreme::Min) => "find_extreme_min",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub value_answer: Option<f64>,
    pub category_answer: Option<String>,
}

impl GroundTruth {
    pub fn value(v: f64) -> Self {
        GroundTruth { value_answer: Some(v), category_answer: None }
    }

    pub fn category(c: impl Into<String>) -> Self {
        GroundTruth { value_answer: None, category_answer: Some(c.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub kind: TaskKind,
    pub prompt: String,
    pub chart_id: String,
    pub target_category: Option<String>,
    pub target_value: Option<f64>,
    pub task_aoi_ids: Vec<String>,
    pub answer: GroundTruth,
    /// Axis maximum of the chart, the scale of the value tolerance.
    pub value_axis_max: f64,
}

/// Prompt templates keyed by task kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates(HashMap<String, String>);

impl Default for Templates {
    fn default() -> Self {
        Templates::parse(BUILTIN_TEMPLATES).expect("built-in templates parse")
    }
}

impl Templates {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("templates line {}", n + 1), "expected `key = template`"))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        for kind in [
            TaskKind::RetrieveValue,
            TaskKind::Filter,
            TaskKind::FindExtreme(Extreme::Max),
            TaskKind::FindExtreme(Extreme::Min),
        ] {
            if !map.contains_key(kind.template_key()) {
                return Err(Error::parse("templates", format!("missing key {}", kind.template_key())));
            }
        }
        Ok(Templates(map))
    }

    fn fill(&self, kind: TaskKind, chart: &RenderedChart, category: &str, value: &str) -> String {
        self.0[kind.template_key()]
            .replace("{category}", category)
            .replace("{value}", value)
            .replace("{group}", &chart.spec.category_axis_label.to_lowercase())
            .replace("{measure}", &chart.spec.value_axis_label.to_lowercase())
    }
}

/// AOIs that carry the value of `datum` (or of `value` when filtering): its value label
/// if drawn, otherwise the tick at that value or the two ticks bracketing it.
pub fn value_evidence(chart: &RenderedChart, datum: usize, value: f64) -> Vec<String> {
    if let Some(label) = chart.value_label_of(datum) {
        return vec![label.aoi_id.clone()];
    }
    let step = chart.spec.tick_step;
    let k = value / step;
    let lo = k.floor();
    let mut ids = Vec::new();
    let near = |idx: f64| chart.ticks().find(|t| t.datum_index == Some(idx as usize)).map(|t| t.aoi_id.clone());
    if (k - k.round()).abs() < 1e-9 {
        ids.extend(near(k.round()));
    } else {
        ids.extend(near(lo));
        ids.extend(near(lo + 1.0));
    }
    ids
}

fn datum_aois(chart: &RenderedChart, datum: usize) -> Vec<String> {
    let mut ids = Vec::new();
    ids.extend(chart.label_of(datum).map(|a| a.aoi_id.clone()));
    ids.extend(chart.mark_of(datum).map(|a| a.aoi_id.clone()));
    ids
}

pub fn generate_task(chart: &RenderedChart, kind: TaskKind, seed: u64) -> Result<Task> {
    generate_task_with(chart, kind, seed, &Templates::default(), DEFAULT_VALUE_TOLERANCE)
}

pub fn generate_task_with(
    chart: &RenderedChart,
    kind: TaskKind,
    seed: u64,
    templates: &Templates,
    tolerance: f64,
) -> Result<Task> {
    let spec = &chart.spec;
    let data = &spec.data;
    let mut rng = rng_from(seed, &[0x7A5C]);
    let band = tolerance * spec.value_axis_max;
    let task_id = format!("{}-{}", spec.chart_id, kind.short());

    let (target_category, target_value, answer, datum, aois) = match kind {
        TaskKind::RetrieveValue => {
            let i = rng.gen_range(0..data.len());
            let d = &data[i];
            let mut aois = datum_aois(chart, i);
            aois.extend(value_evidence(chart, i, d.value));
            (Some(d.category_label.clone()), None, GroundTruth::value(d.value), i, aois)
        }
        TaskKind::Filter => {
            // The target must single out one bar even under the grading tolerance.
            let separable: Vec<usize> = (0..data.len())
                .filter(|&i| {
                    data.iter()
                        .enumerate()
                        .all(|(j, o)| j == i || (o.value - data[i].value).abs() > band)
                })
                .collect();
            let &i = separable.choose(&mut rng).ok_or_else(|| {
                Error::DegenerateChart(format!("{}: no value is unique within tolerance", spec.chart_id))
            })?;
            let d = &data[i];
            let mut aois = datum_aois(chart, i);
            aois.extend(value_evidence(chart, i, d.value));
            (None, Some(d.value), GroundTruth::category(d.category_label.clone()), i, aois)
        }
        TaskKind::FindExtreme(which) => {
            let better = |a: f64, b: f64| match which {
                Extreme::Max => a > b,
                Extreme::Min => a < b,
            };
            let mut best = 0;
            for i in 1..data.len() {
                if better(data[i].value, data[best].value) {
                    best = i;
                }
            }
            let ties = data.iter().filter(|d| d.value == data[best].value).count();
            if ties > 1 {
                return Err(Error::DegenerateChart(format!(
                    "{}: {} categories share the extreme value",
                    spec.chart_id, ties
                )));
            }
            let aois = datum_aois(chart, best);
            (None, None, GroundTruth::category(data[best].category_label.clone()), best, aois)
        }
    };
    debug_assert!(datum < data.len());

    let prompt = templates.fill(
        kind,
        chart,
        target_category.as_deref().unwrap_or(""),
        &target_value.map(format_value).unwrap_or_default(),
    );
    let mut task_aoi_ids = Vec::new();
    for id in aois {
        if !task_aoi_ids.contains(&id) {
            task_aoi_ids.push(id);
        }
    }
    if task_aoi_ids.is_empty() {
        return Err(Error::DegenerateChart(format!("{task_id}: no task AOIs")));
    }
    Ok(Task {
        task_id,
        kind,
        prompt,
        chart_id: spec.chart_id.clone(),
        target_category,
        target_value,
        task_aoi_ids,
        answer,
        value_axis_max: spec.value_axis_max,
    })
}

/// Grades a proposed answer: values within `value_tolerance * value_axis_max`,
/// categories by case-insensitive equality.
pub fn check_answer(task: &Task, proposed: &GroundTruth, value_tolerance: f64) -> Result<bool> {
    match task.kind {
        TaskKind::RetrieveValue => {
            let (Some(v), None) = (proposed.value_answer, &proposed.category_answer) else {
                return Err(Error::Shape(format!("{} expects a value answer", task.task_id)));
            };
            let truth = task.answer.value_answer.ok_or_else(|| Error::State("task lacks a value answer".into()))?;
            Ok((v - truth).abs() <= value_tolerance * task.value_axis_max + 1e-9)
        }
        TaskKind::Filter | TaskKind::FindExtreme(_) => {
            let (None, Some(c)) = (proposed.value_answer, &proposed.category_answer) else {
                return Err(Error::Shape(format!("{} expects a category answer", task.task_id)));
            };
            let truth = task
                .answer
                .category_answer
                .as_deref()
                .ok_or_else(|| Error::State("task lacks a category answer".into()))?;
            Ok(c.trim().eq_ignore_ascii_case(truth.trim()))
        }
    }
}

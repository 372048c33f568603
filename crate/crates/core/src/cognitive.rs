//! High-level controller choosing gaze subtasks from working memory: a
//! rule-based state machine by default, or an external text-completion
//! service constrained to a one-line action grammar.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chartgen::{format_value, Orientation, RenderedChart};
use crate::error::{Error, Result};
use crate::memory::{ItemKind, Memory};
use crate::taskgen::{Extreme, GroundTruth, Task, TaskKind, DEFAULT_VALUE_TOLERANCE};
use crate::vision::{GridCoord, GRID};

/// Ops spent on one category before the scan moves on.
const ATTEMPTS_PER_CATEGORY: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SubtaskOp {
    SearchTextLabel { query: String },
    FindAssociatedMark { reference: GridCoord },
    ReadAssociatedValue { reference: GridCoord },
    Answer { proposed: GroundTruth },
}

impl SubtaskOp {
    pub fn is_answer(&self) -> bool {
        matches!(self, SubtaskOp::Answer { .. })
    }

    /// The op in the action grammar accepted by [`parse_action`].
    pub fn to_action_line(&self) -> String {
        match self {
            SubtaskOp::SearchTextLabel { query } => format!("ACTION: search label=\"{query}\""),
            SubtaskOp::FindAssociatedMark { reference: r } => format!("ACTION: find_mark ref=({},{})", r.col, r.row),
            SubtaskOp::ReadAssociatedValue { reference: r } => format!("ACTION: read_value ref=({},{})", r.col, r.row),
            SubtaskOp::Answer { proposed } => match (&proposed.value_answer, &proposed.category_answer) {
                (Some(v), _) => format!("ACTION: answer value={}", format_value(*v)),
                (None, Some(c)) => format!("ACTION: answer category=\"{c}\""),
                (None, None) => "ACTION: answer".into(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Start,
    Searching,
    FindingMark,
    ReadingValue,
    Confirming,
    Answered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveState {
    pub phase: Phase,
    /// Categories still to inspect, in axis order (F and FE scans).
    pub pending_targets: VecDeque<String>,
    /// Whether memory already holds what the answer needs.
    pub confidence: bool,
    pub orientation: Orientation,
    pub value_band: f64,
    pub ops_issued: usize,
    pub op_budget: usize,
    pub reread_used: bool,
    attempts: usize,
    /// Closest filter reading so far: (category, |reading - target|).
    closest: Option<(String, f64)>,
    /// Bar tips measured during an extreme scan: (category, tip cell).
    extents: Vec<(String, GridCoord)>,
    /// Values read for categories tied at cell resolution.
    tie_values: Vec<(String, f64)>,
    confirmed: bool,
}

impl CognitiveState {
    pub fn new(chart: &RenderedChart, task: &Task) -> Self {
        let categories: VecDeque<String> = chart.spec.data.iter().map(|d| d.category_label.clone()).collect();
        let n = categories.len();
        let pending = match task.kind {
            TaskKind::RetrieveValue => VecDeque::new(),
            _ => categories,
        };
        CognitiveState {
            phase: Phase::Start,
            pending_targets: pending,
            confidence: false,
            orientation: chart.spec.orientation,
            value_band: DEFAULT_VALUE_TOLERANCE * chart.spec.value_axis_max,
            ops_issued: 0,
            op_budget: 4 * n + 4,
            reread_used: false,
            attempts: 0,
            closest: None,
            extents: Vec::new(),
            tie_values: Vec::new(),
            confirmed: false,
        }
    }
}

enum Chain {
    Op(SubtaskOp, Phase),
    Value { mark: GridCoord, readings: Vec<f64> },
}

/// Walks label -> mark -> value through memory, returning the first missing link's op.
fn chain(memory: &Memory, category: &str, need_value: bool) -> Chain {
    let Some(label) = memory.find_text(category) else {
        return Chain::Op(SubtaskOp::SearchTextLabel { query: category.to_string() }, Phase::Searching);
    };
    let Some(mark) = memory.find_mark(label.position) else {
        return Chain::Op(SubtaskOp::FindAssociatedMark { reference: label.position }, Phase::FindingMark);
    };
    let readings: Vec<f64> = memory
        .values_for(mark.position)
        .into_iter()
        .filter_map(|it| match it.kind {
            ItemKind::Value { value, .. } => Some(value),
            _ => None,
        })
        .collect();
    if need_value && readings.is_empty() {
        return Chain::Op(SubtaskOp::ReadAssociatedValue { reference: mark.position }, Phase::ReadingValue);
    }
    Chain::Value { mark: mark.position, readings }
}

fn answer(proposed: GroundTruth) -> (SubtaskOp, Phase) {
    (SubtaskOp::Answer { proposed }, Phase::Answered)
}

/// Rule-based policy. Emits an answer within `4 * categories + 4` ops.
pub fn decide_rule_based(state: &CognitiveState, memory: &Memory, task: &Task) -> (SubtaskOp, CognitiveState) {
    let mut s = state.clone();
    let forced = s.ops_issued + 1 >= s.op_budget;
    let (op, phase) = match task.kind {
        TaskKind::RetrieveValue => decide_retrieve(&mut s, memory, task, forced),
        TaskKind::Filter => decide_filter(&mut s, memory, task, forced),
        TaskKind::FindExtreme(which) => decide_extreme(&mut s, memory, which, forced),
    };
    s.phase = phase;
    s.ops_issued += 1;
    s.confidence = op.is_answer();
    (op, s)
}

fn decide_retrieve(s: &mut CognitiveState, memory: &Memory, task: &Task, forced: bool) -> (SubtaskOp, Phase) {
    let target = task.target_category.clone().unwrap_or_default();
    match chain(memory, &target, true) {
        Chain::Value { mark, readings } => {
            if readings.len() >= 2 && (readings[0] - readings[1]).abs() > 1e-9 && !s.reread_used && !forced {
                s.reread_used = true;
                return (SubtaskOp::ReadAssociatedValue { reference: mark }, Phase::Confirming);
            }
            answer(GroundTruth::value(readings[0]))
        }
        Chain::Op(op, phase) => {
            if forced {
                // Best guess: the most recent value reading of any bar.
                let guess = memory
                    .ordered()
                    .into_iter()
                    .rev()
                    .find_map(|it| match it.kind {
                        ItemKind::Value { value, .. } => Some(value),
                        _ => None,
                    })
                    .unwrap_or(0.0);
                return answer(GroundTruth::value(guess));
            }
            (op, phase)
        }
    }
}

fn decide_filter(s: &mut CognitiveState, memory: &Memory, task: &Task, forced: bool) -> (SubtaskOp, Phase) {
    let target = task.target_value.unwrap_or(f64::NAN);
    while let Some(current) = s.pending_targets.front().cloned() {
        match chain(memory, &current, true) {
            Chain::Value { readings, .. } => {
                let diff = (readings[0] - target).abs();
                if diff <= s.value_band {
                    return answer(GroundTruth::category(current));
                }
                if s.closest.as_ref().map_or(true, |(_, d)| diff < *d) {
                    s.closest = Some((current.clone(), diff));
                }
                s.pending_targets.pop_front();
                s.attempts = 0;
            }
            Chain::Op(op, phase) => {
                if s.attempts >= ATTEMPTS_PER_CATEGORY {
                    s.pending_targets.pop_front();
                    s.attempts = 0;
                    continue;
                }
                if forced {
                    break;
                }
                s.attempts += 1;
                return (op, phase);
            }
        }
    }
    let guess = s
        .closest
        .as_ref()
        .map(|(c, _)| c.clone())
        .or_else(|| s.pending_targets.front().cloned())
        .unwrap_or_default();
    answer(GroundTruth::category(guess))
}

/// Orders tips so that "greater" means a longer bar.
fn tip_extent(orientation: Orientation, tip: GridCoord) -> i64 {
    match orientation {
        Orientation::Horizontal => tip.col as i64,
        Orientation::Vertical => -(tip.row as i64),
    }
}

fn decide_extreme(s: &mut CognitiveState, memory: &Memory, which: Extreme, forced: bool) -> (SubtaskOp, Phase) {
    let sign = match which {
        Extreme::Max => 1,
        Extreme::Min => -1,
    };
    // Measure every bar's extent first.
    while let Some(current) = s.pending_targets.front().cloned() {
        match chain(memory, &current, false) {
            Chain::Value { mark, .. } => {
                s.extents.push((current, mark));
                s.pending_targets.pop_front();
                s.attempts = 0;
            }
            Chain::Op(op, phase) => {
                if s.attempts >= ATTEMPTS_PER_CATEGORY {
                    s.pending_targets.pop_front();
                    s.attempts = 0;
                    continue;
                }
                if forced {
                    break;
                }
                s.attempts += 1;
                return (op, phase);
            }
        }
    }
    let best_extent = s.extents.iter().map(|(_, t)| sign * tip_extent(s.orientation, *t)).max();
    let Some(best_extent) = best_extent else {
        return answer(GroundTruth::category(s.pending_targets.front().cloned().unwrap_or_default()));
    };
    let tied: Vec<String> = s
        .extents
        .iter()
        .filter(|(_, t)| sign * tip_extent(s.orientation, *t) == best_extent)
        .map(|(c, _)| c.clone())
        .collect();
    let pick = |tie_values: &[(String, f64)]| -> String {
        tie_values
            .iter()
            .max_by(|a, b| (sign as f64 * a.1).partial_cmp(&(sign as f64 * b.1)).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(c, _)| c.clone())
            .unwrap_or_else(|| tied[0].clone())
    };
    if forced {
        return answer(GroundTruth::category(pick(&s.tie_values)));
    }
    // Tied at cell resolution, or a single winner still to confirm: read values.
    let to_read: Vec<&String> = if tied.len() > 1 {
        tied.iter().filter(|c| !s.tie_values.iter().any(|(t, _)| t == *c)).collect()
    } else if !s.confirmed {
        tied.iter().collect()
    } else {
        Vec::new()
    };
    if let Some(current) = to_read.first().map(|c| c.to_string()) {
        match chain(memory, &current, true) {
            Chain::Value { readings, .. } => {
                s.tie_values.push((current.clone(), readings[0]));
                s.attempts = 0;
                if tied.len() == 1 {
                    s.confirmed = true;
                }
                return decide_extreme(s, memory, which, forced);
            }
            Chain::Op(op, phase) => {
                if s.attempts < ATTEMPTS_PER_CATEGORY {
                    s.attempts += 1;
                    let phase = if matches!(op, SubtaskOp::ReadAssociatedValue { .. }) { Phase::Confirming } else { phase };
                    return (op, phase);
                }
                // Give up on confirmation; answer with what is known.
                s.tie_values.push((current, f64::NAN));
                s.confirmed = true;
                s.attempts = 0;
                return decide_extreme(s, memory, which, forced);
            }
        }
    }
    let known: Vec<(String, f64)> = s.tie_values.iter().filter(|(c, v)| tied.contains(c) && v.is_finite()).cloned().collect();
    answer(GroundTruth::category(if tied.len() > 1 { pick(&known) } else { tied[0].clone() }))
}

// ---------------------------------------------------------------------------
// Action grammar

fn parse_cell(s: &str) -> Option<GridCoord> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (c, r) = inner.split_once(',')?;
    let (c, r) = (c.trim().parse::<usize>().ok()?, r.trim().parse::<usize>().ok()?);
    (c < GRID && r < GRID).then_some(GridCoord { col: c, row: r })
}

fn parse_quoted(s: &str) -> Option<String> {
    let inner = s.trim().strip_prefix('"')?.strip_suffix('"')?;
    Some(inner.to_string())
}

fn parse_line(body: &str) -> Option<SubtaskOp> {
    let body = body.trim();
    let (verb, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
    let rest = rest.trim();
    match verb {
        "search" => {
            let q = parse_quoted(rest.strip_prefix("label=")?)?;
            (!q.is_empty()).then_some(SubtaskOp::SearchTextLabel { query: q })
        }
        "find_mark" => Some(SubtaskOp::FindAssociatedMark { reference: parse_cell(rest.strip_prefix("ref=")?)? }),
        "read_value" => Some(SubtaskOp::ReadAssociatedValue { reference: parse_cell(rest.strip_prefix("ref=")?)? }),
        "answer" => {
            if let Some(v) = rest.strip_prefix("value=") {
                let v: f64 = v.trim().parse().ok()?;
                v.is_finite().then_some(SubtaskOp::Answer { proposed: GroundTruth::value(v) })
            } else {
                let c = parse_quoted(rest.strip_prefix("category=")?)?;
                Some(SubtaskOp::Answer { proposed: GroundTruth::category(c) })
            }
        }
        _ => None,
    }
}

/// Parses the first line of the form `ACTION: <op>`; other lines are ignored.
pub fn parse_action(text: &str) -> Result<SubtaskOp> {
    let mut offset = 0;
    let mut first_bad = None;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let lead = line.len() - trimmed.len();
        if let Some(body) = trimmed.strip_prefix("ACTION:") {
            if let Some(op) = parse_line(body) {
                return Ok(op);
            }
            first_bad.get_or_insert(offset + lead);
        }
        offset += line.len();
    }
    match first_bad {
        Some(at) => Err(Error::parse(format!("offset {at}"), "malformed ACTION line")),
        None => Err(Error::parse(format!("offset {}", text.len()), "no ACTION line found")),
    }
}

// ---------------------------------------------------------------------------
// External backend

/// A text-completion service.
pub trait TextCompletion: Send + Sync {
    fn complete(&self, prompt: &str, max_tokens: u32) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_tokens: u32,
}

pub const ENDPOINT_URL_VAR: &str = "CHARTGAZE_ENDPOINT_URL";
pub const ENDPOINT_TOKEN_VAR: &str = "CHARTGAZE_ENDPOINT_TOKEN";

impl EndpointConfig {
    pub fn from_env(timeout: Duration, max_tokens: u32) -> Result<Self> {
        let url = std::env::var(ENDPOINT_URL_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_URL_VAR} is not set")))?;
        Ok(EndpointConfig { url, token: std::env::var(ENDPOINT_TOKEN_VAR).ok(), timeout, max_tokens })
    }
}

/// JSON-over-HTTP completion endpoint: POST `{prompt, max_tokens}` -> `{text}`.
pub struct HttpEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        HttpEndpoint { config, agent }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl TextCompletion for HttpEndpoint {
    fn complete(&self, prompt: &str, max_tokens: u32) -> Result<String> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(token) = &self.config.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req
            .send_json(CompletionRequest { prompt, max_tokens })
            .map_err(|e| Error::Service(format!("{}: {e}", self.config.url)))?;
        let body: CompletionResponse =
            resp.into_json().map_err(|e| Error::Service(format!("unreadable completion: {e}")))?;
        Ok(body.text)
    }
}

const ACTION_SCHEMA: &str = "\
Reply with exactly one line in one of these forms:
ACTION: search label=\"<text>\"
ACTION: find_mark ref=(<col>,<row>)
ACTION: read_value ref=(<col>,<row>)
ACTION: answer value=<number>
ACTION: answer category=\"<text>\"
Cells are (column,row) on a 20x20 grid.";

pub fn external_prompt(memory: &Memory, task: &Task, last_op_result: &str) -> String {
    format!("{}\n{ACTION_SCHEMA}\n", memory.summarize(task, last_op_result))
}

fn shape_ok(op: &SubtaskOp, task: &Task) -> bool {
    match op {
        SubtaskOp::Answer { proposed } => match task.kind {
            TaskKind::RetrieveValue => proposed.value_answer.is_some(),
            _ => proposed.category_answer.is_some(),
        },
        _ => true,
    }
}

/// Asks the service for the next op, retrying a malformed reply once before
/// falling back to the rule-based policy. Transport failures are returned.
pub fn decide_external(
    endpoint: &dyn TextCompletion,
    max_tokens: u32,
    state: &CognitiveState,
    memory: &Memory,
    task: &Task,
    last_op_result: &str,
) -> Result<(SubtaskOp, CognitiveState)> {
    let prompt = external_prompt(memory, task, last_op_result);
    for attempt in 0..2 {
        let reply = endpoint.complete(&prompt, max_tokens)?;
        match parse_action(&reply) {
            Ok(op) if shape_ok(&op, task) => {
                let mut s = state.clone();
                s.ops_issued += 1;
                s.confidence = op.is_answer();
                s.phase = match &op {
                    SubtaskOp::SearchTextLabel { .. } => Phase::Searching,
                    SubtaskOp::FindAssociatedMark { .. } => Phase::FindingMark,
                    SubtaskOp::ReadAssociatedValue { .. } => Phase::ReadingValue,
                    SubtaskOp::Answer { .. } => Phase::Answered,
                };
                return Ok((op, s));
            }
            Ok(_) => log::debug!("completion attempt {attempt}: answer shape does not match task"),
            Err(e) => log::debug!("completion attempt {attempt}: {e}"),
        }
    }
    log::warn!("{}: completion unusable twice, using rule-based decision", task.task_id);
    Ok(decide_rule_based(state, memory, task))
}

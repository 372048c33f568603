//! Capacity-limited working memory with recency-based softmax forgetting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::Task;
use crate::vision::GridCoord;

pub const DEFAULT_CAPACITY: usize = 7;
pub const DEFAULT_RHO: f64 = 0.1;

/// What an item records. Plain text comes from reading the fovea; the other
/// two are conclusions drawn by a finished subtask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ItemKind {
    Text,
    /// A bar found for the label seen at `label`.
    Mark { label: GridCoord },
    /// A value read off for the bar seen at `mark`.
    Value { mark: GridCoord, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub text: String,
    pub position: GridCoord,
    pub t_i: usize,
    pub visits: u32,
    pub kind: ItemKind,
}

impl MemoryItem {
    pub fn text(text: impl Into<String>, position: GridCoord, t_i: usize) -> Self {
        MemoryItem { text: text.into(), position, t_i, visits: 1, kind: ItemKind::Text }
    }

    pub fn mark(label: GridCoord, tip: GridCoord, t_i: usize) -> Self {
        MemoryItem {
            text: format!("bar for label at {label}"),
            position: tip,
            t_i,
            visits: 1,
            kind: ItemKind::Mark { label },
        }
    }

    pub fn value(mark: GridCoord, value: f64, read_at: GridCoord, t_i: usize) -> Self {
        MemoryItem {
            text: format!("value {} for bar at {mark}", crate::chartgen::format_value(value)),
            position: read_at,
            t_i,
            visits: 1,
            kind: ItemKind::Value { mark, value },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum InsertOutcome {
    Refreshed { index: usize },
    Appended,
    Replaced { evicted: MemoryItem },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub capacity: usize,
    pub items: Vec<MemoryItem>,
    pub rho: f64,
}

impl Default for Memory {
    fn default() -> Self {
        Memory { capacity: DEFAULT_CAPACITY, items: Vec::new(), rho: DEFAULT_RHO }
    }
}

impl Memory {
    pub fn new(capacity: usize, rho: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("memory capacity must be at least 1".into()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("forgetting weight must be positive, got {rho}")));
        }
        Ok(Memory { capacity, items: Vec::new(), rho })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Probability of forgetting each item at fixation index `t`: softmax of rho * age.
    pub fn forgetting_distribution(&self, t: usize) -> Result<Vec<f64>> {
        if self.items.is_empty() {
            return Err(Error::EmptyInput("forgetting distribution of an empty memory".into()));
        }
        let ages: Vec<f64> = self.items.iter().map(|it| self.rho * (t as f64 - it.t_i as f64)).collect();
        let max = ages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ages.iter().map(|a| (a - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }

    pub fn insert<R: Rng + ?Sized>(&mut self, mut item: MemoryItem, t: usize, rng: &mut R) -> InsertOutcome {
        if let Some(index) = self
            .items
            .iter()
            .position(|it| it.text == item.text && it.position == item.position)
        {
            let existing = &mut self.items[index];
            existing.visits += 1;
            existing.t_i = t;
            existing.kind = item.kind;
            return InsertOutcome::Refreshed { index };
        }
        item.t_i = t;
        item.visits = item.visits.max(1);
        if self.items.len() < self.capacity {
            self.items.push(item);
            return InsertOutcome::Appended;
        }
        let p = self.forgetting_distribution(t).expect("full memory is non-empty");
        let victim = sample_index(&p, rng);
        let evicted = std::mem::replace(&mut self.items[victim], item);
        InsertOutcome::Replaced { evicted }
    }

    /// Items ordered by insertion time (ties keep storage order).
    pub fn ordered(&self) -> Vec<&MemoryItem> {
        let mut v: Vec<&MemoryItem> = self.items.iter().collect();
        v.sort_by_key(|it| it.t_i);
        v
    }

    pub fn find_text(&self, text: &str) -> Option<&MemoryItem> {
        self.ordered()
            .into_iter()
            .rev()
            .find(|it| it.kind == ItemKind::Text && it.text.eq_ignore_ascii_case(text.trim()))
    }

    pub fn find_mark(&self, label: GridCoord) -> Option<&MemoryItem> {
        self.ordered()
            .into_iter()
            .rev()
            .find(|it| matches!(it.kind, ItemKind::Mark { label: l } if l == label))
    }

    /// Value readings for the bar at `mark`, most recent first.
    pub fn values_for(&self, mark: GridCoord) -> Vec<&MemoryItem> {
        self.ordered()
            .into_iter()
            .rev()
            .filter(|it| matches!(it.kind, ItemKind::Value { mark: m, .. } if m == mark))
            .collect()
    }

    pub fn summarize(&self, task: &Task, last_op_result: &str) -> String {
        let mut out = format!("task: {}\n", task.prompt);
        if self.items.is_empty() {
            out.push_str("memory: empty\n");
        } else {
            out.push_str("memory:\n");
            for it in self.ordered() {
                out.push_str(&format!(
                    "{} at cell ({},{}), seen \u{d7}{}\n",
                    it.text, it.position.col, it.position.row, it.visits
                ));
            }
        }
        let last = if last_op_result.is_empty() { "none" } else { last_op_result };
        out.push_str(&format!("last result: {last}\n"));
        out
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// One memory mutation, for trace dumps and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub t: usize,
    pub item: MemoryItem,
    pub outcome: InsertOutcome,
}

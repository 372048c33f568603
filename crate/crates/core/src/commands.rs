//! Pipeline commands behind the CLI: gen -> train -> predict -> eval, plus overlays.
//!
//! Everything lives under one output directory:
//!
//! ```text
//! corpus/manifest.json
//! corpus/charts/<chart_id>.json | .pgm | .aoi.json
//! corpus/tasks/<task_id>.json
//! policies/{search,find_mark,read_value}.policy, policies/train_log.csv
//! predictions.jsonl, memory_traces.jsonl
//! report.csv, report.json
//! overlays/<n>-<task_id>-<method>.ppm
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chartgen::{generate_spec, render, ChartSpec, GenParams, OrientationChoice, RenderedChart, IMAGE_SIZE};
use crate::cognitive::TextCompletion;
use crate::error::{Error, Result};
use crate::memory::{MemoryEvent, DEFAULT_CAPACITY, DEFAULT_RHO};
use crate::metrics::{build_report, ingest_scanpaths, Bounds, CorpusView, MetricReport};
use crate::oculomotor::{
    train_policies, ActMode, NetConfig, PolicySet, PpoConfig, PreparedChart, RewardConfig, SubtaskKind,
    DEFAULT_GLOBAL_CAP, DEFAULT_STEP_CAP, LOG_HEADER,
};
use crate::rng::derive_seed;
use crate::simulator::{
    baseline_center, baseline_random, baseline_saliency, predict, write_jsonl, CognitiveMode, PredictConfig, Scanpath,
};
use crate::taskgen::{generate_task_with, Extreme, Task, TaskKind, Templates, DEFAULT_VALUE_TOLERANCE};
use crate::vision::DEFAULT_FOVEA_RADIUS;

pub const SCHEMA_VERSION: u32 = 1;
pub const BASELINES: [&str; 3] = ["random", "saliency", "center"];
const MAX_GLOBAL_CAP: usize = 10_000;
const GEN_ATTEMPTS: u64 = 64;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Charts in the corpus; each gets one RV, one F and one FE task.
    pub charts: usize,
    pub gen: GenParams,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub net: NetConfig,
    pub step_cap: usize,
    pub global_cap: usize,
    pub mode: CognitiveMode,
    pub endpoint_timeout_ms: u64,
    pub max_tokens: u32,
    /// Keep predicting with rule-based decisions when the endpoint is unreachable.
    pub fallback_on_service_error: bool,
    pub predictions_per_task: usize,
    pub baselines: Vec<String>,
    pub value_tolerance: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            charts: 10,
            gen: GenParams::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            net: NetConfig::default(),
            step_cap: DEFAULT_STEP_CAP,
            global_cap: DEFAULT_GLOBAL_CAP,
            mode: CognitiveMode::Rule,
            endpoint_timeout_ms: 30_000,
            max_tokens: 64,
            fallback_on_service_error: false,
            predictions_per_task: 1,
            baselines: BASELINES.iter().map(|s| s.to_string()).collect(),
            value_tolerance: DEFAULT_VALUE_TOLERANCE,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

pub fn parse_mode(v: &str) -> Result<CognitiveMode> {
    match v {
        "rule" => Ok(CognitiveMode::Rule),
        "external" => Ok(CognitiveMode::External),
        _ => Err(Error::Config(format!("mode must be rule or external, got {v:?}"))),
    }
}

fn mode_name(m: CognitiveMode) -> &'static str {
    match m {
        CognitiveMode::Rule => "rule",
        CognitiveMode::External => "external",
    }
}

fn orientation_name(o: OrientationChoice) -> &'static str {
    match o {
        OrientationChoice::Horizontal => "horizontal",
        OrientationChoice::Vertical => "vertical",
        OrientationChoice::Mixed => "mixed",
    }
}

impl RunConfig {
    /// Flat `key = value` lines; `#` starts a comment. `schema_version` is required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut version = None;
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("line {}", n + 1);
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(&loc, "expected key = value"))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(&loc, format!("duplicate key {key:?}")));
            }
            let bad = || Error::parse(&loc, format!("bad value {value:?} for {key}"));
            macro_rules! num {
                () => {
                    value.parse().map_err(|_| bad())?
                };
            }
            let flag = || parse_bool(value).ok_or_else(bad);
            match key {
                "schema_version" => version = Some(value.parse::<u32>().map_err(|_| bad())?),
                "seed" => cfg.seed = num!(),
                "charts" => cfg.charts = num!(),
                "categories_min" => cfg.gen.categories.0 = num!(),
                "categories_max" => cfg.gen.categories.1 = num!(),
                "values_min" => cfg.gen.values.0 = num!(),
                "values_max" => cfg.gen.values.1 = num!(),
                "ticks_min" => cfg.gen.ticks.0 = num!(),
                "ticks_max" => cfg.gen.ticks.1 = num!(),
                "orientation" => {
                    cfg.gen.orientation = match value {
                        "horizontal" => OrientationChoice::Horizontal,
                        "vertical" => OrientationChoice::Vertical,
                        "mixed" => OrientationChoice::Mixed,
                        _ => return Err(bad()),
                    }
                }
                "value_labels" => cfg.gen.value_labels = flag()?,
                "snap_to_ticks" => cfg.gen.snap_to_ticks = flag()?,
                "hit_reward" => cfg.reward.hit_reward = num!(),
                "distance_weight" => cfg.reward.distance_weight = num!(),
                "step_penalty" => cfg.reward.step_penalty = num!(),
                "ppo_clip_ratio" => cfg.ppo.clip_ratio = num!(),
                "ppo_gamma" => cfg.ppo.gamma = num!(),
                "ppo_gae_lambda" => cfg.ppo.gae_lambda = num!(),
                "ppo_epochs" => cfg.ppo.epochs = num!(),
                "ppo_minibatch_size" => cfg.ppo.minibatch_size = num!(),
                "ppo_learning_rate" => cfg.ppo.learning_rate = num!(),
                "ppo_entropy_coef" => cfg.ppo.entropy_coef = num!(),
                "ppo_value_coef" => cfg.ppo.value_coef = num!(),
                "ppo_max_grad_norm" => cfg.ppo.max_grad_norm = num!(),
                "ppo_rollout_len" => cfg.ppo.rollout_len = num!(),
                "ppo_total_steps" => cfg.ppo.total_steps = num!(),
                "ppo_workers" => cfg.ppo.workers = num!(),
                "net_conv_channels" => cfg.net.conv_channels = num!(),
                "net_hidden" => cfg.net.hidden = num!(),
                "step_cap" => cfg.step_cap = num!(),
                "global_cap" => cfg.global_cap = num!(),
                "mode" => cfg.mode = parse_mode(value).map_err(|_| bad())?,
                "endpoint_timeout_ms" => cfg.endpoint_timeout_ms = num!(),
                "max_tokens" => cfg.max_tokens = num!(),
                "fallback_on_service_error" => cfg.fallback_on_service_error = flag()?,
                "predictions_per_task" => cfg.predictions_per_task = num!(),
                "baselines" => {
                    cfg.baselines = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
                }
                "value_tolerance" => cfg.value_tolerance = num!(),
                "out" => cfg.out = PathBuf::from(value),
                _ => return Err(Error::parse(&loc, format!("unknown key {key:?}"))),
            }
        }
        match version {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::Config("schema_version is required".into())),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.reward.validate()?;
        self.ppo.validate()?;
        if self.charts == 0 || self.predictions_per_task == 0 {
            return Err(Error::Parameter("charts and predictions_per_task must be positive".into()));
        }
        if self.net.conv_channels == 0 || self.net.hidden == 0 {
            return Err(Error::Parameter("network sizes must be positive".into()));
        }
        if self.step_cap == 0 || self.step_cap > self.global_cap || self.global_cap > MAX_GLOBAL_CAP {
            return Err(Error::Parameter(format!(
                "need 0 < step_cap <= global_cap <= {MAX_GLOBAL_CAP}, got {} and {}",
                self.step_cap, self.global_cap
            )));
        }
        if !(self.value_tolerance > 0.0 && self.value_tolerance < 1.0) {
            return Err(Error::Parameter("value_tolerance must lie in (0, 1)".into()));
        }
        if let Some(b) = self.baselines.iter().find(|b| !BASELINES.contains(&b.as_str())) {
            return Err(Error::Parameter(format!("unknown baseline {b:?}")));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("schema_version", SCHEMA_VERSION.to_string());
        kv("seed", self.seed.to_string());
        kv("charts", self.charts.to_string());
        kv("categories_min", self.gen.categories.0.to_string());
        kv("categories_max", self.gen.categories.1.to_string());
        kv("values_min", self.gen.values.0.to_string());
        kv("values_max", self.gen.values.1.to_string());
        kv("ticks_min", self.gen.ticks.0.to_string());
        kv("ticks_max", self.gen.ticks.1.to_string());
        kv("orientation", orientation_name(self.gen.orientation).into());
        kv("value_labels", self.gen.value_labels.to_string());
        kv("snap_to_ticks", self.gen.snap_to_ticks.to_string());
        kv("hit_reward", self.reward.hit_reward.to_string());
        kv("distance_weight", self.reward.distance_weight.to_string());
        kv("step_penalty", self.reward.step_penalty.to_string());
        kv("ppo_clip_ratio", self.ppo.clip_ratio.to_string());
        kv("ppo_gamma", self.ppo.gamma.to_string());
        kv("ppo_gae_lambda", self.ppo.gae_lambda.to_string());
        kv("ppo_epochs", self.ppo.epochs.to_string());
        kv("ppo_minibatch_size", self.ppo.minibatch_size.to_string());
        kv("ppo_learning_rate", self.ppo.learning_rate.to_string());
        kv("ppo_entropy_coef", self.ppo.entropy_coef.to_string());
        kv("ppo_value_coef", self.ppo.value_coef.to_string());
        kv("ppo_max_grad_norm", self.ppo.max_grad_norm.to_string());
        kv("ppo_rollout_len", self.ppo.rollout_len.to_string());
        kv("ppo_total_steps", self.ppo.total_steps.to_string());
        kv("ppo_workers", self.ppo.workers.to_string());
        kv("net_conv_channels", self.net.conv_channels.to_string());
        kv("net_hidden", self.net.hidden.to_string());
        kv("step_cap", self.step_cap.to_string());
        kv("global_cap", self.global_cap.to_string());
        kv("mode", mode_name(self.mode).into());
        kv("endpoint_timeout_ms", self.endpoint_timeout_ms.to_string());
        kv("max_tokens", self.max_tokens.to_string());
        kv("fallback_on_service_error", self.fallback_on_service_error.to_string());
        kv("predictions_per_task", self.predictions_per_task.to_string());
        kv("baselines", self.baselines.join(","));
        kv("value_tolerance", self.value_tolerance.to_string());
        kv("out", self.out.display().to_string());
        s
    }

    pub fn predict_config(&self) -> PredictConfig {
        PredictConfig {
            step_cap: self.step_cap,
            global_cap: self.global_cap,
            fovea_radius: DEFAULT_FOVEA_RADIUS,
            memory_capacity: DEFAULT_CAPACITY,
            rho: DEFAULT_RHO,
            reward: self.reward,
            mode: self.mode,
            act_mode: ActMode::Sample,
            fallback_on_service_error: self.fallback_on_service_error,
            max_tokens: self.max_tokens,
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }

    pub fn policy_dir(&self) -> PathBuf {
        self.out.join("policies")
    }
}

/// Runs `f` on a rayon pool bounded to `jobs` threads (0 = rayon default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// Corpus

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub charts: Vec<String>,
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub charts: Vec<PreparedChart>,
    pub tasks: Vec<Task>,
}

impl Corpus {
    pub fn chart(&self, chart_id: &str) -> Option<&PreparedChart> {
        self.charts.iter().find(|c| c.chart.spec.chart_id == chart_id)
    }

    pub fn view(&self) -> CorpusView<'_> {
        CorpusView {
            charts: self.charts.iter().map(|c| (c.chart.spec.chart_id.clone(), c.chart.as_ref())).collect(),
            tasks: self.tasks.iter().map(|t| (t.task_id.clone(), t)).collect(),
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            per_chart: self.charts.iter().map(|c| (c.chart.spec.chart_id.clone(), c.chart.original_size)).collect(),
            default: None,
        }
    }

    /// Loads and cross-checks a corpus: every manifest id has its files,
    /// every PGM matches a fresh render of its spec, every task names a chart
    /// of the corpus and only AOIs that chart has.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!("manifest schema_version {}", manifest.schema_version)));
        }
        let read = |p: PathBuf| std::fs::read(&p).map_err(|e| Error::io(&p, e));
        let mut charts = Vec::with_capacity(manifest.charts.len());
        for id in &manifest.charts {
            let base = dir.join("charts");
            let spec: ChartSpec = serde_json::from_slice(&read(base.join(format!("{id}.json")))?)?;
            if &spec.chart_id != id {
                return Err(Error::Validation(format!("chart file {id} holds chart {}", spec.chart_id)));
            }
            let chart = render(&spec)?;
            let (w, h, px) = crate::chartgen::read_pgm(&read(base.join(format!("{id}.pgm")))?)?;
            if w != IMAGE_SIZE || h != IMAGE_SIZE || px != chart.pixels {
                return Err(Error::Validation(format!("{id}.pgm does not match its spec")));
            }
            read(base.join(format!("{id}.aoi.json")))?;
            charts.push(PreparedChart::new(chart));
        }
        let mut tasks = Vec::with_capacity(manifest.tasks.len());
        for id in &manifest.tasks {
            let task: Task = serde_json::from_slice(&read(dir.join("tasks").join(format!("{id}.json")))?)?;
            if &task.task_id != id {
                return Err(Error::Validation(format!("task file {id} holds task {}", task.task_id)));
            }
            let chart = charts
                .iter()
                .find(|c| c.chart.spec.chart_id == task.chart_id)
                .ok_or_else(|| Error::Validation(format!("task {id} refers to unknown chart {}", task.chart_id)))?;
            if let Some(a) = task.task_aoi_ids.iter().find(|a| chart.chart.aoi(a).is_none()) {
                return Err(Error::Validation(format!("task {id} names unknown AOI {a}")));
            }
            tasks.push(task);
        }
        Ok(Corpus { manifest, charts, tasks })
    }
}

fn fe_kind(seed: u64) -> TaskKind {
    if seed & 1 == 0 {
        TaskKind::FindExtreme(Extreme::Max)
    } else {
        TaskKind::FindExtreme(Extreme::Min)
    }
}

/// One chart with an RV, an F and an FE task. Charts that cannot carry all
/// three (ties, no separable value, labels that do not fit) are redrawn from a
/// derived seed.
pub fn generate_item(cfg: &RunConfig, index: usize) -> Result<(RenderedChart, Vec<Task>)> {
    let templates = Templates::default();
    let mut last_err = None;
    for attempt in 0..GEN_ATTEMPTS {
        let seed = derive_seed(cfg.seed, &[index as u64, attempt]);
        let spec = generate_spec(seed, &cfg.gen)?;
        let chart = match render(&spec) {
            Ok(c) => c,
            Err(e @ Error::Layout(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let kinds = [TaskKind::RetrieveValue, TaskKind::Filter, fe_kind(derive_seed(seed, &[0xFE]))];
        let tasks: Result<Vec<Task>> = kinds
            .iter()
            .enumerate()
            .map(|(k, kind)| generate_task_with(&chart, *kind, derive_seed(seed, &[k as u64]), &templates, cfg.value_tolerance))
            .collect();
        match tasks {
            Ok(t) => return Ok((chart, t)),
            Err(e @ Error::DegenerateChart(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Validation(format!(
        "chart {index}: no usable chart after {GEN_ATTEMPTS} attempts ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub charts: usize,
    pub tasks: usize,
}

pub fn cmd_gen(cfg: &RunConfig, jobs: usize) -> Result<GenSummary> {
    cfg.validate()?;
    let items: Vec<(RenderedChart, Vec<Task>)> =
        with_jobs(jobs, || (0..cfg.charts).into_par_iter().map(|i| generate_item(cfg, i)).collect::<Result<_>>())??;
    let dir = cfg.corpus_dir();
    let mut manifest = Manifest { schema_version: SCHEMA_VERSION, seed: cfg.seed, charts: vec![], tasks: vec![] };
    let mut seen = std::collections::HashSet::new();
    for (chart, tasks) in &items {
        let id = &chart.spec.chart_id;
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("duplicate chart id {id}")));
        }
        let base = dir.join("charts");
        crate::write_atomic(&base.join(format!("{id}.json")), serde_json::to_string_pretty(&chart.spec)?.as_bytes())?;
        chart.write_pgm(&base.join(format!("{id}.pgm")))?;
        chart.write_aoi_json(&base.join(format!("{id}.aoi.json")))?;
        manifest.charts.push(id.clone());
        for task in tasks {
            let path = dir.join("tasks").join(format!("{}.json", task.task_id));
            crate::write_atomic(&path, serde_json::to_string_pretty(task)?.as_bytes())?;
            manifest.tasks.push(task.task_id.clone());
        }
    }
    crate::write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(GenSummary { charts: manifest.charts.len(), tasks: manifest.tasks.len() })
}

// ---------------------------------------------------------------------------
// Training

pub fn cmd_train(cfg: &RunConfig, jobs: usize) -> Result<PolicySet> {
    cfg.validate()?;
    let corpus = Corpus::load(&cfg.corpus_dir())?;
    let (policies, logs) = with_jobs(jobs, || {
        train_policies(&corpus.charts, cfg.net, &cfg.ppo, cfg.reward, cfg.step_cap, derive_seed(cfg.seed, &[0x7EA1]))
    })??;
    let dir = cfg.policy_dir();
    policies.save_dir(&dir)?;
    let mut log = format!("policy,{LOG_HEADER}\n");
    for (kind, rows) in &logs {
        for row in rows {
            let _ = writeln!(log, "{},{}", kind.name(), row.csv_row());
        }
    }
    crate::write_atomic(&dir.join("train_log.csv"), log.as_bytes())?;
    Ok(policies)
}

// ---------------------------------------------------------------------------
// Prediction

#[derive(Serialize)]
struct TraceLine<'a> {
    task_id: &'a str,
    run: usize,
    events: &'a [MemoryEvent],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub model: usize,
    pub baselines: usize,
}

/// Model scanpaths for every task (and run), each followed by the requested
/// baselines at the same length.
pub fn predict_corpus(
    cfg: &RunConfig,
    corpus: &Corpus,
    policies: &PolicySet,
    endpoint: Option<&dyn TextCompletion>,
) -> Result<Vec<(Vec<Scanpath>, Vec<MemoryEvent>)>> {
    let pcfg = cfg.predict_config();
    let jobs: Vec<(usize, usize)> =
        (0..corpus.tasks.len()).flat_map(|t| (0..cfg.predictions_per_task).map(move |r| (t, r))).collect();
    jobs.par_iter()
        .map(|&(t, run)| {
            let task = &corpus.tasks[t];
            let chart = corpus
                .chart(&task.chart_id)
                .ok_or_else(|| Error::Validation(format!("task {} has no chart", task.task_id)))?;
            let seed = derive_seed(cfg.seed, &[0x9DED, t as u64, run as u64]);
            let pred = predict(chart, task, policies, &pcfg, seed, endpoint)?;
            let n = pred.scanpath.len().max(1);
            let mut paths = vec![pred.scanpath];
            for (b, name) in cfg.baselines.iter().enumerate() {
                let bseed = derive_seed(seed, &[b as u64]);
                let mut s = match name.as_str() {
                    "random" => baseline_random(&chart.chart, n, bseed)?,
                    "saliency" => baseline_saliency(&chart.chart, &chart.scene, n, bseed)?,
                    "center" => baseline_center(&chart.chart, n, bseed)?,
                    other => return Err(Error::Parameter(format!("unknown baseline {other:?}"))),
                };
                s.task_id = task.task_id.clone();
                paths.push(s);
            }
            Ok((paths, pred.memory_trace))
        })
        .collect()
}

pub fn cmd_predict(cfg: &RunConfig, jobs: usize, endpoint: Option<&dyn TextCompletion>) -> Result<PredictSummary> {
    cfg.validate()?;
    let corpus = Corpus::load(&cfg.corpus_dir())?;
    let policies = PolicySet::load_dir(&cfg.policy_dir())?;
    let results = with_jobs(jobs, || predict_corpus(cfg, &corpus, &policies, endpoint))??;
    let mut all = Vec::new();
    let mut traces = String::new();
    for (k, (paths, events)) in results.iter().enumerate() {
        all.extend(paths.iter().cloned());
        let line = TraceLine { task_id: &paths[0].task_id, run: k % cfg.predictions_per_task, events };
        traces.push_str(&serde_json::to_string(&line)?);
        traces.push('\n');
    }
    write_jsonl(&cfg.out.join("predictions.jsonl"), &all)?;
    crate::write_atomic(&cfg.out.join("memory_traces.jsonl"), traces.as_bytes())?;
    Ok(PredictSummary { model: results.len(), baselines: all.len() - results.len() })
}

// ---------------------------------------------------------------------------
// Evaluation

pub fn cmd_eval(cfg: &RunConfig, predicted: &Path, reference: &Path, jobs: usize) -> Result<MetricReport> {
    let corpus = Corpus::load(&cfg.corpus_dir())?;
    let bounds = corpus.bounds();
    let pred = ingest_scanpaths(predicted, &bounds)?;
    let refs = ingest_scanpaths(reference, &bounds)?;
    let report = with_jobs(jobs, || build_report(&pred, &refs, &corpus.view()))??;
    crate::write_atomic(&cfg.out.join("report.csv"), report.to_csv().as_bytes())?;
    crate::write_atomic(&cfg.out.join("report.json"), report.to_json()?.as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Overlays

pub const MARKER_RGB: [u8; 3] = [255, 0, 0];
pub const PATH_RGB: [u8; 3] = [0, 96, 255];
const MARKER_RADIUS: i32 = 2;

/// RGB image of the chart with saccade lines and red fixation markers
/// (filled squares centred on each fixation, drawn after the lines).
pub fn overlay_image(chart: &RenderedChart, scanpath: &Scanpath) -> Vec<u8> {
    let n = IMAGE_SIZE as i32;
    let mut rgb: Vec<u8> = chart.pixels.iter().flat_map(|&v| [v, v, v]).collect();
    let put = |rgb: &mut Vec<u8>, x: i32, y: i32, c: [u8; 3]| {
        if (0..n).contains(&x) && (0..n).contains(&y) {
            let k = 3 * (y * n + x) as usize;
            rgb[k..k + 3].copy_from_slice(&c);
        }
    };
    let (w, h) = chart.original_size;
    let pts: Vec<(i32, i32)> = scanpath
        .fixations
        .iter()
        .map(|p| {
            ((p[0] * IMAGE_SIZE as f64 / w as f64).floor() as i32, (p[1] * IMAGE_SIZE as f64 / h as f64).floor() as i32)
        })
        .collect();
    for seg in pts.windows(2) {
        let ((mut x, mut y), (x1, y1)) = (seg[0], seg[1]);
        let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
        let (sx, sy) = ((x1 - x).signum(), (y1 - y).signum());
        let mut err = dx + dy;
        loop {
            put(&mut rgb, x, y, PATH_RGB);
            if (x, y) == (x1, y1) {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
    for &(x, y) in &pts {
        for oy in -MARKER_RADIUS..=MARKER_RADIUS {
            for ox in -MARKER_RADIUS..=MARKER_RADIUS {
                put(&mut rgb, x + ox, y + oy, MARKER_RGB);
            }
        }
    }
    rgb
}

pub fn ppm_bytes(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// One PPM per scanpath; returns the written paths. An empty input writes nothing.
pub fn cmd_overlay(cfg: &RunConfig, scanpaths: &Path) -> Result<Vec<PathBuf>> {
    let corpus = Corpus::load(&cfg.corpus_dir())?;
    let paths = ingest_scanpaths(scanpaths, &corpus.bounds())?;
    if paths.is_empty() {
        log::warn!("{}: no scanpaths, no overlays written", scanpaths.display());
        return Ok(Vec::new());
    }
    let dir = cfg.out.join("overlays");
    let mut written = Vec::with_capacity(paths.len());
    for (k, s) in paths.iter().enumerate() {
        let chart = corpus
            .chart(&s.chart_id)
            .ok_or_else(|| Error::Validation(format!("scanpath {k} refers to unknown chart {}", s.chart_id)))?;
        let img = overlay_image(&chart.chart, s);
        let name = format!("{k:04}-{}-{}.ppm", file_safe(&s.task_id), file_safe(&s.method));
        let path = dir.join(name);
        crate::write_atomic(&path, &ppm_bytes(IMAGE_SIZE, IMAGE_SIZE, &img))?;
        written.push(path);
    }
    Ok(written)
}

/// Rows per (task family, method) that a report over this corpus can have.
pub fn expected_report_rows(corpus: &Corpus, methods: &[&str]) -> usize {
    let families: BTreeMap<&str, ()> = corpus.tasks.iter().map(|t| (t.kind.family(), ())).collect();
    families.len() * methods.len()
}

/// Per-kind subtask checkpoints present in a directory.
pub fn checkpoints_present(dir: &Path) -> HashMap<SubtaskKind, bool> {
    SubtaskKind::ALL.iter().map(|k| (*k, PolicySet::checkpoint_path(dir, *k).exists())).collect()
}

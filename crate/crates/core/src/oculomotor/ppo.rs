//! Proximal policy optimization: clipped surrogate, GAE, entropy bonus, Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::GazeEpisode;
use super::net::{log_softmax, NetConfig, PolicyParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, SimRng};
use crate::vision::{GridCoord, ObservationStack, CELLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Picks a cell from the policy's logits. Greedy ties go to the lowest index.
pub fn act<R: Rng + ?Sized>(policy: &PolicyParams, obs: &ObservationStack, rng: &mut R, mode: ActMode) -> Result<GridCoord> {
    let f = policy.forward(&obs.data);
    select(&f.logits, rng, mode)
}

pub fn select<R: Rng + ?Sized>(logits: &[f64], rng: &mut R, mode: ActMode) -> Result<GridCoord> {
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit at cell {i}")));
    }
    let idx = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, l) in logits.iter().enumerate() {
                if *l > logits[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let lp = log_softmax(logits);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = CELLS - 1;
            for (i, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    Ok(GridCoord::from_index(idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Environment steps collected per update.
    pub rollout_len: usize,
    pub total_steps: usize,
    /// Independent rollout streams; fixed so results do not depend on thread count.
    pub workers: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_ratio: 0.2,
            gamma: 0.95,
            gae_lambda: 0.9,
            epochs: 4,
            minibatch_size: 256,
            learning_rate: 3e-3,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            rollout_len: 2048,
            total_steps: 40_000,
            workers: 4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("ppo: {what}")));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_len == 0 || self.workers == 0 {
            return bad("epochs, minibatch_size, rollout_len and workers must be positive");
        }
        if self.rollout_len < self.workers {
            return bad("rollout_len must be at least the number of workers");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

/// Supplies fresh training episodes.
pub trait EpisodeSource: Sync {
    fn sample(&self, rng: &mut SimRng) -> GazeEpisode;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub batch: usize,
    pub steps: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_length: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

pub const LOG_HEADER: &str = "batch,steps,episodes,mean_return,mean_length,policy_loss,value_loss,entropy";

impl BatchLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.batch,
            self.steps,
            self.episodes,
            self.mean_return,
            self.mean_length,
            self.policy_loss,
            self.value_loss,
            self.entropy
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<BatchLog>,
}

struct Sample {
    obs: Vec<f64>,
    action: usize,
    logp: f64,
    advantage: f64,
    ret: f64,
}

struct Segment {
    samples: Vec<Sample>,
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

fn collect_segment(
    params: &PolicyParams,
    source: &dyn EpisodeSource,
    steps: usize,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Segment> {
    let mut rng = rng_from(seed, &[]);
    let mut obs_buf = Vec::with_capacity(steps);
    let mut actions = Vec::with_capacity(steps);
    let mut logps = Vec::with_capacity(steps);
    let mut values = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut dones = Vec::with_capacity(steps);
    let mut returns = Vec::new();
    let mut lengths = Vec::new();

    let mut ep = source.sample(&mut rng);
    let mut obs = ep.observation();
    let (mut ep_ret, mut ep_len) = (0.0, 0usize);
    let mut bootstrap = 0.0;
    for t in 0..steps {
        let f = params.forward(&obs.data);
        let action = select(&f.logits, &mut rng, ActMode::Sample)?;
        let lp = log_softmax(&f.logits)[action.index()];
        let res = ep.step(action)?;
        obs_buf.push(std::mem::take(&mut obs.data));
        actions.push(action.index());
        logps.push(lp);
        values.push(f.value);
        rewards.push(res.reward);
        dones.push(res.done);
        ep_ret += res.reward;
        ep_len += 1;
        if res.done {
            returns.push(ep_ret);
            lengths.push(ep_len);
            ep_ret = 0.0;
            ep_len = 0;
            ep = source.sample(&mut rng);
            obs = ep.observation();
        } else {
            obs = res.observation;
            if t + 1 == steps {
                bootstrap = params.forward(&obs.data).value;
            }
        }
    }

    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 == n {
            bootstrap
        } else {
            values[t + 1]
        };
        let carry = if dones[t] { 0.0 } else { last };
        let delta = rewards[t] + cfg.gamma * next_value - values[t];
        last = delta + cfg.gamma * cfg.gae_lambda * carry;
        adv[t] = last;
    }
    let samples = obs_buf
        .into_iter()
        .enumerate()
        .map(|(t, obs)| Sample { obs, action: actions[t], logp: logps[t], advantage: adv[t], ret: adv[t] + values[t] })
        .collect();
    Ok(Segment { samples, returns, lengths })
}

/// Loss terms of one sample plus its gradient contribution scaled by `scale`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

impl LossTerms {
    pub fn total(&self, cfg: &PpoConfig) -> f64 {
        self.policy + cfg.value_coef * self.value - cfg.entropy_coef * self.entropy
    }
}

/// Clipped-surrogate loss for one transition; accumulates `scale * dL/dθ` into `grad`.
pub fn sample_loss_grad(
    params: &PolicyParams,
    obs: &[f64],
    action: usize,
    old_logp: f64,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> LossTerms {
    let f = params.forward(obs);
    let lp = log_softmax(&f.logits);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let entropy = -p.iter().zip(&lp).map(|(pi, li)| pi * li).sum::<f64>();
    let ratio = (lp[action] - old_logp).exp();
    let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    let (s1, s2) = (ratio * advantage, clipped * advantage);
    let policy = -s1.min(s2);
    let value = (f.value - ret).powi(2);
    if let Some(grad) = grad {
        // d(policy)/d(log pi(a)), zero where the clipped branch is active.
        let g = if s1 <= s2 { -ratio * advantage } else { 0.0 };
        let dlogits: Vec<f64> = (0..CELLS)
            .map(|j| {
                let onehot = if j == action { 1.0 } else { 0.0 };
                scale * (g * (onehot - p[j]) + cfg.entropy_coef * p[j] * (lp[j] + entropy))
            })
            .collect();
        let dvalue = scale * cfg.value_coef * 2.0 * (f.value - ret);
        params.backward(obs, &f, &dlogits, dvalue, grad);
    }
    LossTerms { policy, value, entropy }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..w.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            w[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

const GRAD_CHUNK: usize = 32;

/// Trains one gaze policy. Deterministic for a fixed seed regardless of thread count.
pub fn ppo_train(source: &dyn EpisodeSource, net: NetConfig, cfg: &PpoConfig, seed: u64) -> Result<TrainOutcome> {
    ppo_train_from(source, PolicyParams::init(net, &mut rng_from(seed, &[0x1417])), cfg, seed)
}

pub fn ppo_train_from(
    source: &dyn EpisodeSource,
    init: PolicyParams,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init;
    let n_params = params.weights.len();
    let mut adam = Adam::new(n_params);
    let mut shuffle_rng = rng_from(seed, &[0x5E1F]);
    let mut log = Vec::new();
    let batches = cfg.total_steps.div_ceil(cfg.rollout_len).max(1);

    for batch in 0..batches {
        let per_worker = cfg.rollout_len / cfg.workers;
        let extra = cfg.rollout_len % cfg.workers;
        let segments: Vec<Result<Segment>> = (0..cfg.workers)
            .into_par_iter()
            .map(|w| {
                let steps = per_worker + usize::from(w < extra);
                collect_segment(&params, source, steps, cfg, derive_seed(seed, &[batch as u64, w as u64]))
            })
            .collect();
        let mut samples = Vec::with_capacity(cfg.rollout_len);
        let (mut returns, mut lengths) = (Vec::new(), Vec::new());
        for seg in segments {
            let seg = seg?;
            samples.extend(seg.samples);
            returns.extend(seg.returns);
            lengths.extend(seg.lengths);
        }

        // Normalize advantages over the batch.
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        let norm_adv: Vec<f64> = samples.iter().map(|s| (s.advantage - mean) / sd).collect();

        let last_good = params.clone();
        let mut terms = LossTerms::default();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            terms = LossTerms::default();
            for mb in order.chunks(cfg.minibatch_size) {
                let scale = 1.0 / mb.len() as f64;
                let partials: Vec<(Vec<f64>, LossTerms)> = mb
                    .par_chunks(GRAD_CHUNK)
                    .map(|chunk| {
                        let mut g = vec![0.0; n_params];
                        let mut t = LossTerms::default();
                        for &i in chunk {
                            let s = &samples[i];
                            let lt = sample_loss_grad(
                                &params, &s.obs, s.action, s.logp, norm_adv[i], s.ret, cfg, scale, Some(&mut g),
                            );
                            t.policy += lt.policy;
                            t.value += lt.value;
                            t.entropy += lt.entropy;
                        }
                        (g, t)
                    })
                    .collect();
                let mut grad = vec![0.0; n_params];
                for (g, t) in partials {
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    terms.policy += t.policy / n;
                    terms.value += t.value / n;
                    terms.entropy += t.entropy / n;
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !norm.is_finite() || !terms.total(cfg).is_finite() {
                    return Err(Error::Training {
                        batch,
                        reason: "non-finite loss or gradient".into(),
                        last_good: Box::new(last_good),
                    });
                }
                if norm > cfg.max_grad_norm {
                    let k = cfg.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
                adam.step(&mut params.weights, &grad, cfg.learning_rate);
            }
        }
        if !params.is_finite() {
            return Err(Error::Training { batch, reason: "non-finite weights".into(), last_good: Box::new(last_good) });
        }
        let mean_of = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let entry = BatchLog {
            batch,
            steps: (batch + 1) * cfg.rollout_len,
            episodes: returns.len(),
            mean_return: mean_of(&returns),
            mean_length: mean_of(&lengths.iter().map(|l| *l as f64).collect::<Vec<_>>()),
            policy_loss: terms.policy,
            value_loss: terms.value,
            entropy: terms.entropy,
        };
        log::debug!(
            "batch {batch}: return {:.3} length {:.2} entropy {:.3}",
            entry.mean_return,
            entry.mean_length,
            entry.entropy
        );
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

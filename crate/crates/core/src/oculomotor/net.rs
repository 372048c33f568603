//! Small fully convolutional actor-critic over the 5x20x20 observation.
//!
//! conv3x3 -> ReLU -> row/column mean pooling -> per-cell hidden layer on
//! [local, row mean, column mean] -> ReLU -> per-cell logit (+ positional bias);
//! the value head reads the mean-pooled hidden features. Gradients are
//! derived by hand and checked against finite differences in tests.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::vision::{CELLS, CHANNELS, GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub conv_channels: usize,
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { conv_channels: 8, hidden: 16 }
    }
}

/// Offsets of each parameter block inside the flat weight vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    c: usize,
    h: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wo: usize,
    pos: usize,
    wv: usize,
    bv: usize,
    len: usize,
}

impl Layout {
    fn of(cfg: NetConfig) -> Self {
        let (c, h) = (cfg.conv_channels, cfg.hidden);
        let w1 = 0;
        let b1 = w1 + c * CHANNELS * 9;
        let w2 = b1 + c;
        let b2 = w2 + h * 3 * c;
        let wo = b2 + h;
        let pos = wo + h;
        let wv = pos + CELLS;
        let bv = wv + h;
        Layout { c, h, w1, b1, w2, b2, wo, pos, wv, bv, len: bv + 1 }
    }
}

pub fn param_count(cfg: NetConfig) -> usize {
    Layout::of(cfg).len
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub config: NetConfig,
    pub weights: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct Forward {
    pub logits: Vec<f64>,
    pub value: f64,
    z1: Vec<f64>,
    a: Vec<f64>,
    rowm: Vec<f64>,
    colm: Vec<f64>,
    z2: Vec<f64>,
    hid: Vec<f64>,
    pooled: Vec<f64>,
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Self {
        let l = Layout::of(config);
        let mut w = vec![0.0; l.len];
        let he = |fan_in: usize| Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let d1 = he(CHANNELS * 9);
        for v in &mut w[l.w1..l.b1] {
            *v = d1.sample(rng);
        }
        let d2 = he(3 * l.c);
        for v in &mut w[l.w2..l.b2] {
            *v = d2.sample(rng);
        }
        let d_out = Normal::new(0.0, 0.01).expect("finite std");
        for v in &mut w[l.wo..l.pos] {
            *v = d_out.sample(rng);
        }
        PolicyParams { config, weights: w }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), CHANNELS * CELLS);
        let l = Layout::of(self.config);
        let w = &self.weights;
        let (c_n, h_n) = (l.c, l.h);

        let mut z1 = vec![0.0; c_n * CELLS];
        for c in 0..c_n {
            let out = &mut z1[c * CELLS..(c + 1) * CELLS];
            out.iter_mut().for_each(|v| *v = w[l.b1 + c]);
            for k in 0..CHANNELS {
                let xin = &x[k * CELLS..(k + 1) * CELLS];
                if xin.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wk = w[l.w1 + ((c * CHANNELS + k) * 3 + dy) * 3 + dx];
                        if wk == 0.0 {
                            continue;
                        }
                        shift_accumulate(out, xin, dy, dx, wk);
                    }
                }
            }
        }
        let a: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();

        let mut rowm = vec![0.0; c_n * GRID];
        let mut colm = vec![0.0; c_n * GRID];
        for c in 0..c_n {
            for r in 0..GRID {
                for col in 0..GRID {
                    let v = a[c * CELLS + r * GRID + col];
                    rowm[c * GRID + r] += v / GRID as f64;
                    colm[c * GRID + col] += v / GRID as f64;
                }
            }
        }

        let mut z2 = vec![0.0; h_n * CELLS];
        for h in 0..h_n {
            let wrow = &w[l.w2 + h * 3 * c_n..l.w2 + (h + 1) * 3 * c_n];
            let mut rterm = [0.0; GRID];
            let mut cterm = [0.0; GRID];
            for c in 0..c_n {
                for g in 0..GRID {
                    rterm[g] += wrow[c_n + c] * rowm[c * GRID + g];
                    cterm[g] += wrow[2 * c_n + c] * colm[c * GRID + g];
                }
            }
            let out = &mut z2[h * CELLS..(h + 1) * CELLS];
            for (i, v) in out.iter_mut().enumerate() {
                *v = w[l.b2 + h] + rterm[i / GRID] + cterm[i % GRID];
            }
            for c in 0..c_n {
                let wc = wrow[c];
                let ac = &a[c * CELLS..(c + 1) * CELLS];
                for (o, av) in out.iter_mut().zip(ac) {
                    *o += wc * av;
                }
            }
        }
        let hid: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();

        let mut logits = w[l.pos..l.pos + CELLS].to_vec();
        let mut pooled = vec![0.0; h_n];
        for h in 0..h_n {
            let wo = w[l.wo + h];
            let hh = &hid[h * CELLS..(h + 1) * CELLS];
            let mut sum = 0.0;
            for (lg, hv) in logits.iter_mut().zip(hh) {
                *lg += wo * hv;
                sum += hv;
            }
            pooled[h] = sum / CELLS as f64;
        }
        let value = w[l.bv] + (0..h_n).map(|h| w[l.wv + h] * pooled[h]).sum::<f64>();
        Forward { logits, value, z1, a, rowm, colm, z2, hid, pooled }
    }

    /// Accumulates d(loss)/d(weights) into `grad` given upstream gradients.
    pub fn backward(&self, x: &[f64], f: &Forward, dlogits: &[f64], dvalue: f64, grad: &mut [f64]) {
        let l = Layout::of(self.config);
        let w = &self.weights;
        let (c_n, h_n) = (l.c, l.h);

        grad[l.bv] += dvalue;
        for (i, d) in dlogits.iter().enumerate() {
            grad[l.pos + i] += d;
        }
        let mut dz2 = vec![0.0; h_n * CELLS];
        for h in 0..h_n {
            grad[l.wv + h] += dvalue * f.pooled[h];
            let hh = &f.hid[h * CELLS..(h + 1) * CELLS];
            grad[l.wo + h] += dlogits.iter().zip(hh).map(|(d, v)| d * v).sum::<f64>();
            let (wo, wv) = (w[l.wo + h], w[l.wv + h] / CELLS as f64);
            for i in 0..CELLS {
                if f.z2[h * CELLS + i] > 0.0 {
                    dz2[h * CELLS + i] = dlogits[i] * wo + dvalue * wv;
                }
            }
        }

        let mut da = vec![0.0; c_n * CELLS];
        let mut drowm = vec![0.0; c_n * GRID];
        let mut dcolm = vec![0.0; c_n * GRID];
        for h in 0..h_n {
            let dz = &dz2[h * CELLS..(h + 1) * CELLS];
            grad[l.b2 + h] += dz.iter().sum::<f64>();
            let mut dr = [0.0; GRID];
            let mut dc = [0.0; GRID];
            for (i, v) in dz.iter().enumerate() {
                dr[i / GRID] += v;
                dc[i % GRID] += v;
            }
            let base = l.w2 + h * 3 * c_n;
            for c in 0..c_n {
                let ac = &f.a[c * CELLS..(c + 1) * CELLS];
                grad[base + c] += dz.iter().zip(ac).map(|(d, v)| d * v).sum::<f64>();
                let wc = w[base + c];
                let dac = &mut da[c * CELLS..(c + 1) * CELLS];
                for (o, d) in dac.iter_mut().zip(dz) {
                    *o += wc * d;
                }
                for g in 0..GRID {
                    grad[base + c_n + c] += dr[g] * f.rowm[c * GRID + g];
                    grad[base + 2 * c_n + c] += dc[g] * f.colm[c * GRID + g];
                    drowm[c * GRID + g] += w[base + c_n + c] * dr[g];
                    dcolm[c * GRID + g] += w[base + 2 * c_n + c] * dc[g];
                }
            }
        }

        for c in 0..c_n {
            let mut dz1 = vec![0.0; CELLS];
            for i in 0..CELLS {
                if f.z1[c * CELLS + i] > 0.0 {
                    dz1[i] = da[c * CELLS + i]
                        + (drowm[c * GRID + i / GRID] + dcolm[c * GRID + i % GRID]) / GRID as f64;
                }
            }
            grad[l.b1 + c] += dz1.iter().sum::<f64>();
            for k in 0..CHANNELS {
                let xin = &x[k * CELLS..(k + 1) * CELLS];
                if xin.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for dy in 0..3 {
                    for dx in 0..3 {
                        grad[l.w1 + ((c * CHANNELS + k) * 3 + dy) * 3 + dx] += shift_dot(&dz1, xin, dy, dx);
                    }
                }
            }
        }
    }
}

/// out[r][c] += w * x[r + dy - 1][c + dx - 1] over in-bounds source cells.
fn shift_accumulate(out: &mut [f64], x: &[f64], dy: usize, dx: usize, w: f64) {
    let (r0, r1) = (1usize.saturating_sub(dy), (GRID + 1 - dy).min(GRID));
    let (c0, c1) = (1usize.saturating_sub(dx), (GRID + 1 - dx).min(GRID));
    for r in r0..r1 {
        let sr = r + dy - 1;
        let o = &mut out[r * GRID + c0..r * GRID + c1];
        let s = &x[sr * GRID + c0 + dx - 1..sr * GRID + c1 + dx - 1];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += w * sv;
        }
    }
}

/// sum over r, c of g[r][c] * x[r + dy - 1][c + dx - 1].
fn shift_dot(g: &[f64], x: &[f64], dy: usize, dx: usize) -> f64 {
    let (r0, r1) = (1usize.saturating_sub(dy), (GRID + 1 - dy).min(GRID));
    let (c0, c1) = (1usize.saturating_sub(dx), (GRID + 1 - dx).min(GRID));
    let mut acc = 0.0;
    for r in r0..r1 {
        let sr = r + dy - 1;
        let gs = &g[r * GRID + c0..r * GRID + c1];
        let s = &x[sr * GRID + c0 + dx - 1..sr * GRID + c1 + dx - 1];
        acc += gs.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

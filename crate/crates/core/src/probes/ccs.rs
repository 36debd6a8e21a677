// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contrast-consistent search: an unsupervised direction whose probabilities
//! on a statement and its negation are consistent and confident.

use serde::{Deserialize, Serialize};

use super::{accuracy, dot, feature_stats, norm, sigmoid, standardize, ProbeKind, ProbeModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{normal64, stream_rng};

pub const MIN_PAIRS: usize = 8;

/// Activations of a statement (`plus`) and its negation (`minus`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastPair {
    pub plus: Vec<f32>,
    pub minus: Vec<f32>,
    pub id: String,
    pub topic: String,
    /// Truth value of the `plus` statement, used only to fix the global sign.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcsConfig {
    pub restarts: u32,
    pub iters: u32,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CcsConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            iters: 1000,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Final loss of every restart and the index of the one kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsTrace {
    pub restart_losses: Vec<f64>,
    pub best: usize,
}

/// Mean over pairs of `(p⁺ − (1 − p⁻))² + min(p⁺, p⁻)²`, where `x` holds the
/// standardized plus rows followed by the standardized minus rows.
pub fn ccs_loss(xp: &[f64], xm: &[f64], d: usize, w: &[f64], b: f64) -> f64 {
    let mut loss = 0.0;
    let mut n = 0usize;
    for (rp, rm) in xp.chunks_exact(d).zip(xm.chunks_exact(d)) {
        let pp = sigmoid(dot(rp, w) + b);
        let pm = sigmoid(dot(rm, w) + b);
        let c = pp + pm - 1.0;
        let m = pp.min(pm);
        loss += c * c + m * m;
        n += 1;
    }
    loss / n as f64
}

fn ccs_grad(xp: &[f64], xm: &[f64], d: usize, w: &[f64], b: f64) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    let mut n = 0usize;
    for (rp, rm) in xp.chunks_exact(d).zip(xm.chunks_exact(d)) {
        let pp = sigmoid(dot(rp, w) + b);
        let pm = sigmoid(dot(rm, w) + b);
        let c = pp + pm - 1.0;
        let mut dp = 2.0 * c;
        let mut dm = 2.0 * c;
        if pp < pm {
            dp += 2.0 * pp;
        } else {
            dm += 2.0 * pm;
        }
        let sp = dp * pp * (1.0 - pp);
        let sm = dm * pm * (1.0 - pm);
        for ((g, &a), &c2) in gw.iter_mut().zip(rp).zip(rm) {
            *g += sp * a + sm * c2;
        }
        gb += sp + sm;
        n += 1;
    }
    let inv = 1.0 / n as f64;
    gw.iter_mut().for_each(|g| *g *= inv);
    (gw, gb * inv)
}

fn adam(xp: &[f64], xm: &[f64], d: usize, mut w: Vec<f64>, cfg: &CcsConfig) -> (Vec<f64>, f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut b = 0.0;
    let mut m = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    for t in 1..=cfg.iters as i32 {
        let (gw, gb) = ccs_grad(xp, xm, d, &w, b);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, g) in gw.iter().chain(std::iter::once(&gb)).enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let step = cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            if k < d {
                w[k] -= step;
            } else {
                b -= step;
            }
        }
    }
    (w, b)
}

pub fn train_ccs(pairs: &[ContrastPair], cfg: &CcsConfig) -> Result<ProbeModel> {
    train_ccs_traced(pairs, cfg).map(|(m, _)| m)
}

/// Like [`train_ccs`], also returning every restart's final loss.
pub fn train_ccs_traced(pairs: &[ContrastPair], cfg: &CcsConfig) -> Result<(ProbeModel, CcsTrace)> {
    if pairs.len() < MIN_PAIRS {
        return Err(Error::InsufficientPairs {
            needed: MIN_PAIRS,
            got: pairs.len(),
        });
    }
    if cfg.restarts == 0 || cfg.iters == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("restarts, iters and lr must be positive".into()));
    }
    let d = pairs[0].plus.len();
    if pairs.iter().any(|p| p.plus.len() != d || p.minus.len() != d) {
        return Err(Error::Shape("contrast pairs disagree on the activation width".into()));
    }
    let plus = Matrix::from_rows(&pairs.iter().map(|p| p.plus.as_slice()).collect::<Vec<_>>())?;
    let minus = Matrix::from_rows(&pairs.iter().map(|p| p.minus.as_slice()).collect::<Vec<_>>())?;
    let (mp, sp) = feature_stats(&plus);
    let (mm, sm) = feature_stats(&minus);
    let xp = standardize(&plus, &mp, &sp);
    let xm = standardize(&minus, &mm, &sm);

    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut losses = Vec::with_capacity(cfg.restarts as usize);
    let mut best_idx = 0;
    for r in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, r as u64);
        let scale = 1.0 / (d as f64).sqrt();
        let w0: Vec<f64> = (0..d).map(|_| normal64(&mut rng) * scale).collect();
        let (w, b) = adam(&xp, &xm, d, w0, cfg);
        let loss = ccs_loss(&xp, &xm, d, &w, b);
        losses.push(loss);
        if best.as_ref().is_none_or(|(l, _, _)| loss < *l) {
            best = Some((loss, w, b));
            best_idx = r as usize;
        }
    }
    let (_, mut w, mut b) = best.expect("at least one restart");
    let n = norm(&w);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateDirection);
    }

    // sign resolution: credence that the plus side is true is the average of
    // p⁺ and 1 − p⁻ under per-side standardization
    let labels: Vec<bool> = pairs.iter().filter_map(|p| p.label).collect();
    let mut train_accuracy = 0.0;
    if labels.len() == pairs.len() {
        let pred: Vec<bool> = xp
            .chunks_exact(d)
            .zip(xm.chunks_exact(d))
            .map(|(rp, rm)| {
                let pp = sigmoid(dot(rp, &w) + b);
                let pm = sigmoid(dot(rm, &w) + b);
                0.5 * (pp + 1.0 - pm) > 0.5
            })
            .collect();
        train_accuracy = accuracy(&pred, &labels);
        if train_accuracy < 0.5 {
            w.iter_mut().for_each(|v| *v = -*v);
            b = -b;
            train_accuracy = 1.0 - train_accuracy;
        }
    }

    let mean: Vec<f64> = mp.iter().zip(&mm).map(|(a, c)| 0.5 * (a + c)).collect();
    let std: Vec<f64> = sp.iter().zip(&sm).map(|(a, c)| 0.5 * (a + c)).collect();
    let model = ProbeModel {
        kind: ProbeKind::Ccs,
        mean,
        std,
        directions: vec![w.iter().map(|v| v / n).collect()],
        head: vec![n],
        bias: b,
        train_accuracy,
    };
    Ok((
        model,
        CcsTrace {
            restart_losses: losses,
            best: best_idx,
        },
    ))
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! L2-regularized logistic regression fit by full-batch gradient descent on
//! standardized features.

use serde::{Deserialize, Serialize};

use super::{accuracy, check_labels, feature_stats, norm, predict, sigmoid, softplus, standardize, ProbeKind, ProbeModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub l2: f64,
    pub lr: f64,
    pub iters: u32,
    /// Accepted for interface uniformity; the fit starts from zero weights
    /// and is fully deterministic.
    pub seed: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            lr: 0.1,
            iters: 2000,
            seed: 0,
        }
    }
}

/// Loss `mean_i BCE(σ(w·x_i + b), y_i) + l2/2·‖w‖²` and its gradient with
/// respect to `w` and `b`. `x` is row-major with `d` columns.
pub fn lr_objective(x: &[f64], d: usize, y: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = y.len();
    let mut loss = 0.0;
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    for (row, &yi) in x.chunks_exact(d).zip(y) {
        let s: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // residual σ(s) − y written so that flipping (y, s) negates it exactly
        let (l, r) = if yi { (softplus(-s), -sigmoid(-s)) } else { (softplus(s), sigmoid(s)) };
        loss += l;
        for (g, &xv) in gw.iter_mut().zip(row) {
            *g += r * xv;
        }
        gb += r;
    }
    let inv = 1.0 / n as f64;
    loss = loss * inv + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, &wv) in gw.iter_mut().zip(w) {
        *g = *g * inv + l2 * wv;
    }
    (loss, gw, gb * inv)
}

pub(crate) struct LrFit {
    pub w: Vec<f64>,
    pub b: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub initial_loss: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub final_loss: f64,
}

pub(crate) fn fit_standardized(x: &[f64], d: usize, y: &[bool], cfg: &LrConfig) -> LrFit {
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (initial_loss, _, _) = lr_objective(x, d, y, &w, b, cfg.l2);
    for _ in 0..cfg.iters {
        let (_, gw, gb) = lr_objective(x, d, y, &w, b, cfg.l2);
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= cfg.lr * g;
        }
        b -= cfg.lr * gb;
    }
    let (final_loss, _, _) = lr_objective(x, d, y, &w, b, cfg.l2);
    LrFit {
        w,
        b,
        initial_loss,
        final_loss,
    }
}

pub fn train_lr(acts: &Matrix, labels: &[bool], cfg: &LrConfig) -> Result<ProbeModel> {
    check_labels(acts, labels, 4)?;
    if !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) || cfg.iters == 0 {
        return Err(Error::Config("lr must be positive, l2 non-negative and iters non-zero".into()));
    }
    let (mean, std) = feature_stats(acts);
    let x = standardize(acts, &mean, &std);
    let fit = fit_standardized(&x, acts.cols(), labels, cfg);
    let n = norm(&fit.w);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    let mut model = ProbeModel {
        kind: ProbeKind::Lr,
        mean,
        std,
        directions: vec![fit.w.iter().map(|v| v / n).collect()],
        head: vec![n],
        bias: fit.b,
        train_accuracy: 0.0,
    };
    model.train_accuracy = accuracy(&predict(&model, acts)?.1, labels);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal64, stream_rng};

    fn blobs(n: usize, gap: f64, seed: u64) -> (Matrix, Vec<bool>) {
        let mut rng = stream_rng(seed, 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let t = i % 2 == 0;
            let c = if t { gap / 2.0 } else { -gap / 2.0 };
            rows.push([(c + normal64(&mut rng)) as f32, normal64(&mut rng) as f32]);
            labels.push(t);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_blobs() {
        let (a, l) = blobs(200, 6.0, 1);
        let m = train_lr(&a, &l, &LrConfig::default()).unwrap();
        assert!(m.train_accuracy >= 0.99, "{}", m.train_accuracy);
        m.validate().unwrap();
    }

    #[test]
    fn loss_decreases() {
        let (a, l) = blobs(100, 1.0, 2);
        let (mean, std) = feature_stats(&a);
        let x = standardize(&a, &mean, &std);
        let fit = fit_standardized(&x, 2, &l, &LrConfig::default());
        assert!(fit.final_loss < fit.initial_loss);
    }

    #[test]
    fn duplicate_rows_identical_model() {
        let (a, l) = blobs(40, 2.0, 3);
        let doubled = Matrix::vstack(&[&a, &a]).unwrap();
        let l2: Vec<bool> = l.iter().chain(&l).copied().collect();
        let m1 = train_lr(&a, &l, &LrConfig::default()).unwrap();
        let m2 = train_lr(&doubled, &l2, &LrConfig::default()).unwrap();
        for (x, y) in m1.directions[0].iter().zip(&m2.directions[0]) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((m1.bias - m2.bias).abs() < 1e-9);
    }

    #[test]
    fn label_flip_mirrors_model() {
        let (a, l) = blobs(60, 1.5, 4);
        let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
        let m = train_lr(&a, &l, &LrConfig::default()).unwrap();
        let f = train_lr(&a, &flipped, &LrConfig::default()).unwrap();
        assert_eq!(m.bias, -f.bias);
        for (x, y) in m.directions[0].iter().zip(&f.directions[0]) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn single_class_rejected() {
        let (a, _) = blobs(10, 1.0, 5);
        assert!(matches!(
            train_lr(&a, &[true; 10], &LrConfig::default()),
            Err(Error::SingleClass)
        ));
    }
}

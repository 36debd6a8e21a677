// SPDX-License-Identifier: MIT OR Apache-2.0

//! Lie-detection probes over layer activations and the hold-one-topic-out
//! evaluation harness.
//!
//! Every probe shares one read-out layout: features are standardized with
//! stored statistics, projected onto one or two unit directions, and the
//! projections are combined by a small linear head plus bias. The score goes
//! through a logistic sigmoid; a statement is predicted true iff its score is
//! strictly positive.

mod ccs;
mod eval;
mod lr;
mod ttpd;

pub use ccs::{ccs_loss, train_ccs, train_ccs_traced, CcsConfig, CcsTrace, ContrastPair};
pub use eval::{holdout_eval, EvalReport, EvalRow, HoldoutConfig, TopicSummary};
pub use lr::{lr_objective, train_lr, LrConfig};
pub use ttpd::{train_ttpd, TtpdConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::separability::column_means;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Lr,
    Mm,
    Ccs,
    Ttpd,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [ProbeKind::Lr, ProbeKind::Mm, ProbeKind::Ccs, ProbeKind::Ttpd];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Lr => "lr",
            ProbeKind::Mm => "mm",
            ProbeKind::Ccs => "ccs",
            ProbeKind::Ttpd => "ttpd",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ProbeKind::Lr),
            "mm" => Ok(ProbeKind::Mm),
            "ccs" => Ok(ProbeKind::Ccs),
            "ttpd" => Ok(ProbeKind::Ttpd),
            other => Err(Error::Config(format!("unknown probe kind `{other}`"))),
        }
    }
}

/// A fitted probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    /// Per-feature mean subtracted before projection.
    pub mean: Vec<f64>,
    /// Per-feature scale divided out before projection; always positive.
    pub std: Vec<f64>,
    /// Unit-norm directions in standardized feature space.
    pub directions: Vec<Vec<f64>>,
    /// Weight of each direction's projection in the score.
    pub head: Vec<f64>,
    pub bias: f64,
    /// Accuracy on the training rows (for CCS: against the labels used for
    /// sign resolution, if any).
    pub train_accuracy: f64,
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Raw score of one activation row.
    pub fn score(&self, a: &[f32]) -> f64 {
        let z: Vec<f64> = a
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (m, s))| (x as f64 - m) / s)
            .collect();
        let mut s = self.bias;
        for (dir, h) in self.directions.iter().zip(&self.head) {
            s += h * dot(dir, &z);
        }
        s
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.std.len() != d || self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::RejectedValue {
                name: "std".into(),
                reason: "normalization scales must be positive and match the feature count".into(),
            });
        }
        if self.directions.len() != self.head.len() || self.directions.is_empty() {
            return Err(Error::Shape("each direction needs exactly one head weight".into()));
        }
        for dir in &self.directions {
            if dir.len() != d || (norm(dir) - 1.0).abs() > 1e-9 {
                return Err(Error::RejectedValue {
                    name: "direction".into(),
                    reason: "directions must be unit vectors of the feature dimension".into(),
                });
            }
        }
        Ok(())
    }
}

/// Probabilities and hard labels for every row of `acts`.
pub fn predict(model: &ProbeModel, acts: &Matrix) -> Result<(Vec<f64>, Vec<bool>)> {
    if acts.cols() != model.dim() {
        return Err(Error::Shape(format!(
            "probe expects {} features, activations have {}",
            model.dim(),
            acts.cols()
        )));
    }
    let scores: Vec<f64> = acts.iter_rows().map(|r| model.score(r)).collect();
    Ok((scores.iter().map(|&s| sigmoid(s)).collect(), scores.iter().map(|&s| s > 0.0).collect()))
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(pred: &[bool], labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Difference-of-means probe: direction `normalize(μ_true − μ_false)` and the
/// midpoint threshold, in raw activation space.
pub fn train_mm(acts: &Matrix, labels: &[bool]) -> Result<ProbeModel> {
    check_labels(acts, labels, 1)?;
    let (t, f) = split_by_label(acts, labels);
    let mu_t = column_means(&t);
    let mu_f = column_means(&f);
    let diff: Vec<f64> = mu_t.iter().zip(&mu_f).map(|(a, b)| a - b).collect();
    let n = norm(&diff);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    let dir: Vec<f64> = diff.iter().map(|x| x / n).collect();
    let mid: Vec<f64> = mu_t.iter().zip(&mu_f).map(|(a, b)| (a + b) / 2.0).collect();
    let bias = -dot(&dir, &mid);
    let d = acts.cols();
    let mut model = ProbeModel {
        kind: ProbeKind::Mm,
        mean: vec![0.0; d],
        std: vec![1.0; d],
        directions: vec![dir],
        head: vec![1.0],
        bias,
        train_accuracy: 0.0,
    };
    model.train_accuracy = accuracy(&predict(&model, acts)?.1, labels);
    Ok(model)
}

// ----------------------------------------------------------------------------
// shared numerics

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn check_labels(acts: &Matrix, labels: &[bool], min_rows: usize) -> Result<()> {
    if acts.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} activation rows but {} labels",
            acts.rows(),
            labels.len()
        )));
    }
    if acts.rows() < min_rows {
        return Err(Error::InsufficientSamples(format!(
            "{} rows; need at least {min_rows}",
            acts.rows()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub(crate) fn split_by_label(acts: &Matrix, labels: &[bool]) -> (Matrix, Matrix) {
    let t: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let f: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    (acts.select_rows(&t), acts.select_rows(&f))
}

/// Column means and population standard deviations; constant columns get a
/// unit scale so they standardize to zero.
pub(crate) fn feature_stats(acts: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = column_means(acts);
    let n = acts.rows().max(1) as f64;
    let mut var = vec![0.0f64; acts.cols()];
    for r in acts.iter_rows() {
        for ((v, &x), m) in var.iter_mut().zip(r).zip(&mean) {
            let d = x as f64 - m;
            *v += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Row-major standardized copy of `acts`.
pub(crate) fn standardize(acts: &Matrix, mean: &[f64], std: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(acts.len());
    for r in acts.iter_rows() {
        out.extend(r.iter().zip(mean.iter().zip(std)).map(|(&x, (m, s))| (x as f64 - m) / s));
    }
    out
}

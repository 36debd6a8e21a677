// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation-aware weight importance, layer outlier ratios and pruning masks.
//!
//! The score of weight `W[i, j]` is `‖X_j‖₂ · |W[i, j]|`, where `‖X_j‖₂` is the
//! norm of input feature `j` over every calibration token. Pruning drops the
//! lowest-scoring fraction of weights within a comparison group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default outlier factor: a score is an outlier when it exceeds this many
/// times the layer mean.
pub const DEFAULT_M_FACTOR: f32 = 5.0;

/// Per-weight importance for one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub scores: Matrix,
    pub layer_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGroup {
    /// Compare weights within each output channel.
    #[default]
    PerRow,
    /// Compare all weights of the matrix at once.
    PerMatrix,
}

impl std::str::FromStr for MaskGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_row" | "per-row" | "row" => Ok(MaskGroup::PerRow),
            "per_matrix" | "per-matrix" | "matrix" => Ok(MaskGroup::PerMatrix),
            other => Err(Error::Config(format!("unknown mask group `{other}`"))),
        }
    }
}

/// Binary keep/drop pattern for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    pub group: MaskGroup,
    pub achieved_sparsity: f64,
}

impl PruneMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
            group: MaskGroup::PerRow,
            achieved_sparsity: 0.0,
        }
    }

    pub fn from_keep(rows: usize, cols: usize, keep: Vec<bool>, group: MaskGroup) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} mask needs {} entries, got {}",
                rows * cols,
                keep.len()
            )));
        }
        let kept = keep.iter().filter(|&&k| k).count();
        let achieved_sparsity = if keep.is_empty() {
            0.0
        } else {
            1.0 - kept as f64 / keep.len() as f64
        };
        Ok(Self {
            rows,
            cols,
            keep,
            group,
            achieved_sparsity,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn keeps(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn keep_flags(&self) -> &[bool] {
        &self.keep
    }

    pub fn zeros_in_row(&self, r: usize) -> usize {
        self.keep[r * self.cols..(r + 1) * self.cols]
            .iter()
            .filter(|&&k| !k)
            .count()
    }

    /// The mask as a 0/1 matrix, the form in which masks are archived.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("mask shape")
    }

    /// Tensor name for a stored mask, e.g. `mask.layer3.q`.
    pub fn tensor_name(layer: usize, matrix: &str) -> String {
        format!("mask.layer{layer}.{matrix}")
    }
}

/// Number of entries dropped from a group of `group_size` at `sparsity`.
#[inline]
pub fn prune_count(sparsity: f64, group_size: usize) -> usize {
    (sparsity * group_size as f64).floor() as usize
}

/// Per-feature ℓ2 norm over all calibration tokens (rows of `calib`).
pub fn column_norms(calib: &Matrix) -> Result<Vec<f32>> {
    if calib.rows() == 0 || calib.cols() == 0 {
        return Err(Error::EmptyInput("calibration activations are empty".into()));
    }
    let mut acc = vec![0.0f64; calib.cols()];
    for row in calib.iter_rows() {
        for (a, &x) in acc.iter_mut().zip(row) {
            let x = f64::from(x);
            *a += x * x;
        }
    }
    Ok(acc.into_iter().map(|s| s.sqrt() as f32).collect())
}

/// Accumulates squared column norms across several token batches so the
/// whole calibration stream never has to be materialised at once.
#[derive(Debug, Clone)]
pub struct NormAccumulator {
    sq: Vec<f64>,
    tokens: usize,
}

impl NormAccumulator {
    pub fn new(features: usize) -> Self {
        Self {
            sq: vec![0.0; features],
            tokens: 0,
        }
    }

    pub fn add(&mut self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.sq.len() {
            return Err(Error::Shape(format!(
                "batch has {} features, accumulator has {}",
                batch.cols(),
                self.sq.len()
            )));
        }
        for row in batch.iter_rows() {
            for (a, &x) in self.sq.iter_mut().zip(row) {
                let x = f64::from(x);
                *a += x * x;
            }
        }
        self.tokens += batch.rows();
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<f32>> {
        if self.tokens == 0 || self.sq.is_empty() {
            return Err(Error::EmptyInput("no calibration tokens accumulated".into()));
        }
        Ok(self.sq.into_iter().map(|s| s.sqrt() as f32).collect())
    }
}

/// `scores[i, j] = x_norms[j] · |W[i, j]|`, one multiply per entry.
pub fn wanda_scores(w: &Matrix, x_norms: &[f32], layer_index: u32) -> Result<ImportanceMatrix> {
    if x_norms.len() != w.cols() {
        return Err(Error::Shape(format!(
            "weight has {} input features but {} norms were given",
            w.cols(),
            x_norms.len()
        )));
    }
    if let Some(j) = x_norms.iter().position(|&n| !(n >= 0.0) || !n.is_finite()) {
        return Err(Error::Shape(format!("norm {j} is negative or non-finite")));
    }
    let mut scores = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        let src = w.row(i);
        for (j, s) in scores.row_mut(i).iter_mut().enumerate() {
            *s = x_norms[j] * src[j].abs();
        }
    }
    Ok(ImportanceMatrix {
        scores,
        layer_index,
    })
}

/// Fraction of scores exceeding `m_factor` times the mean score.
///
/// An all-zero matrix has no outliers and yields 0.
pub fn outlier_ratio(scores: &ImportanceMatrix, m_factor: f32) -> Result<f32> {
    let (count, total) = outlier_count(&[&scores.scores], m_factor)?;
    Ok((count as f64 / total as f64) as f32)
}

/// Outlier ratio pooled over several matrices of one layer: the threshold is
/// `m_factor` times the mean over all of their entries.
pub fn layer_outlier_ratio(scores: &[ImportanceMatrix], m_factor: f32) -> Result<f32> {
    let mats: Vec<&Matrix> = scores.iter().map(|s| &s.scores).collect();
    let (count, total) = outlier_count(&mats, m_factor)?;
    Ok((count as f64 / total as f64) as f32)
}

fn outlier_count(mats: &[&Matrix], m_factor: f32) -> Result<(usize, usize)> {
    if !(m_factor > 0.0) {
        return Err(Error::Config(format!("outlier factor must be positive, got {m_factor}")));
    }
    let total: usize = mats.iter().map(|m| m.len()).sum();
    if total == 0 {
        return Err(Error::EmptyInput("score matrix is empty".into()));
    }
    let sum: f64 = mats
        .iter()
        .flat_map(|m| m.as_slice())
        .map(|&v| f64::from(v))
        .sum();
    let mean = sum / total as f64;
    let threshold = f64::from(m_factor) * mean;
    let count = mats
        .iter()
        .flat_map(|m| m.as_slice())
        .filter(|&&v| f64::from(v) > threshold)
        .count();
    Ok((count, total))
}

/// Drops the `floor(sparsity · group_size)` lowest scores of every group.
///
/// Ties are resolved by a stable ascending sort on `(score, index)`, so the
/// lower column (or flat) index is dropped first.
pub fn build_mask(scores: &ImportanceMatrix, sparsity: f64, group: MaskGroup) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidSparsity {
            value: sparsity,
            reason: "must lie in [0, 1)".into(),
        });
    }
    let s = &scores.scores;
    let (rows, cols) = s.shape();
    let mut keep = vec![true; rows * cols];
    match group {
        MaskGroup::PerRow => {
            let drop = prune_count(sparsity, cols);
            let mut order: Vec<usize> = Vec::with_capacity(cols);
            for i in 0..rows {
                let row = s.row(i);
                order.clear();
                order.extend(0..cols);
                order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                for &j in &order[..drop] {
                    keep[i * cols + j] = false;
                }
            }
        }
        MaskGroup::PerMatrix => {
            let flat = s.as_slice();
            let drop = prune_count(sparsity, flat.len());
            let mut order: Vec<usize> = (0..flat.len()).collect();
            order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
            for &k in &order[..drop] {
                keep[k] = false;
            }
        }
    }
    PruneMask::from_keep(rows, cols, keep, group)
}

/// `W'[i, j] = W[i, j] · keep[i, j]`.
pub fn apply_mask(w: &Matrix, mask: &PruneMask) -> Result<Matrix> {
    if w.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "weight is {:?} but mask is {:?}",
            w.shape(),
            mask.shape()
        )));
    }
    let data = w
        .as_slice()
        .iter()
        .zip(mask.keep_flags())
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    Matrix::from_vec(w.rows(), w.cols(), data)
}

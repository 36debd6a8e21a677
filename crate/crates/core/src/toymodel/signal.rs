// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted truth signal for desk-scale experiments.
//!
//! The vocabulary is partitioned into an end-of-statement token, a negation
//! token, two pools of class marker tokens (one per truth value) and per-topic
//! filler pools. Planting turns the first `d_signal` residual dimensions into
//! an isolated subspace:
//!
//! * marker tokens carry `±amplitude` along a fixed unit direction there and
//!   share one common vector elsewhere, so the classes differ only inside the
//!   subspace; every other token has the subspace damped by `background`;
//! * no projection writes the subspace, and the only reader is a diagonal
//!   copy path in every block: `v` reads dimension `c` and `o` writes the
//!   result into the ordinary dimension `d_signal + c` with gain
//!   `write_gain`, moving marker content to later positions. The read gain
//!   is `copy_gain` in the first block and follows the growth of the
//!   residual scale in later ones, so every block contributes alike.
//!
//! The read weights are small, so activation-aware pruning removes them
//! progressively as sparsity grows, while the within-class spread of the
//! read-out dimensions comes mostly from the residual path and survives
//! pruning.

use serde::{Deserialize, Serialize};

use super::ToyModel;
use crate::error::{Error, Result};
use crate::rng::{normal, stream_rng};

/// Stream index reserved for the planted direction.
const SIGNAL_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalLayout {
    pub end_token: u32,
    pub not_token: u32,
    pub true_markers: Vec<u32>,
    pub false_markers: Vec<u32>,
    pub topic_pools: Vec<Vec<u32>>,
    pub d_signal: usize,
    /// Per-dimension scale of the planted marker component.
    pub amplitude: f32,
    /// Damping applied to the hidden subspace of non-marker tokens.
    pub background: f32,
    /// Diagonal weight of the copy path in the first value projection.
    pub copy_gain: f32,
    /// Diagonal weight of the copy path in each output projection.
    pub write_gain: f32,
}

impl SignalLayout {
    pub const MARKERS_PER_CLASS: usize = 4;
    pub const DEFAULT_AMPLITUDE: f32 = 3.0;
    pub const DEFAULT_BACKGROUND: f32 = 0.05;
    pub const DEFAULT_COPY_GAIN: f32 = 0.03;
    pub const DEFAULT_WRITE_GAIN: f32 = 20.0;

    /// Partitions `vocab` for `topics` filler pools.
    pub fn new(vocab: u32, d_model: u32, topics: usize, d_signal: usize) -> Result<Self> {
        let m = Self::MARKERS_PER_CLASS as u32;
        let reserved = 2 + 2 * m;
        if topics == 0 {
            return Err(Error::Config("at least one topic is required".into()));
        }
        if d_signal == 0 || d_signal > d_model as usize {
            return Err(Error::Config(format!(
                "signal subspace of {d_signal} dims does not fit d_model {d_model}"
            )));
        }
        let free = vocab.saturating_sub(reserved) as usize;
        let pool = (free / topics).min(32);
        if pool < 4 {
            return Err(Error::Config(format!(
                "vocabulary of {vocab} leaves {pool} filler tokens per topic; need at least 4"
            )));
        }
        let true_markers = (2..2 + m).collect();
        let false_markers = (2 + m..2 + 2 * m).collect();
        let topic_pools = (0..topics)
            .map(|t| {
                let start = reserved as usize + t * pool;
                (start..start + pool).map(|v| v as u32).collect()
            })
            .collect();
        Ok(Self {
            end_token: 0,
            not_token: 1,
            true_markers,
            false_markers,
            topic_pools,
            d_signal,
            amplitude: Self::DEFAULT_AMPLITUDE,
            background: Self::DEFAULT_BACKGROUND,
            copy_gain: Self::DEFAULT_COPY_GAIN,
            write_gain: Self::DEFAULT_WRITE_GAIN,
        })
    }

    pub fn markers(&self, label: bool) -> &[u32] {
        if label {
            &self.true_markers
        } else {
            &self.false_markers
        }
    }

    /// Unit direction of the planted signal within the hidden subspace.
    pub fn direction(&self, seed: u64) -> Vec<f32> {
        let mut rng = stream_rng(seed, SIGNAL_STREAM);
        let mut v: Vec<f32> = (0..self.d_signal).map(|_| normal(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn max_token(&self) -> u32 {
        self.topic_pools
            .iter()
            .flatten()
            .chain(&self.true_markers)
            .chain(&self.false_markers)
            .copied()
            .max()
            .unwrap_or(0)
            .max(self.not_token)
            .max(self.end_token)
    }
}

impl ToyModel {
    /// Returns a copy carrying the planted class signal and copy circuit.
    pub fn plant_signal(&self, layout: &SignalLayout) -> Result<ToyModel> {
        if layout.max_token() >= self.config.vocab {
            return Err(Error::Config(format!(
                "layout uses token {} but vocabulary has {}",
                layout.max_token(),
                self.config.vocab
            )));
        }
        if layout.d_signal > self.config.head_dim() || 2 * layout.d_signal > self.d_model() {
            return Err(Error::Config(format!(
                "signal subspace of {} dims needs at most head width {} and half of d_model {}",
                layout.d_signal,
                self.config.head_dim(),
                self.d_model()
            )));
        }
        let ds = layout.d_signal;
        let dir = layout.direction(self.config.seed);
        let scale = layout.amplitude * (ds as f32).sqrt();
        let mut out = self.clone();
        let shared: Vec<f32> = self.embedding.row(layout.true_markers[0] as usize)[ds..].to_vec();
        for tok in 0..self.vocab() {
            let row = out.embedding.row_mut(tok);
            let sign = if layout.true_markers.contains(&(tok as u32)) {
                Some(1.0)
            } else if layout.false_markers.contains(&(tok as u32)) {
                Some(-1.0)
            } else {
                None
            };
            match sign {
                Some(s) => {
                    for (x, &v) in row[..ds].iter_mut().zip(&dir) {
                        *x = s * scale * v;
                    }
                    row[ds..].copy_from_slice(&shared);
                }
                None => {
                    for x in &mut row[..ds] {
                        *x *= layout.background;
                    }
                }
            }
        }
        for b in &mut out.blocks {
            // nothing reads the marker subspace except the copy diagonal of v
            for m in [&mut b.q, &mut b.k, &mut b.up, &mut b.v] {
                for r in 0..m.rows() {
                    m.row_mut(r)[..ds].fill(0.0);
                }
            }
            // nothing writes it
            for m in [&mut b.o, &mut b.down] {
                for r in 0..ds {
                    m.row_mut(r).fill(0.0);
                }
            }
            for c in 0..ds {
                for r in 0..b.o.rows() {
                    b.o.set(r, c, 0.0);
                }
            }
        }
        // Copy channels c < ds of head 0 are read back only into the ordinary
        // residual dimension ds + c. The read gain of block l is scaled by the
        // residual RMS at its input relative to block 0, cancelling the
        // shrinkage that normalization applies to the fixed-size subspace.
        let probe: Vec<u32> = (0..self.config.vocab).step_by(4).collect();
        let heads = out.heads();
        let mut x = out.embed(&probe);
        let base = mean_row_rms(&x);
        for l in 0..out.blocks.len() {
            let rel = mean_row_rms(&x) / base;
            let b = &mut out.blocks[l];
            for c in 0..ds {
                b.v.set(c, c, layout.copy_gain * rel);
                b.o.set(ds + c, c, layout.write_gain);
            }
            x = out.blocks[l].forward(&x, heads, None);
        }
        Ok(out)
    }
}

fn mean_row_rms(x: &crate::matrix::Matrix) -> f32 {
    let mut acc = 0.0f64;
    for r in x.iter_rows() {
        let ms = r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / r.len() as f64;
        acc += ms.sqrt();
    }
    (acc / x.rows() as f64) as f32
}

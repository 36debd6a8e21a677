// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small deterministic decoder-only transformer.
//!
//! Pre-norm residual blocks (RMS normalisation without gain, causal
//! multi-head attention, GELU feed-forward), no positional encoding, and an
//! output head tied to the token embedding. All six linear projections per
//! block are prunable; the embedding is not.

mod forward;
mod prune;
mod signal;

pub use forward::{BlockInputs, ForwardOutput};
pub use prune::{layer_importance, prune_model, prune_model_with_masks, PRUNABLE};
pub use signal::SignalLayout;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{normal, stream_rng};
use crate::tensorio::{Archive, ArchiveManifest, Role, TensorRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub num_layers: u32,
    pub d_model: u32,
    pub heads: u32,
    pub ffn_mult: u32,
    pub vocab: u32,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 12,
            d_model: 64,
            heads: 4,
            ffn_mult: 4,
            vocab: 512,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be positive".into()));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be positive".into()));
        }
        if self.vocab < 2 {
            return Err(Error::Config(format!("vocab must be at least 2, got {}", self.vocab)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        (self.d_model / self.heads) as usize
    }

    pub fn d_ff(&self) -> usize {
        (self.d_model * self.ffn_mult) as usize
    }
}

/// Weights of one transformer block. Matrices are `(out × in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    pub up: Matrix,
    pub down: Matrix,
}

impl Block {
    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        match name {
            "q" => Some(&self.q),
            "k" => Some(&self.k),
            "v" => Some(&self.v),
            "o" => Some(&self.o),
            "up" => Some(&self.up),
            "down" => Some(&self.down),
            _ => None,
        }
    }

    pub fn matrix_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        match name {
            "q" => Some(&mut self.q),
            "k" => Some(&mut self.k),
            "v" => Some(&mut self.v),
            "o" => Some(&mut self.o),
            "up" => Some(&mut self.up),
            "down" => Some(&mut self.down),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyModelConfig,
    /// `(vocab × d_model)`, also used as the output head.
    pub embedding: Matrix,
    pub blocks: Vec<Block>,
}

fn gaussian(rows: usize, cols: usize, scale: f32, seed: u64, stream: u64) -> Matrix {
    let mut rng = stream_rng(seed, stream);
    let data = (0..rows * cols).map(|_| normal(&mut rng) * scale).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub fn weight_name(layer: usize, matrix: &str) -> String {
    format!("w.layer{layer}.{matrix}")
}

pub const EMBEDDING_NAME: &str = "embed";

impl ToyModel {
    /// Draws every tensor from its own ChaCha8 stream: stream 0 for the
    /// embedding (unit normal), stream `1 + 6·l + m` for matrix `m` of block
    /// `l` (normal scaled by `1/sqrt(fan_in)`).
    pub fn init(cfg: &ToyModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model as usize;
        let ff = cfg.d_ff();
        let embedding = gaussian(cfg.vocab as usize, d, 1.0, cfg.seed, 0);
        let s_d = 1.0 / (d as f32).sqrt();
        let s_ff = 1.0 / (ff as f32).sqrt();
        let blocks = (0..cfg.num_layers as u64)
            .map(|l| {
                let base = 1 + 6 * l;
                Block {
                    q: gaussian(d, d, s_d, cfg.seed, base),
                    k: gaussian(d, d, s_d, cfg.seed, base + 1),
                    v: gaussian(d, d, s_d, cfg.seed, base + 2),
                    o: gaussian(d, d, s_d, cfg.seed, base + 3),
                    up: gaussian(ff, d, s_d, cfg.seed, base + 4),
                    down: gaussian(d, ff, s_ff, cfg.seed, base + 5),
                }
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            embedding,
            blocks,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model as usize
    }

    pub fn vocab(&self) -> usize {
        self.config.vocab as usize
    }

    /// Applies `f` to every tensor, embedding included.
    pub fn map_all(&self, f: impl Fn(f32) -> f32) -> ToyModel {
        ToyModel {
            config: self.config.clone(),
            embedding: self.embedding.map(&f),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    q: b.q.map(&f),
                    k: b.k.map(&f),
                    v: b.v.map(&f),
                    o: b.o.map(&f),
                    up: b.up.map(&f),
                    down: b.down.map(&f),
                })
                .collect(),
        }
    }

    pub fn to_archive(&self) -> Archive {
        let c = &self.config;
        let model_id = format!(
            "toy-transformer/layers={}/d={}/heads={}/ffn={}/vocab={}/seed={}",
            c.num_layers, c.d_model, c.heads, c.ffn_mult, c.vocab, c.seed
        );
        let mut manifest = ArchiveManifest::new(model_id, c.num_layers);
        let mut records = vec![TensorRecord::from_matrix(EMBEDDING_NAME, &self.embedding)];
        manifest.push(EMBEDDING_NAME, Role::Weight, None);
        for (l, b) in self.blocks.iter().enumerate() {
            for name in PRUNABLE {
                let tname = weight_name(l, name);
                records.push(TensorRecord::from_matrix(&tname, b.matrix(name).expect("known")));
                manifest.push(tname, Role::Weight, Some(l as u32));
            }
        }
        Archive { records, manifest }
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let cfg = parse_model_id(&archive.manifest.model_id)?;
        cfg.validate()?;
        let embedding = archive.require(EMBEDDING_NAME)?.to_matrix()?;
        let d = cfg.d_model as usize;
        let ff = cfg.d_ff();
        if embedding.shape() != (cfg.vocab as usize, d) {
            return Err(Error::Shape(format!(
                "embedding is {:?}, config expects ({}, {d})",
                embedding.shape(),
                cfg.vocab
            )));
        }
        let mut blocks = Vec::with_capacity(cfg.num_layers as usize);
        for l in 0..cfg.num_layers as usize {
            let get = |name: &str, shape: (usize, usize)| -> Result<Matrix> {
                let m = archive.require(&weight_name(l, name))?.to_matrix()?;
                if m.shape() != shape {
                    return Err(Error::Shape(format!(
                        "{} is {:?}, expected {shape:?}",
                        weight_name(l, name),
                        m.shape()
                    )));
                }
                Ok(m)
            };
            blocks.push(Block {
                q: get("q", (d, d))?,
                k: get("k", (d, d))?,
                v: get("v", (d, d))?,
                o: get("o", (d, d))?,
                up: get("up", (ff, d))?,
                down: get("down", (d, ff))?,
            });
        }
        Ok(Self {
            config: cfg,
            embedding,
            blocks,
        })
    }
}

fn parse_model_id(id: &str) -> Result<ToyModelConfig> {
    let mut parts = id.split('/');
    if parts.next() != Some("toy-transformer") {
        return Err(Error::Config(format!("`{id}` is not a toy transformer archive")));
    }
    let mut cfg = ToyModelConfig::default();
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad model id component `{kv}`")))?;
        let bad = |_| Error::Config(format!("bad value in `{kv}`"));
        match k {
            "layers" => cfg.num_layers = v.parse().map_err(bad)?,
            "d" => cfg.d_model = v.parse().map_err(bad)?,
            "heads" => cfg.heads = v.parse().map_err(bad)?,
            "ffn" => cfg.ffn_mult = v.parse().map_err(bad)?,
            "vocab" => cfg.vocab = v.parse().map_err(bad)?,
            "seed" => cfg.seed = v.parse().map_err(bad)?,
            _ => return Err(Error::Config(format!("unknown model id key `{k}`"))),
        }
    }
    Ok(cfg)
}

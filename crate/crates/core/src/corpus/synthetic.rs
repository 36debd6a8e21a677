// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic true/false statements for the toy model.
//!
//! A statement is `[marker × gap] [not]? [filler × filler_len]`. The markers
//! come from the pool of the statement's truth value, the optional negation
//! token marks polarity and the fillers come from the topic's pool; the last
//! filler is the read-out position. Each base statement is emitted twice:
//! affirmatively and negated, the latter with the truth value flipped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{shuffle, stream_rng};
use crate::separability::{ActivationDataset, Polarity};
use crate::toymodel::{SignalLayout, ToyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub n_per_topic: usize,
    pub d_signal: usize,
    /// Number of labelled marker tokens prefixed to each statement.
    pub gap: u32,
    pub filler_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            topics: 4,
            n_per_topic: 48,
            d_signal: 8,
            gap: 2,
            filler_len: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStatement {
    pub id: String,
    pub topic: String,
    pub tokens: Vec<u32>,
    pub label: bool,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub statements: Vec<SyntheticStatement>,
    pub layout: SignalLayout,
}

impl SyntheticCorpus {
    pub fn labels(&self) -> Vec<bool> {
        self.statements.iter().map(|s| s.label).collect()
    }

    pub fn token_sequences(&self) -> Vec<Vec<u32>> {
        self.statements.iter().map(|s| s.tokens.clone()).collect()
    }

    /// Final-token residual activations of every statement at every layer.
    pub fn activations(&self, model: &ToyModel) -> Result<ActivationDataset> {
        let per_statement = self
            .statements
            .par_iter()
            .map(|s| model.final_activations(&s.tokens))
            .collect::<Result<Vec<_>>>()?;
        let layers = (0..model.num_layers())
            .map(|l| {
                let rows: Vec<&[f32]> = per_statement.iter().map(|a| a[l].as_slice()).collect();
                Matrix::from_rows(&rows)
            })
            .collect::<Result<Vec<_>>>()?;
        ActivationDataset::new(
            layers,
            self.statements.iter().map(|s| s.id.clone()).collect(),
            self.labels(),
            self.statements.iter().map(|s| s.topic.clone()).collect(),
            self.statements.iter().map(|s| s.polarity).collect(),
        )
    }

    /// All statements separated by the end token, usable as a calibration
    /// source.
    pub fn token_stream(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for s in &self.statements {
            out.extend_from_slice(&s.tokens);
            out.push(self.layout.end_token);
        }
        out
    }
}

pub fn topic_name(t: usize) -> String {
    format!("topic{t}")
}

/// Generates the corpus for a model with the given vocabulary and width.
pub fn gen_synthetic_corpus(cfg: &SyntheticConfig, vocab: u32, d_model: u32) -> Result<SyntheticCorpus> {
    if cfg.gap == 0 {
        return Err(Error::Config("gap must be positive".into()));
    }
    if cfg.n_per_topic < 4 {
        return Err(Error::TooSmall(format!(
            "{} statements per topic; need at least 4",
            cfg.n_per_topic
        )));
    }
    if cfg.filler_len == 0 {
        return Err(Error::Config("filler_len must be positive".into()));
    }
    let layout = SignalLayout::new(vocab, d_model, cfg.topics, cfg.d_signal)?;
    let mut statements = Vec::with_capacity(cfg.topics * cfg.n_per_topic * 2);
    for t in 0..cfg.topics {
        let mut rng = stream_rng(cfg.seed, 1000 + t as u64);
        let topic = topic_name(t);
        let pool = &layout.topic_pools[t];
        // balanced labels, shuffled
        let mut labels: Vec<bool> = (0..cfg.n_per_topic).map(|i| i % 2 == 0).collect();
        shuffle(&mut rng, &mut labels);
        for (i, &label) in labels.iter().enumerate() {
            use rand::Rng;
            let fillers: Vec<u32> = (0..cfg.filler_len)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect();
            let marker_draws: Vec<usize> = (0..cfg.gap)
                .map(|_| rng.random_range(0..SignalLayout::MARKERS_PER_CLASS))
                .collect();
            for polarity in [Polarity::Affirmative, Polarity::Negated] {
                let truth = match polarity {
                    Polarity::Affirmative => label,
                    Polarity::Negated => !label,
                };
                let markers = layout.markers(truth);
                let mut tokens: Vec<u32> = marker_draws.iter().map(|&k| markers[k]).collect();
                if polarity == Polarity::Negated {
                    tokens.push(layout.not_token);
                }
                tokens.extend_from_slice(&fillers);
                statements.push(SyntheticStatement {
                    id: format!("{topic}-{i:04}"),
                    topic: topic.clone(),
                    tokens,
                    label: truth,
                    polarity,
                });
            }
        }
    }
    Ok(SyntheticCorpus { statements, layout })
}

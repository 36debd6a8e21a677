// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hold-one-topic-out evaluation.
//!
//! For every topic and every seed, the remaining topics are subsampled to an
//! equal number of statements per (topic, class), a probe is trained on that
//! pool (both polarities), and accuracy is measured on the whole held-out
//! topic (both polarities). Spread is the population standard deviation over
//! seeds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accuracy, predict, train_ccs, train_lr, train_mm, train_ttpd};
use super::{CcsConfig, ContrastPair, LrConfig, ProbeKind, ProbeModel, TtpdConfig};
use crate::error::{Error, Result};
use crate::rng::{sample_indices, stream_rng};
use crate::separability::{ActivationDataset, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutConfig {
    pub seeds: u32,
    /// Base seed; run `k` uses `seed + k`.
    pub seed: u64,
    /// Label recorded in the `method` column (e.g. the allocation method).
    pub method: String,
    pub lr: LrConfig,
    pub ccs: CcsConfig,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            seed: 0,
            method: "dense".into(),
            lr: LrConfig::default(),
            ccs: CcsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub probe: ProbeKind,
    pub topic: String,
    pub layer: u32,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const CSV_HEADER: [&str; 6] = ["method", "probe", "topic", "layer", "seed", "accuracy"];

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl EvalReport {
    /// Held-out topics in first-appearance order.
    pub fn topics(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.topic) {
                out.push(r.topic.clone());
            }
        }
        out
    }

    /// Mean and spread over seeds for every held-out topic.
    pub fn summary(&self) -> Vec<TopicSummary> {
        self.topics()
            .into_iter()
            .map(|t| {
                let accs: Vec<f64> = self.rows.iter().filter(|r| r.topic == t).map(|r| r.accuracy).collect();
                let (mean, std) = mean_std(&accs);
                TopicSummary { topic: t, mean, std }
            })
            .collect()
    }

    /// Unweighted mean over topics of each topic's mean accuracy.
    pub fn mean_accuracy(&self) -> f64 {
        let s = self.summary();
        mean_std(&s.iter().map(|t| t.mean).collect::<Vec<_>>()).0
    }

    /// Spread over seeds of the per-seed topic-averaged accuracy.
    pub fn pooled_std(&self) -> f64 {
        let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            by_seed.entry(r.seed).or_default().push(r.accuracy);
        }
        let per_seed: Vec<f64> = by_seed.values().map(|v| mean_std(v).0).collect();
        mean_std(&per_seed).1
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wr.write_record([
                r.method.clone(),
                r.probe.to_string(),
                r.topic.clone(),
                r.layer.to_string(),
                r.seed.to_string(),
                format!("{:.6}", r.accuracy),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Seeded equal-count subsample: `per_group` rows from every group.
fn balanced_subsample(groups: &[Vec<usize>], per_group: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, stream);
    let mut out = Vec::new();
    for g in groups {
        let pick = sample_indices(&mut rng, g.len(), per_group);
        out.extend(pick.into_iter().map(|i| g[i]));
    }
    out.sort_unstable();
    out
}

fn train_kind(
    kind: ProbeKind,
    ds: &ActivationDataset,
    layer: usize,
    train: &[usize],
    cfg: &HoldoutConfig,
    seed: u64,
) -> Result<ProbeModel> {
    let acts = ds.layers[layer].select_rows(train);
    let labels: Vec<bool> = train.iter().map(|&i| ds.labels[i]).collect();
    match kind {
        ProbeKind::Lr => train_lr(&acts, &labels, &LrConfig { seed, ..cfg.lr }),
        ProbeKind::Mm => train_mm(&acts, &labels),
        ProbeKind::Ttpd => {
            let pol: Vec<Polarity> = train.iter().map(|&i| ds.polarity[i]).collect();
            let topics: Vec<String> = train.iter().map(|&i| ds.topics[i].clone()).collect();
            train_ttpd(&acts, &labels, &pol, &topics, &TtpdConfig { lr: LrConfig { seed, ..cfg.lr } })
        }
        ProbeKind::Ccs => unreachable!("pairs are assembled separately"),
    }
}

fn contrast_pairs(ds: &ActivationDataset, layer: usize, topic: &str) -> Vec<ContrastPair> {
    let mut by_id: BTreeMap<&str, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for i in 0..ds.len() {
        if ds.topics[i] != topic {
            continue;
        }
        let e = by_id.entry(ds.ids[i].as_str()).or_default();
        match ds.polarity[i] {
            Polarity::Affirmative => e.0 = Some(i),
            Polarity::Negated => e.1 = Some(i),
        }
    }
    let m = &ds.layers[layer];
    by_id
        .into_iter()
        .filter_map(|(id, (a, n))| {
            let (a, n) = (a?, n?);
            Some(ContrastPair {
                plus: m.row(a).to_vec(),
                minus: m.row(n).to_vec(),
                id: id.to_string(),
                topic: topic.to_string(),
                label: Some(ds.labels[a]),
            })
        })
        .collect()
}

fn run_fold(
    ds: &ActivationDataset,
    kind: ProbeKind,
    layer: usize,
    topics: &[String],
    held: usize,
    k: u32,
    cfg: &HoldoutConfig,
) -> Result<EvalRow> {
    let seed = cfg.seed.wrapping_add(k as u64);
    let train_topics: Vec<&String> = topics.iter().enumerate().filter(|(i, _)| *i != held).map(|(_, t)| t).collect();
    let model = if kind == ProbeKind::Ccs {
        let per_topic: Vec<Vec<ContrastPair>> = train_topics.iter().map(|t| contrast_pairs(ds, layer, t)).collect();
        let m = per_topic.iter().map(Vec::len).min().unwrap_or(0);
        let mut rng = stream_rng(seed, held as u64);
        let mut pairs = Vec::new();
        for p in &per_topic {
            let mut pick = sample_indices(&mut rng, p.len(), m);
            pick.sort_unstable();
            pairs.extend(pick.into_iter().map(|i| p[i].clone()));
        }
        train_ccs(&pairs, &CcsConfig { seed, ..cfg.ccs })?
    } else {
        let mut groups = Vec::new();
        for t in &train_topics {
            for class in [true, false] {
                groups.push((0..ds.len()).filter(|&i| &ds.topics[i] == *t && ds.labels[i] == class).collect::<Vec<_>>());
            }
        }
        let m = groups.iter().map(Vec::len).min().unwrap_or(0);
        if m == 0 {
            return Err(Error::SingleClass);
        }
        let train = balanced_subsample(&groups, m, seed, held as u64);
        train_kind(kind, ds, layer, &train, cfg, seed)?
    };
    let test: Vec<usize> = (0..ds.len()).filter(|&i| ds.topics[i] == topics[held]).collect();
    let labels: Vec<bool> = test.iter().map(|&i| ds.labels[i]).collect();
    let (_, pred) = predict(&model, &ds.layers[layer].select_rows(&test))?;
    Ok(EvalRow {
        method: cfg.method.clone(),
        probe: kind,
        topic: topics[held].clone(),
        layer: layer as u32,
        seed,
        accuracy: accuracy(&pred, &labels),
    })
}

/// Runs the hold-one-topic-out protocol for one probe kind at one layer.
pub fn holdout_eval(ds: &ActivationDataset, kind: ProbeKind, layer: u32, cfg: &HoldoutConfig) -> Result<EvalReport> {
    ds.validate()?;
    let layer = layer as usize;
    if layer >= ds.num_layers() {
        return Err(Error::Layer {
            layer,
            available: ds.num_layers(),
        });
    }
    let topics = ds.topic_names();
    if topics.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "hold-out evaluation needs at least 2 topics, got {}",
            topics.len()
        )));
    }
    if cfg.seeds == 0 {
        return Err(Error::Config("seeds must be positive".into()));
    }
    let folds: Vec<(usize, u32)> = (0..topics.len()).flat_map(|h| (0..cfg.seeds).map(move |k| (h, k))).collect();
    let rows = folds
        .par_iter()
        .map(|&(h, k)| run_fold(ds, kind, layer, &topics, h, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

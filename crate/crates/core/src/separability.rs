// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise separability of true and false statement activations.
//!
//! For every activation dimension the between-class sum of squares is divided
//! by the within-class sum of squares (raw ANOVA sums, no degrees-of-freedom
//! normalisation). A layer's separability is the mean ratio over dimensions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor added to the within-class sum so constant dimensions stay finite.
pub const WITHIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Affirmative,
    Negated,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Affirmative => "affirmative",
            Polarity::Negated => "negated",
        }
    }
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affirmative" | "aff" => Ok(Polarity::Affirmative),
            "negated" | "neg" => Ok(Polarity::Negated),
            other => Err(Error::Schema(format!("unknown polarity `{other}`"))),
        }
    }
}

/// Final-token activations of labelled statements at every captured layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub layers: Vec<Matrix>,
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    pub topics: Vec<String>,
    pub polarity: Vec<Polarity>,
}

impl ActivationDataset {
    pub fn new(
        layers: Vec<Matrix>,
        ids: Vec<String>,
        labels: Vec<bool>,
        topics: Vec<String>,
        polarity: Vec<Polarity>,
    ) -> Result<Self> {
        let ds = Self {
            layers,
            ids,
            labels,
            topics,
            polarity,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.ids.len() != n || self.topics.len() != n || self.polarity.len() != n {
            return Err(Error::Shape(format!(
                "metadata lengths differ: {} ids, {} labels, {} topics, {} polarities",
                self.ids.len(),
                n,
                self.topics.len(),
                self.polarity.len()
            )));
        }
        let d = self.layers.first().map_or(0, Matrix::cols);
        for (l, m) in self.layers.iter().enumerate() {
            if m.rows() != n {
                return Err(Error::Shape(format!(
                    "layer {l} has {} rows but there are {n} statements",
                    m.rows()
                )));
            }
            if m.cols() != d {
                return Err(Error::Shape(format!(
                    "layer {l} has width {} but layer 0 has {d}",
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.layers.first().map_or(0, Matrix::cols)
    }

    pub fn layer(&self, l: usize) -> Result<&Matrix> {
        self.layers.get(l).ok_or(Error::Layer {
            layer: l,
            available: self.layers.len(),
        })
    }

    /// Distinct topics in sorted order.
    pub fn topic_names(&self) -> Vec<String> {
        self.topics
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Subset of rows, preserving the given order.
    pub fn select(&self, idx: &[usize]) -> ActivationDataset {
        ActivationDataset {
            layers: self.layers.iter().map(|m| m.select_rows(idx)).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            topics: idx.iter().map(|&i| self.topics[i].clone()).collect(),
            polarity: idx.iter().map(|&i| self.polarity[i]).collect(),
        }
    }

    /// Rows belonging to one topic.
    pub fn topic(&self, topic: &str) -> ActivationDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.topics[i] == topic).collect();
        self.select(&idx)
    }

    /// Splits into one dataset per topic, in sorted topic order.
    pub fn split_by_topic(&self) -> Vec<(String, ActivationDataset)> {
        self.topic_names()
            .into_iter()
            .map(|t| {
                let ds = self.topic(&t);
                (t, ds)
            })
            .collect()
    }

    /// Concatenates datasets with matching layer count and width.
    pub fn concat(parts: &[&ActivationDataset]) -> Result<ActivationDataset> {
        let Some(first) = parts.first() else {
            return Err(Error::EmptyInput("no datasets to concatenate".into()));
        };
        let mut layers = Vec::with_capacity(first.num_layers());
        for l in 0..first.num_layers() {
            let mats = parts
                .iter()
                .map(|p| p.layer(l))
                .collect::<Result<Vec<_>>>()?;
            layers.push(Matrix::vstack(&mats)?);
        }
        let mut out = ActivationDataset {
            layers,
            ids: Vec::new(),
            labels: Vec::new(),
            topics: Vec::new(),
            polarity: Vec::new(),
        };
        for p in parts {
            if p.num_layers() != first.num_layers() {
                return Err(Error::Shape("datasets have different layer counts".into()));
            }
            out.ids.extend_from_slice(&p.ids);
            out.labels.extend_from_slice(&p.labels);
            out.topics.extend_from_slice(&p.topics);
            out.polarity.extend_from_slice(&p.polarity);
        }
        out.validate()?;
        Ok(out)
    }
}

/// Which statements feed the separability measurement.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsdScope {
    /// Every topic and both polarities pooled.
    #[default]
    Pooled,
    /// A single topic dataset.
    Topic(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityProfile {
    pub lsd: Vec<f64>,
    pub sep_pd: Vec<f64>,
    /// Layer with the highest separability (first one on ties).
    pub best_layer: usize,
}

impl SeparabilityProfile {
    /// Normalises raw per-layer separabilities into a distribution.
    ///
    /// All-zero input yields an all-zero distribution.
    pub fn from_lsd(lsd: Vec<f64>) -> Result<Self> {
        if lsd.is_empty() {
            return Err(Error::EmptyInput("no layers".into()));
        }
        if lsd.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Shape("separability values must be finite and non-negative".into()));
        }
        let total: f64 = lsd.iter().sum();
        let sep_pd = if total > 0.0 {
            lsd.iter().map(|v| v / total).collect()
        } else {
            vec![0.0; lsd.len()]
        };
        let best_layer = argmax(&lsd);
        Ok(Self {
            lsd,
            sep_pd,
            best_layer,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.lsd.len()
    }

    pub fn mean_lsd(&self) -> f64 {
        self.lsd.iter().sum::<f64>() / self.lsd.len() as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-dimension between/within class variance ratio.
pub fn variance_ratio(acts_true: &Matrix, acts_false: &Matrix) -> Result<Vec<f64>> {
    if acts_true.rows() < 2 || acts_false.rows() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "each class needs at least 2 rows (true: {}, false: {})",
            acts_true.rows(),
            acts_false.rows()
        )));
    }
    if acts_true.cols() != acts_false.cols() {
        return Err(Error::Shape(format!(
            "class widths differ: {} vs {}",
            acts_true.cols(),
            acts_false.cols()
        )));
    }
    let d = acts_true.cols();
    let nt = acts_true.rows() as f64;
    let nf = acts_false.rows() as f64;
    let mu_t = column_means(acts_true);
    let mu_f = column_means(acts_false);
    let ss_t = centered_sq_sums(acts_true, &mu_t);
    let ss_f = centered_sq_sums(acts_false, &mu_f);
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mu = (nt * mu_t[j] + nf * mu_f[j]) / (nt + nf);
        let between = nt * (mu_t[j] - mu).powi(2) + nf * (mu_f[j] - mu).powi(2);
        let within = ss_t[j] + ss_f[j];
        out.push(between / (within + WITHIN_EPS));
    }
    Ok(out)
}

pub(crate) fn column_means(m: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.cols()];
    for row in m.iter_rows() {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += f64::from(x);
        }
    }
    let n = m.rows().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn centered_sq_sums(m: &Matrix, mean: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.cols()];
    for row in m.iter_rows() {
        for ((a, &x), &mu) in acc.iter_mut().zip(row).zip(mean) {
            let c = f64::from(x) - mu;
            *a += c * c;
        }
    }
    acc
}

/// Mean variance ratio of one layer.
pub fn layer_separability(acts: &Matrix, labels: &[bool]) -> Result<f64> {
    if acts.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            acts.rows(),
            labels.len()
        )));
    }
    let t: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let f: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let ratios = variance_ratio(&acts.select_rows(&t), &acts.select_rows(&f))?;
    if ratios.is_empty() {
        return Err(Error::EmptyInput("activations have zero width".into()));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Separability of every layer, normalised distribution, and the best layer.
pub fn lsd_profile(ds: &ActivationDataset) -> Result<SeparabilityProfile> {
    lsd_profile_scoped(ds, &LsdScope::Pooled)
}

pub fn lsd_profile_scoped(ds: &ActivationDataset, scope: &LsdScope) -> Result<SeparabilityProfile> {
    ds.validate()?;
    let scoped;
    let ds = match scope {
        LsdScope::Pooled => ds,
        LsdScope::Topic(t) => {
            scoped = ds.topic(t);
            if scoped.is_empty() {
                return Err(Error::EmptyInput(format!("no statements for topic `{t}`")));
            }
            &scoped
        }
    };
    if ds.num_layers() == 0 {
        return Err(Error::EmptyInput("dataset has no layers".into()));
    }
    let lsd = ds
        .layers
        .iter()
        .map(|m| layer_separability(m, &ds.labels))
        .collect::<Result<Vec<_>>>()?;
    SeparabilityProfile::from_lsd(lsd)
}

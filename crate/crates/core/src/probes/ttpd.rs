// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-direction probe: a general truth direction `t_G` and a polarity
//! direction `t_P`, both learned on topic-centered activations, combined by a
//! two-feature logistic head.
//!
//! The head is fit on projections of the uncentered activations, which is
//! what [`super::predict`] sees on statements from unseen topics.

use serde::{Deserialize, Serialize};

use super::lr::LrConfig;
use super::{accuracy, check_labels, norm, predict, train_lr, ProbeKind, ProbeModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::separability::{column_means, Polarity};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TtpdConfig {
    pub lr: LrConfig,
}

/// Subtracts each topic's mean activation from its rows.
fn center_by_topic(acts: &Matrix, topics: &[String]) -> Matrix {
    let mut out = acts.clone();
    let mut names: Vec<&String> = topics.iter().collect();
    names.sort();
    names.dedup();
    for name in names {
        let idx: Vec<usize> = (0..topics.len()).filter(|&i| &topics[i] == name).collect();
        let mean = column_means(&acts.select_rows(&idx));
        for &i in &idx {
            for (x, m) in out.row_mut(i).iter_mut().zip(&mean) {
                *x = (*x as f64 - m) as f32;
            }
        }
    }
    out
}

/// Unit direction in raw activation space from an LR probe fitted on
/// standardized features.
fn raw_direction(model: &ProbeModel) -> Result<Vec<f64>> {
    let v: Vec<f64> = model.directions[0].iter().zip(&model.std).map(|(w, s)| w / s).collect();
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn project(acts: &Matrix, dirs: &[&[f64]]) -> Result<Matrix> {
    let rows: Vec<Vec<f32>> = acts
        .iter_rows()
        .map(|r| {
            dirs.iter()
                .map(|d| r.iter().zip(d.iter()).map(|(&a, &b)| a as f64 * b).sum::<f64>() as f32)
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

pub fn train_ttpd(
    acts: &Matrix,
    labels: &[bool],
    polarity: &[Polarity],
    topics: &[String],
    cfg: &TtpdConfig,
) -> Result<ProbeModel> {
    check_labels(acts, labels, 4)?;
    if polarity.len() != labels.len() || topics.len() != labels.len() {
        return Err(Error::Shape("labels, polarity and topics must align with rows".into()));
    }
    let aff: Vec<bool> = polarity.iter().map(|p| *p == Polarity::Affirmative).collect();
    if !aff.iter().any(|&a| a) || aff.iter().all(|&a| a) {
        return Err(Error::InsufficientPolarity);
    }
    let centered = center_by_topic(acts, topics);
    let t_g = raw_direction(&train_lr(&centered, labels, &cfg.lr)?)?;
    let t_p = raw_direction(&train_lr(&centered, &aff, &cfg.lr)?)?;

    let feats = project(acts, &[&t_g, &t_p])?;
    let head = train_lr(&feats, labels, &cfg.lr)?;
    // fold the head's standardization into raw-projection weights
    let mut weights = [0.0f64; 2];
    let mut bias = head.bias;
    for (k, w) in weights.iter_mut().enumerate() {
        let wz = head.head[0] * head.directions[0][k];
        *w = wz / head.std[k];
        bias -= wz * head.mean[k] / head.std[k];
    }
    let d = acts.cols();
    let mut model = ProbeModel {
        kind: ProbeKind::Ttpd,
        mean: vec![0.0; d],
        std: vec![1.0; d],
        directions: vec![t_g, t_p],
        head: weights.to_vec(),
        bias,
        train_accuracy: 0.0,
    };
    model.train_accuracy = accuracy(&predict(&model, acts)?.1, labels);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(offsets: [f32; 2]) -> (Matrix, Vec<bool>, Vec<Polarity>, Vec<String>) {
        let mut rows = Vec::new();
        let (mut l, mut p, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for topic in 0..2 {
            for i in 0..16 {
                let truth = i % 2 == 0;
                let neg = (i / 2) % 2 == 0;
                let tau = if truth { 1.0 } else { -1.0 };
                let pol = if neg { -1.0 } else { 1.0 };
                let jitter = (i as f32 * 0.37).sin() * 0.1;
                rows.push([tau * 2.0 + offsets[topic], pol * 2.0 + jitter, tau * pol * 3.0]);
                l.push(truth);
                p.push(if neg { Polarity::Negated } else { Polarity::Affirmative });
                t.push(format!("t{topic}"));
            }
        }
        (Matrix::from_rows(&rows).unwrap(), l, p, t)
    }

    #[test]
    fn fits_fixture() {
        let (a, l, p, t) = fixture([0.0, 0.0]);
        let m = train_ttpd(&a, &l, &p, &t, &TtpdConfig::default()).unwrap();
        m.validate().unwrap();
        assert_eq!(m.train_accuracy, 1.0);
    }

    #[test]
    fn directions_ignore_topic_offsets() {
        let (a, l, p, t) = fixture([0.0, 0.0]);
        let (b, ..) = fixture([5.0, -3.0]);
        let m1 = train_ttpd(&a, &l, &p, &t, &TtpdConfig::default()).unwrap();
        let m2 = train_ttpd(&b, &l, &p, &t, &TtpdConfig::default()).unwrap();
        for (x, y) in m1.directions.iter().flatten().zip(m2.directions.iter().flatten()) {
            assert!((x - y).abs() < 1e-5, "{x} {y}");
        }
    }

    #[test]
    fn needs_both_polarities() {
        let (a, l, _, t) = fixture([0.0, 0.0]);
        let p = vec![Polarity::Affirmative; l.len()];
        assert!(matches!(
            train_ttpd(&a, &l, &p, &t, &TtpdConfig::default()),
            Err(Error::InsufficientPolarity)
        ));
    }
}

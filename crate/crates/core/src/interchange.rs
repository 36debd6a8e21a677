// SPDX-License-Identifier: MIT OR Apache-2.0

//! Archive layouts shared with the exporter.
//!
//! * weights: `w.layer{l}.{matrix}`, role `weight`;
//! * input column norms of a weight: `norms.layer{l}.{matrix}`, role
//!   `col_norms`, one value per input feature;
//! * activations: `act.layer{l}`, role `activations`, one row per statement
//!   in the order of the labels sidecar (JSONL `{id, topic, label,
//!   polarity}`).
//!
//! Layer indices are 0-based block indices; an activation row for layer `l`
//! is the residual stream after block `l`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{wanda_scores, ImportanceMatrix};
use crate::separability::{ActivationDataset, Polarity};
use crate::tensorio::{Archive, ArchiveManifest, Role, TensorRecord};

pub fn activation_name(layer: u32) -> String {
    format!("act.layer{layer}")
}

pub fn norms_name(layer: u32, matrix: &str) -> String {
    format!("norms.layer{layer}.{matrix}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub topic: String,
    pub label: bool,
    pub polarity: Polarity,
}

pub fn labels_of(ds: &ActivationDataset) -> Vec<LabelRow> {
    (0..ds.len())
        .map(|i| LabelRow {
            id: ds.ids[i].clone(),
            topic: ds.topics[i].clone(),
            label: ds.labels[i],
            polarity: ds.polarity[i],
        })
        .collect()
}

pub fn labels_to_jsonl(rows: &[LabelRow]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Schema(format!("labels row {}: {e}", i + 1))))
        .collect()
}

/// Activations whose dataset layer `k` is model layer `layers[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredActivations {
    pub layers: Vec<u32>,
    pub dataset: ActivationDataset,
}

impl LayeredActivations {
    /// Position of model layer `layer` within the dataset.
    pub fn position(&self, layer: u32) -> Result<usize> {
        self.layers.iter().position(|&l| l == layer).ok_or(Error::Layer {
            layer: layer as usize,
            available: self.layers.len(),
        })
    }

    pub fn to_archive(&self, model_id: &str, num_layers: u32) -> Archive {
        let mut manifest = ArchiveManifest::new(model_id, num_layers);
        let mut records = Vec::with_capacity(self.layers.len());
        for (&l, m) in self.layers.iter().zip(&self.dataset.layers) {
            let name = activation_name(l);
            records.push(TensorRecord::from_matrix(&name, m));
            manifest.push(name, Role::Activations, Some(l));
        }
        Archive { records, manifest }
    }

    /// Reads every `activations` entry, ordered by layer index.
    pub fn from_archive(archive: &Archive, labels: &[LabelRow]) -> Result<Self> {
        let mut by_layer = BTreeMap::new();
        for e in archive.manifest.entries.iter().filter(|e| e.role == Role::Activations) {
            let l = e
                .layer_index
                .ok_or_else(|| Error::Manifest(format!("activation tensor `{}` has no layer index", e.tensor_name)))?;
            if by_layer.insert(l, archive.require(&e.tensor_name)?.to_matrix()?).is_some() {
                return Err(Error::Manifest(format!("two activation tensors for layer {l}")));
            }
        }
        if by_layer.is_empty() {
            return Err(Error::Manifest("archive holds no activations".into()));
        }
        let (layers, mats): (Vec<u32>, Vec<_>) = by_layer.into_iter().unzip();
        let dataset = ActivationDataset::new(
            mats,
            labels.iter().map(|r| r.id.clone()).collect(),
            labels.iter().map(|r| r.label).collect(),
            labels.iter().map(|r| r.topic.clone()).collect(),
            labels.iter().map(|r| r.polarity).collect(),
        )?;
        Ok(Self { layers, dataset })
    }
}

/// Wanda scores for every weight that has a column-norm partner, grouped by
/// layer index.
pub fn archive_importance(archive: &Archive) -> Result<BTreeMap<u32, Vec<(String, ImportanceMatrix)>>> {
    let mut out: BTreeMap<u32, Vec<(String, ImportanceMatrix)>> = BTreeMap::new();
    for e in archive.manifest.entries.iter().filter(|e| e.role == Role::Weight) {
        let Some(l) = e.layer_index else { continue };
        let Some(matrix) = e.tensor_name.rsplit('.').next() else { continue };
        let nname = norms_name(l, matrix);
        let Some(norms) = archive.get(&nname) else { continue };
        let w = archive.require(&e.tensor_name)?.to_matrix()?;
        let s = wanda_scores(&w, &norms.data, l)?;
        out.entry(l).or_default().push((e.tensor_name.clone(), s));
    }
    if out.is_empty() {
        return Err(Error::Manifest("no weight has a matching `norms.layer{l}.{matrix}` record".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn tiny() -> LayeredActivations {
        let m = Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        let ds = ActivationDataset::new(
            vec![m.clone(), m],
            vec!["a".into(), "b".into()],
            vec![true, false],
            vec!["t".into(), "t".into()],
            vec![Polarity::Affirmative, Polarity::Negated],
        )
        .unwrap();
        LayeredActivations {
            layers: vec![3, 12],
            dataset: ds,
        }
    }

    #[test]
    fn archive_round_trip() {
        let a = tiny();
        let ar = a.to_archive("fixture", 16);
        let back = Archive::from_bytes(&ar.to_bytes().unwrap()).unwrap();
        let b = LayeredActivations::from_archive(&back, &labels_of(&a.dataset)).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.position(12).unwrap(), 1);
        assert!(matches!(b.position(5), Err(Error::Layer { .. })));
    }

    #[test]
    fn label_count_must_match() {
        let a = tiny();
        let ar = a.to_archive("fixture", 16);
        let mut labels = labels_of(&a.dataset);
        labels.pop();
        assert!(matches!(LayeredActivations::from_archive(&ar, &labels), Err(Error::Shape(_))));
    }

    #[test]
    fn importance_needs_norms() {
        let w = Matrix::from_rows(&[[1.0f32, -2.0]]).unwrap();
        let mut man = ArchiveManifest::new("m", 1);
        man.push("w.layer0.q", Role::Weight, Some(0));
        let mut ar = Archive {
            records: vec![TensorRecord::from_matrix("w.layer0.q", &w)],
            manifest: man,
        };
        assert!(archive_importance(&ar).is_err());
        ar.records.push(TensorRecord::from_vector("norms.layer0.q", &[2.0, 0.5]));
        ar.manifest.push("norms.layer0.q", Role::ColNorms, Some(0));
        let s = archive_importance(&ar).unwrap();
        assert_eq!(s[&0][0].1.scores.row(0), &[2.0, 1.0]);
    }
}

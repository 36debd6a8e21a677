// SPDX-License-Identifier: MIT OR Apache-2.0

//! Calibration-driven pruning of the toy model.
//!
//! Layers are processed in order. Calibration sequences are pushed through
//! the already-pruned prefix of the network, the inputs of every projection
//! of the current block are captured, and each projection is scored and
//! masked at its layer's sparsity. The block's pruned output then becomes the
//! next block's input.

use rayon::prelude::*;

use super::{BlockInputs, ToyModel};
use crate::allocation::SparsityProfile;
use crate::error::{Error, Result};
use crate::importance::{apply_mask, build_mask, wanda_scores, ImportanceMatrix, MaskGroup, NormAccumulator, PruneMask};
use crate::matrix::Matrix;

/// Prunable projections of each block, in storage order.
pub const PRUNABLE: [&str; 6] = ["q", "k", "v", "o", "up", "down"];

fn check_calib(model: &ToyModel, calib: &[Vec<u32>]) -> Result<()> {
    if calib.is_empty() || calib.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("calibration set is empty".into()));
    }
    let vocab = model.config.vocab;
    for s in calib {
        if let Some(&bad) = s.iter().find(|&&t| t >= vocab) {
            return Err(Error::Vocab { token: bad, vocab });
        }
    }
    Ok(())
}

/// Runs block `l` over every residual stream, returning the outputs and the
/// column norms of each projection's input over all calibration tokens.
fn run_block(model: &ToyModel, l: usize, residuals: &[Matrix]) -> Result<(Vec<Matrix>, [Vec<f32>; 6])> {
    let block = &model.blocks[l];
    let heads = model.heads();
    let outputs: Vec<(Matrix, BlockInputs)> = residuals
        .par_iter()
        .map(|x| {
            let mut cap = None;
            let y = block.forward(x, heads, Some(&mut cap));
            (y, cap.expect("captured"))
        })
        .collect();
    let d = model.d_model();
    let ff = model.config.d_ff();
    let mut attn = NormAccumulator::new(d);
    let mut ctx = NormAccumulator::new(d);
    let mut mlp = NormAccumulator::new(d);
    let mut hid = NormAccumulator::new(ff);
    for (_, cap) in &outputs {
        attn.add(&cap.attn_in)?;
        ctx.add(&cap.context)?;
        mlp.add(&cap.mlp_in)?;
        hid.add(&cap.hidden)?;
    }
    let attn = attn.finish()?;
    let norms = [
        attn.clone(),
        attn.clone(),
        attn,
        ctx.finish()?,
        mlp.finish()?,
        hid.finish()?,
    ];
    Ok((outputs.into_iter().map(|(y, _)| y).collect(), norms))
}

/// Importance scores of every projection of every layer on the dense model.
pub fn layer_importance(model: &ToyModel, calib: &[Vec<u32>]) -> Result<Vec<Vec<ImportanceMatrix>>> {
    check_calib(model, calib)?;
    let mut residuals: Vec<Matrix> = calib
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| model.embed(s))
        .collect();
    let mut out = Vec::with_capacity(model.num_layers());
    for l in 0..model.num_layers() {
        let (next, norms) = run_block(model, l, &residuals)?;
        let block = &model.blocks[l];
        let scores = PRUNABLE
            .iter()
            .zip(&norms)
            .map(|(name, n)| wanda_scores(block.matrix(name).expect("known"), n, l as u32))
            .collect::<Result<Vec<_>>>()?;
        out.push(scores);
        residuals = next;
    }
    Ok(out)
}

/// Prunes every projection of layer `l` at `profile.sparsity[l]`.
pub fn prune_model(model: &ToyModel, profile: &SparsityProfile, calib: &[Vec<u32>]) -> Result<ToyModel> {
    prune_model_with_masks(model, profile, calib, MaskGroup::PerRow).map(|(m, _)| m)
}

/// Like [`prune_model`], also returning the masks (per layer, in
/// [`PRUNABLE`] order).
pub fn prune_model_with_masks(
    model: &ToyModel,
    profile: &SparsityProfile,
    calib: &[Vec<u32>],
    group: MaskGroup,
) -> Result<(ToyModel, Vec<Vec<PruneMask>>)> {
    if profile.num_layers() != model.num_layers() {
        return Err(Error::ProfileMismatch(format!(
            "profile covers {} layers, model has {}",
            profile.num_layers(),
            model.num_layers()
        )));
    }
    check_calib(model, calib)?;
    let mut pruned = model.clone();
    let mut residuals: Vec<Matrix> = calib
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| model.embed(s))
        .collect();
    let mut all_masks = Vec::with_capacity(model.num_layers());
    for l in 0..model.num_layers() {
        let (_, norms) = run_block(&pruned, l, &residuals)?;
        let sparsity = profile.sparsity[l];
        let mut masks = Vec::with_capacity(PRUNABLE.len());
        for (name, n) in PRUNABLE.iter().zip(&norms) {
            let w = pruned.blocks[l].matrix(name).expect("known");
            let scores = wanda_scores(w, n, l as u32)?;
            let mask = build_mask(&scores, sparsity, group)?;
            let masked = apply_mask(w, &mask)?;
            *pruned.blocks[l].matrix_mut(name).expect("known") = masked;
            masks.push(mask);
        }
        all_masks.push(masks);
        let heads = pruned.heads();
        let block = &pruned.blocks[l];
        residuals = residuals.par_iter().map(|x| block.forward(x, heads, None)).collect();
    }
    Ok((pruned, all_masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::uniform_profile;
    use crate::toymodel::ToyModelConfig;

    fn small() -> ToyModel {
        ToyModel::init(&ToyModelConfig {
            num_layers: 2,
            d_model: 16,
            heads: 2,
            ffn_mult: 2,
            vocab: 30,
            seed: 5,
        })
        .unwrap()
    }

    fn calib() -> Vec<Vec<u32>> {
        vec![(0..12).map(|i| (i * 7 % 30) as u32).collect(), (0..9).map(|i| (i * 5 % 30) as u32).collect()]
    }

    #[test]
    fn zero_profile_leaves_model_bitwise_unchanged() {
        let m = small();
        let p = uniform_profile(2, 0.0).unwrap();
        let pruned = prune_model(&m, &p, &calib()).unwrap();
        assert_eq!(pruned, m);
    }

    #[test]
    fn uniform_half_gives_exact_row_counts() {
        let m = small();
        let p = uniform_profile(2, 0.5).unwrap();
        let pruned = prune_model(&m, &p, &calib()).unwrap();
        for b in &pruned.blocks {
            for name in PRUNABLE {
                let w = b.matrix(name).unwrap();
                for r in 0..w.rows() {
                    let zeros = w.row(r).iter().filter(|&&v| v == 0.0).count();
                    assert_eq!(zeros, w.cols() / 2, "{name} row {r}");
                }
            }
        }
        // original untouched
        assert!(m.blocks[0].q.as_slice().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn profile_depth_must_match() {
        let m = small();
        let p = uniform_profile(3, 0.5).unwrap();
        assert!(matches!(prune_model(&m, &p, &calib()), Err(Error::ProfileMismatch(_))));
    }

    #[test]
    fn importance_covers_every_projection() {
        let m = small();
        let imp = layer_importance(&m, &calib()).unwrap();
        assert_eq!(imp.len(), 2);
        assert!(imp.iter().all(|l| l.len() == 6));
        assert_eq!(imp[0][5].scores.shape(), (16, 32));
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

mod oracles;

use proptest::prelude::*;

use truthprune::importance::{
    apply_mask, build_mask, column_norms, layer_outlier_ratio, outlier_ratio, wanda_scores, ImportanceMatrix,
    MaskGroup,
};
use truthprune::metrics::{mc_scores, Mc2Mode};
use truthprune::separability::{layer_separability, variance_ratio};
use truthprune::Matrix;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-4.0f32..4.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn im(scores: Matrix) -> ImportanceMatrix {
    ImportanceMatrix {
        scores,
        layer_index: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn wanda_matches_definition(w in matrix(12, 12), seed in any::<u64>()) {
        let mut r = oracles::rng(seed);
        let norms: Vec<f32> = (0..w.cols()).map(|_| rand::Rng::random_range(&mut r, 0.0..3.0f32)).collect();
        let got = wanda_scores(&w, &norms, 4).unwrap();
        prop_assert_eq!(got.layer_index, 4);
        let want = oracles::wanda(&w, &norms);
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                prop_assert!(oracles::rel_close(got.scores.get(i, j) as f64, want[i][j], 1e-6));
            }
        }
    }

    #[test]
    fn wanda_norm_scaling_is_linear(w in matrix(6, 6), k in 0.1f32..8.0) {
        let ones = vec![1.0; w.cols()];
        let scaled = vec![k; w.cols()];
        let a = wanda_scores(&w, &ones, 0).unwrap();
        let b = wanda_scores(&w, &scaled, 0).unwrap();
        for (x, y) in a.scores.as_slice().iter().zip(b.scores.as_slice()) {
            prop_assert!(oracles::rel_close((*x * k) as f64, *y as f64, 1e-6));
        }
    }

    #[test]
    fn outlier_ratio_matches_count(w in matrix(10, 10), m in 0.5f32..6.0) {
        let s = im(w.map(f32::abs));
        let (count, total) = oracles::outliers(s.scores.as_slice(), m);
        let got = outlier_ratio(&s, m).unwrap();
        prop_assert_eq!((got as f64 * total as f64).round() as usize, count);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn pooled_outlier_ratio_of_one_matrix_is_plain(w in matrix(8, 8), m in 0.5f32..6.0) {
        let s = im(w.map(f32::abs));
        prop_assert_eq!(layer_outlier_ratio(std::slice::from_ref(&s), m).unwrap(), outlier_ratio(&s, m).unwrap());
    }

    #[test]
    fn variance_ratio_matches_definition(t in matrix(16, 6), seed in any::<u64>()) {
        prop_assume!(t.rows() >= 2);
        let mut r = oracles::rng(seed);
        let f = oracles::random_matrix(&mut r, 2 + t.rows() % 7, t.cols(), 3.0);
        let got = variance_ratio(&t, &f).unwrap();
        let want = oracles::variance_ratio(&t, &f);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!(oracles::rel_close(*g, *w, 1e-6), "{} vs {}", g, w);
        }
    }

    #[test]
    fn separability_is_translation_invariant(t in matrix(20, 5), shift in -10.0f32..10.0) {
        prop_assume!(t.rows() >= 4);
        let labels: Vec<bool> = (0..t.rows()).map(|i| i % 2 == 0).collect();
        let a = layer_separability(&t, &labels).unwrap();
        let b = layer_separability(&t.map(|x| x + shift), &labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-4 * a.max(1e-3));
    }

    #[test]
    fn mc_scores_match_definition(seed in any::<u64>(), n in 1usize..12) {
        let mut r = oracles::rng(seed);
        let inst: Vec<_> = (0..n).map(|i| oracles::random_mc_instance(&mut r, i)).collect();
        let got = mc_scores(&inst, Mc2Mode::MassComparison).unwrap();
        let want = oracles::mc(&inst);
        prop_assert_eq!((got.mc1, got.mc2, got.mc3), (want.mc1, want.mc2, want.mc3));
    }

    #[test]
    fn mask_counts_are_exact(w in matrix(64, 64), k in 0usize..3, per_row in any::<bool>()) {
        let s = [0.25, 0.5, 0.65][k];
        let g = if per_row { MaskGroup::PerRow } else { MaskGroup::PerMatrix };
        oracles::check_mask_counts(&w.map(f32::abs), s, g).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn masked_weights_are_zero_exactly_where_dropped(w in matrix(16, 16), s in 0.0f64..0.95) {
        let mask = build_mask(&im(w.map(f32::abs)), s, MaskGroup::PerRow).unwrap();
        let out = apply_mask(&w, &mask).unwrap();
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let want = if mask.keeps(i, j) { w.get(i, j) } else { 0.0 };
                prop_assert_eq!(out.get(i, j), want);
            }
        }
    }

    #[test]
    fn column_norms_match_definition(x in matrix(20, 8)) {
        let got = column_norms(&x).unwrap();
        for (j, g) in got.iter().enumerate() {
            let want = x.iter_rows().map(|r| (r[j] as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!(oracles::rel_close(*g as f64, want, 1e-5));
        }
    }
}

#[test]
fn mask_ties_drop_lower_index_first() {
    let s = im(Matrix::from_rows(&[[1.0f32, 1.0, 1.0, 1.0]]).unwrap());
    let m = build_mask(&s, 0.5, MaskGroup::PerRow).unwrap();
    assert_eq!(m.keep_flags(), &[false, false, true, true]);
}

#[test]
fn invalid_sparsity_rejected() {
    let s = im(Matrix::from_rows(&[[1.0f32, 2.0]]).unwrap());
    assert!(build_mask(&s, 1.0, MaskGroup::PerRow).is_err());
    assert!(build_mask(&s, -0.1, MaskGroup::PerRow).is_err());
}

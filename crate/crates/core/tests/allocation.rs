// SPDX-License-Identifier: MIT OR Apache-2.0

mod oracles;

use proptest::prelude::*;

use truthprune::allocation::{owl_profile, swl_profile, tplo_profile, uniform_profile, SparsityProfile};
use truthprune::separability::SeparabilityProfile;

fn instance() -> impl Strategy<Value = oracles::AllocInstance> {
    (2usize..40, 0.1f64..0.9, 0.0f64..0.99).prop_flat_map(|(l, s, lf)| {
        let lambda = lf * s.min(1.0 - s);
        (
            prop::collection::vec(0.0f64..20.0, l),
            prop::collection::vec(0.0f64..0.3, l),
            0..=l,
        )
            .prop_map(move |(lsd, ratios, prefix_k)| oracles::AllocInstance {
                lsd,
                ratios,
                s,
                lambda,
                prefix_k,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn allocator_invariants(x in instance()) {
        oracles::check_allocators(&x).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn zero_bound_is_uniform(lsd in prop::collection::vec(0.0f64..5.0, 2..20), s in 0.05f64..0.95) {
        let sep = SeparabilityProfile::from_lsd(lsd.clone()).unwrap();
        let p = swl_profile(&sep, s, 0.0).unwrap();
        prop_assert_eq!(p.sparsity, vec![s; lsd.len()]);
    }

    #[test]
    fn profiles_serialize_round_trip(x in instance()) {
        let sep = SeparabilityProfile::from_lsd(x.lsd.clone()).unwrap();
        let p = swl_profile(&sep, x.s, x.lambda).unwrap();
        let back: SparsityProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }
}

#[test]
fn equal_scores_fall_back_to_uniform() {
    let p = owl_profile(&[0.1; 6], 0.5, 0.08).unwrap();
    assert!(p.degenerate);
    assert_eq!(p.sparsity, vec![0.5; 6]);
}

#[test]
fn bound_outside_range_rejected() {
    let sep = SeparabilityProfile::from_lsd(vec![1.0, 2.0]).unwrap();
    assert!(swl_profile(&sep, 0.05, 0.08).is_err());
    assert!(uniform_profile(0, 0.5).is_err());
    assert!(uniform_profile(3, 1.0).is_err());
}

#[test]
fn tplo_rejects_mismatched_inputs() {
    let sep = SeparabilityProfile::from_lsd(vec![1.0, 2.0, 3.0]).unwrap();
    let swl = swl_profile(&sep, 0.5, 0.08).unwrap();
    let owl = owl_profile(&[0.1, 0.2], 0.5, 0.08).unwrap();
    assert!(tplo_profile(&swl, &owl, 1, 0.5).is_err());
    let owl = owl_profile(&[0.1, 0.2, 0.3], 0.5, 0.08).unwrap();
    assert!(tplo_profile(&swl, &owl, 4, 0.5).is_err());
    assert!(tplo_profile(&swl, &owl, 1, 0.4).is_err());
}

#[test]
fn separable_layers_pruned_less() {
    let sep = SeparabilityProfile::from_lsd(vec![0.1, 0.5, 2.0, 0.2]).unwrap();
    let p = swl_profile(&sep, 0.5, 0.08).unwrap();
    assert!(p.sparsity[2] < p.sparsity[1] && p.sparsity[1] < p.sparsity[3] && p.sparsity[3] < p.sparsity[0]);
}

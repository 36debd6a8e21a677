// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded randomness.
//!
//! All randomness flows through ChaCha8, a counter-based generator: a
//! `(seed, stream)` pair addresses an independent keystream, so each tensor
//! or experiment component draws from its own stream and adding a consumer
//! never perturbs the others.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type DetRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn normal(rng: &mut DetRng) -> f32 {
    let v: f64 = rng.sample(StandardNormal);
    v as f32
}

#[inline]
pub fn normal64(rng: &mut DetRng) -> f64 {
    rng.sample(StandardNormal)
}

/// `k` distinct indices from `0..n`, in sampled order.
pub fn sample_indices(rng: &mut DetRng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx
}

pub fn shuffle<T>(rng: &mut DetRng, v: &mut [T]) {
    v.shuffle(rng);
}

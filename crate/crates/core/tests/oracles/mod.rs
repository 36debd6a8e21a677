// SPDX-License-Identifier: MIT OR Apache-2.0

//! Naive per-definition evaluators and property checks shared by the
//! integration tests. Nothing here calls into the code under test except to
//! read its outputs.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use truthprune::allocation::{owl_profile, swl_profile, tplo_profile, uniform_profile, SparsityProfile};
use truthprune::importance::{build_mask, ImportanceMatrix, MaskGroup};
use truthprune::metrics::{Candidate, MCInstance, MASS_TIE_TOL};
use truthprune::separability::SeparabilityProfile;
use truthprune::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw by Box-Muller.
pub fn gauss(r: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ----------------------------------------------------------------------------
// formulas

pub fn wanda(w: &Matrix, norms: &[f32]) -> Vec<Vec<f64>> {
    (0..w.rows())
        .map(|i| (0..w.cols()).map(|j| norms[j] as f64 * (w.get(i, j) as f64).abs()).collect())
        .collect()
}

/// Count of entries strictly above `m · mean` and the total count.
pub fn outliers(values: &[f32], m: f32) -> (usize, usize) {
    let mut mean = 0.0f64;
    for (k, &v) in values.iter().enumerate() {
        // running mean, a different summation from the library's
        mean += (v as f64 - mean) / (k + 1) as f64;
    }
    let thr = m as f64 * mean;
    (values.iter().filter(|&&v| v as f64 > thr).count(), values.len())
}

/// Between-class over within-class sum of squares, one value per column.
pub fn variance_ratio(t: &Matrix, f: &Matrix) -> Vec<f64> {
    let col = |m: &Matrix, j: usize| -> Vec<f64> { m.iter_rows().map(|r| r[j] as f64).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (0..t.cols())
        .map(|j| {
            let (a, b) = (col(t, j), col(f, j));
            let (ma, mb) = (mean(&a), mean(&b));
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let between = na * nb / (na + nb) * (ma - mb).powi(2);
            let within: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
                + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
            between / (within + 1e-12)
        })
        .collect()
}

pub struct Mc {
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
}

pub fn mc(instances: &[MCInstance]) -> Mc {
    let (mut h1, mut h2, mut h3) = (0usize, 0usize, 0usize);
    for inst in instances {
        let c = &inst.candidates;
        let best = c.iter().position(|x| x.is_best).unwrap();
        if (0..c.len()).all(|k| k == best || c[k].log_prob < c[best].log_prob) {
            h1 += 1;
        }
        let probs: Vec<f64> = c.iter().map(|x| (x.log_prob as f64).exp()).collect();
        let z: f64 = probs.iter().sum();
        let correct: f64 = c.iter().zip(&probs).filter(|(x, _)| x.is_correct).map(|(_, p)| p / z).sum();
        if correct - (1.0 - correct) > MASS_TIE_TOL {
            h2 += 1;
        }
        let ok = c
            .iter()
            .filter(|x| x.is_correct)
            .all(|x| c.iter().filter(|y| !y.is_correct).all(|y| x.log_prob > y.log_prob));
        if ok {
            h3 += 1;
        }
    }
    let n = instances.len() as f64;
    Mc {
        mc1: h1 as f64 / n,
        mc2: h2 as f64 / n,
        mc3: h3 as f64 / n,
    }
}

pub fn random_mc_instance(r: &mut ChaCha8Rng, id: usize) -> MCInstance {
    let n = r.random_range(2..8usize);
    let n_correct = r.random_range(1..n);
    let best = r.random_range(0..n_correct);
    MCInstance {
        id: format!("q{id}"),
        candidates: (0..n)
            .map(|k| Candidate {
                log_prob: r.random_range(-12.0f32..-0.01),
                is_correct: k < n_correct,
                is_best: k == best,
            })
            .collect(),
    }
}

// ----------------------------------------------------------------------------
// masks

/// Checks that every group of a mask drops exactly `floor(s · size)` entries.
pub fn check_mask_counts(scores: &Matrix, s: f64, group: MaskGroup) -> Result<(), String> {
    let im = ImportanceMatrix {
        scores: scores.clone(),
        layer_index: 0,
    };
    let mask = build_mask(&im, s, group).map_err(|e| e.to_string())?;
    let (rows, cols) = scores.shape();
    let zeros = |rs: std::ops::Range<usize>| -> usize {
        rs.flat_map(|i| (0..cols).map(move |j| (i, j)))
            .filter(|&(i, j)| !mask.keeps(i, j))
            .count()
    };
    match group {
        MaskGroup::PerRow => {
            let want = (s * cols as f64).floor() as usize;
            for i in 0..rows {
                let got = zeros(i..i + 1);
                if got != want {
                    return Err(format!("row {i} of {rows}x{cols} at s={s}: {got} zeros, want {want}"));
                }
            }
        }
        MaskGroup::PerMatrix => {
            let want = (s * (rows * cols) as f64).floor() as usize;
            let got = zeros(0..rows);
            if got != want {
                return Err(format!("{rows}x{cols} at s={s}: {got} zeros, want {want}"));
            }
        }
    }
    // dropped entries never outscore kept ones within a group
    let groups: Vec<Vec<(usize, usize)>> = match group {
        MaskGroup::PerRow => (0..rows).map(|i| (0..cols).map(|j| (i, j)).collect()).collect(),
        MaskGroup::PerMatrix => vec![(0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect()],
    };
    for g in groups {
        let dropped = g.iter().filter(|&&(i, j)| !mask.keeps(i, j)).map(|&(i, j)| scores.get(i, j));
        let kept = g.iter().filter(|&&(i, j)| mask.keeps(i, j)).map(|&(i, j)| scores.get(i, j));
        let hi = dropped.fold(f32::NEG_INFINITY, f32::max);
        let lo = kept.fold(f32::INFINITY, f32::min);
        if hi > lo {
            return Err(format!("dropped score {hi} exceeds kept score {lo}"));
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// allocators

#[derive(Debug, Clone)]
pub struct AllocInstance {
    pub lsd: Vec<f64>,
    pub ratios: Vec<f64>,
    pub s: f64,
    pub lambda: f64,
    pub prefix_k: usize,
}

pub fn random_alloc_instance(r: &mut ChaCha8Rng) -> AllocInstance {
    let l = r.random_range(2..48usize);
    let s = r.random_range(0.1..0.9f64);
    let lambda = r.random_range(0.0..s.min(1.0 - s) * 0.99);
    AllocInstance {
        lsd: (0..l).map(|_| r.random_range(0.0..5.0f64).powi(2)).collect(),
        ratios: (0..l).map(|_| r.random_range(0.0..0.2f64)).collect(),
        s,
        lambda,
        prefix_k: r.random_range(0..=l),
    }
}

fn check_profile(p: &SparsityProfile, s: f64, lambda: f64) -> Result<(), String> {
    let mean = p.sparsity.iter().sum::<f64>() / p.sparsity.len() as f64;
    if (mean - s).abs() > 1e-6 {
        return Err(format!("{}: mean {mean} vs target {s}", p.method));
    }
    for &x in &p.sparsity {
        if x < s - lambda - 1e-9 || x > s + lambda + 1e-9 {
            return Err(format!("{}: {x} outside [{}, {}]", p.method, s - lambda, s + lambda));
        }
    }
    Ok(())
}

/// `key[i] > key[j]` must imply `v[i] <= v[j]` (higher score, less pruning).
fn check_antitone(v: &[f64], key: &[f64], what: &str) -> Result<(), String> {
    for i in 0..v.len() {
        for j in 0..v.len() {
            if key[i] > key[j] && v[i] > v[j] + 1e-12 {
                return Err(format!("{what}: layer {i} outranks {j} but is pruned more"));
            }
        }
    }
    Ok(())
}

/// Mean, box, ordering and TPLO degenerate identities for one instance.
pub fn check_allocators(x: &AllocInstance) -> Result<(), String> {
    let e = |e: truthprune::Error| e.to_string();
    let l = x.lsd.len();
    let sep = SeparabilityProfile::from_lsd(x.lsd.clone()).map_err(e)?;
    let uni = uniform_profile(l, x.s).map_err(e)?;
    let swl = swl_profile(&sep, x.s, x.lambda).map_err(e)?;
    let owl = owl_profile(&x.ratios, x.s, x.lambda).map_err(e)?;
    let tplo = tplo_profile(&swl, &owl, x.prefix_k, x.s).map_err(e)?;
    check_profile(&uni, x.s, 0.0)?;
    for p in [&swl, &owl, &tplo] {
        check_profile(p, x.s, x.lambda)?;
    }
    check_antitone(&swl.sparsity, &x.lsd, "swl")?;
    check_antitone(&owl.sparsity, &x.ratios, "owl")?;
    let k = x.prefix_k;
    check_antitone(&tplo.sparsity[..k], &x.ratios[..k], "tplo prefix")?;
    check_antitone(&tplo.sparsity[k..], &x.lsd[k..], "tplo suffix")?;
    let t0 = tplo_profile(&swl, &owl, 0, x.s).map_err(e)?;
    if t0.sparsity != swl.sparsity {
        return Err("tplo with an empty prefix differs from swl".into());
    }
    let tl = tplo_profile(&swl, &owl, l, x.s).map_err(e)?;
    if tl.sparsity != owl.sparsity {
        return Err("tplo with a full prefix differs from owl".into());
    }
    Ok(())
}

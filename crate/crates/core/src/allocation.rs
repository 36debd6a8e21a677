// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise sparsity allocation.
//!
//! Every non-uniform allocator follows the same scheme: a per-layer score `u`
//! (higher means "prune more") is mapped affinely onto the box
//! `[s − λ, s + λ]`, shifted so the mean is exactly `s`, and then projected
//! back into the box by clipping and redistributing the clipped mass over the
//! remaining interior layers.
//!
//! * separability-weighted (`swl`): `u = 1 − SepPD`
//! * outlier-weighted (`owl`): `u = 1 − normalised outlier ratio`
//! * `tplo`: the separability-weighted profile with its first `k` layers
//!   replaced by the outlier-weighted values, then re-centred on `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::separability::SeparabilityProfile;

pub const DEFAULT_LAMBDA: f64 = 0.08;
pub const DEFAULT_TARGET: f64 = 0.5;
pub const DEFAULT_PREFIX_K: usize = 10;

/// Shifts smaller than this are treated as exact zeros.
const ZERO_SHIFT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMethod {
    Uniform,
    Swl,
    Owl,
    Tplo,
}

impl AllocationMethod {
    pub const ALL: [AllocationMethod; 4] = [
        AllocationMethod::Uniform,
        AllocationMethod::Swl,
        AllocationMethod::Owl,
        AllocationMethod::Tplo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMethod::Uniform => "uniform",
            AllocationMethod::Swl => "swl",
            AllocationMethod::Owl => "owl",
            AllocationMethod::Tplo => "tplo",
        }
    }
}

impl std::fmt::Display for AllocationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AllocationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "wanda" => Ok(AllocationMethod::Uniform),
            "swl" => Ok(AllocationMethod::Swl),
            "owl" => Ok(AllocationMethod::Owl),
            "tplo" => Ok(AllocationMethod::Tplo),
            other => Err(Error::Config(format!("unknown allocation method `{other}`"))),
        }
    }
}

/// Per-layer sparsities with their target and bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub method: AllocationMethod,
    pub target: f64,
    pub lambda: f64,
    pub sparsity: Vec<f64>,
    /// Set when the input scores were all equal and the profile fell back to
    /// uniform.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl SparsityProfile {
    pub fn num_layers(&self) -> usize {
        self.sparsity.len()
    }

    pub fn mean(&self) -> f64 {
        self.sparsity.iter().sum::<f64>() / self.sparsity.len() as f64
    }

    /// Layer densities `1 − s_l`.
    pub fn density(&self) -> Vec<f64> {
        self.sparsity.iter().map(|s| 1.0 - s).collect()
    }

    /// Checks mean, box and range invariants at the given tolerances.
    pub fn check(&self, mean_tol: f64, box_tol: f64) -> Result<()> {
        if self.sparsity.is_empty() {
            return Err(Error::EmptyInput("profile has no layers".into()));
        }
        let mean = self.mean();
        if (mean - self.target).abs() > mean_tol {
            return Err(Error::InvalidSparsity {
                value: mean,
                reason: format!("mean differs from target {}", self.target),
            });
        }
        let (lo, hi) = (self.target - self.lambda, self.target + self.lambda);
        for (l, &s) in self.sparsity.iter().enumerate() {
            if s < lo - box_tol || s > hi + box_tol {
                return Err(Error::InvalidSparsity {
                    value: s,
                    reason: format!("layer {l} outside [{lo}, {hi}]"),
                });
            }
            if !(0.0..1.0).contains(&s) {
                return Err(Error::InvalidSparsity {
                    value: s,
                    reason: format!("layer {l} outside [0, 1)"),
                });
            }
        }
        Ok(())
    }
}

pub fn check_target(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidSparsity {
            value: s,
            reason: "target must lie in [0, 1)".into(),
        });
    }
    Ok(())
}

pub fn check_bound(s: f64, lambda: f64) -> Result<()> {
    check_target(s)?;
    if lambda == 0.0 {
        return Ok(());
    }
    if !(lambda > 0.0 && lambda < s.min(1.0 - s)) {
        return Err(Error::InvalidSparsity {
            value: lambda,
            reason: format!("bound must lie in [0, min(s, 1 − s)) for s = {s}"),
        });
    }
    Ok(())
}

pub fn uniform_profile(num_layers: usize, s: f64) -> Result<SparsityProfile> {
    check_target(s)?;
    if num_layers == 0 {
        return Err(Error::EmptyInput("profile needs at least one layer".into()));
    }
    Ok(SparsityProfile {
        method: AllocationMethod::Uniform,
        target: s,
        lambda: 0.0,
        sparsity: vec![s; num_layers],
        degenerate: false,
    })
}

/// Separability-weighted profile: more separable layers are pruned less.
pub fn swl_profile(sep: &SeparabilityProfile, s: f64, lambda: f64) -> Result<SparsityProfile> {
    let u: Vec<f64> = sep.sep_pd.iter().map(|p| 1.0 - p).collect();
    bounded_profile(AllocationMethod::Swl, &u, s, lambda)
}

/// Outlier-weighted profile: layers with more outliers are pruned less.
pub fn owl_profile(outlier_ratios: &[f64], s: f64, lambda: f64) -> Result<SparsityProfile> {
    if outlier_ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Config("outlier ratios must be finite and non-negative".into()));
    }
    let total: f64 = outlier_ratios.iter().sum();
    let u: Vec<f64> = if total > 0.0 {
        outlier_ratios.iter().map(|r| 1.0 - r / total).collect()
    } else {
        vec![1.0; outlier_ratios.len()]
    };
    bounded_profile(AllocationMethod::Owl, &u, s, lambda)
}

fn bounded_profile(method: AllocationMethod, u: &[f64], s: f64, lambda: f64) -> Result<SparsityProfile> {
    check_bound(s, lambda)?;
    let l = u.len();
    if l < 2 {
        return Err(Error::InsufficientSamples(format!(
            "{method} allocation needs at least 2 layers, got {l}"
        )));
    }
    let (min, max) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let degenerate = max - min <= 0.0;
    if degenerate || lambda == 0.0 {
        let mut p = uniform_profile(l, s)?;
        p.method = method;
        p.lambda = lambda;
        p.degenerate = degenerate;
        return Ok(p);
    }
    let lo = s - lambda;
    let width = 2.0 * lambda;
    let mapped: Vec<f64> = u.iter().map(|&v| lo + width * (v - min) / (max - min)).collect();
    let sparsity = center_and_project(mapped, s, lambda);
    Ok(SparsityProfile {
        method,
        target: s,
        lambda,
        sparsity,
        degenerate: false,
    })
}

/// Shifts `v` to mean `s`, then projects it onto `[s − λ, s + λ]` while
/// keeping the mean.
fn center_and_project(mut v: Vec<f64>, s: f64, lambda: f64) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let shift = s - mean;
    if shift.abs() > ZERO_SHIFT {
        v.iter_mut().for_each(|x| *x += shift);
    }
    project_box(&mut v, s - lambda, s + lambda);
    v
}

/// Iterative clip-and-redistribute projection onto `[lo, hi]`.
///
/// Mass removed by clipping is spread uniformly over entries that have not
/// been clipped yet. Once an entry is pinned to a bound it stays there, so the
/// loop finishes in at most `len` rounds. Requires `lo ≤ mean(v) ≤ hi`.
fn project_box(v: &mut [f64], lo: f64, hi: f64) {
    let mut pinned = vec![false; v.len()];
    for _ in 0..=v.len() {
        let mut residual = 0.0;
        let mut changed = false;
        for (x, p) in v.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                continue;
            }
            if *x > hi {
                residual += *x - hi;
                *x = hi;
                *p = true;
                changed = true;
            } else if *x < lo {
                residual += *x - lo;
                *x = lo;
                *p = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let free = pinned.iter().filter(|&&p| !p).count();
        if free == 0 {
            break;
        }
        let add = residual / free as f64;
        for (x, p) in v.iter_mut().zip(&pinned) {
            if !*p {
                *x += add;
            }
        }
    }
}

/// Prefix-aligned hybrid: separability-weighted values everywhere except the
/// first `prefix_k` layers, which take the outlier-weighted values, followed
/// by a mean shift back to `s` and a box projection.
///
/// The shift is performed on sparsities; since density is `1 − sparsity`,
/// shifting densities by `(1 − s) − mean(d)` is the same operation.
pub fn tplo_profile(
    swl: &SparsityProfile,
    owl: &SparsityProfile,
    prefix_k: usize,
    s: f64,
) -> Result<SparsityProfile> {
    if swl.num_layers() != owl.num_layers() {
        return Err(Error::ProfileMismatch(format!(
            "layer counts differ: {} vs {}",
            swl.num_layers(),
            owl.num_layers()
        )));
    }
    if swl.target != s || owl.target != s {
        return Err(Error::ProfileMismatch(format!(
            "targets {} and {} differ from requested {s}",
            swl.target, owl.target
        )));
    }
    if swl.lambda != owl.lambda {
        return Err(Error::ProfileMismatch(format!(
            "bounds differ: {} vs {}",
            swl.lambda, owl.lambda
        )));
    }
    if prefix_k > swl.num_layers() {
        return Err(Error::ProfileMismatch(format!(
            "prefix of {prefix_k} layers exceeds depth {}",
            swl.num_layers()
        )));
    }
    let spliced: Vec<f64> = owl.sparsity[..prefix_k]
        .iter()
        .chain(&swl.sparsity[prefix_k..])
        .copied()
        .collect();
    let sparsity = center_and_project(spliced, s, swl.lambda);
    Ok(SparsityProfile {
        method: AllocationMethod::Tplo,
        target: s,
        lambda: swl.lambda,
        sparsity,
        degenerate: false,
    })
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multiple-choice scoring. Every hit uses a strict inequality; ties miss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub log_prob: f32,
    pub is_correct: bool,
    #[serde(default)]
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCInstance {
    pub id: String,
    pub candidates: Vec<Candidate>,
}

impl MCInstance {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Error::Schema(format!("instance `{}`: {why}", self.id));
        if !self.candidates.iter().any(|c| c.is_correct) || self.candidates.iter().all(|c| c.is_correct) {
            return Err(bad("needs at least one correct and one incorrect answer"));
        }
        let best: Vec<&Candidate> = self.candidates.iter().filter(|c| c.is_best).collect();
        if best.len() != 1 {
            return Err(bad("needs exactly one best answer"));
        }
        if !best[0].is_correct {
            return Err(bad("the best answer must be correct"));
        }
        if self.candidates.iter().any(|c| !c.log_prob.is_finite()) {
            return Err(bad("log-probabilities must be finite"));
        }
        Ok(())
    }
}

/// Mass differences at or below this are ties. Log-probabilities arrive as
/// f32, so normalized masses are only known to about this resolution.
pub const MASS_TIE_TOL: f64 = 4.0 * f32::EPSILON as f64;

/// How MC2 turns an instance into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mc2Mode {
    /// Hit iff the normalized mass of the correct answers exceeds that of the
    /// incorrect ones by more than [`MASS_TIE_TOL`].
    #[default]
    MassComparison,
    /// Average normalized mass of the correct answers.
    MeanMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McScores {
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
    pub n: usize,
}

/// Normalized probability mass of the correct and the incorrect answers.
pub fn normalized_masses(inst: &MCInstance) -> (f64, f64) {
    let max = inst
        .candidates
        .iter()
        .map(|c| c.log_prob as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut mc, mut mi) = (0.0f64, 0.0f64);
    for c in &inst.candidates {
        let p = (c.log_prob as f64 - max).exp();
        if c.is_correct {
            mc += p;
        } else {
            mi += p;
        }
    }
    let z = mc + mi;
    (mc / z, mi / z)
}

fn mc1_hit(inst: &MCInstance) -> bool {
    let best = inst.candidates.iter().find(|c| c.is_best).expect("validated");
    inst.candidates
        .iter()
        .filter(|c| !c.is_best)
        .all(|c| best.log_prob > c.log_prob)
}

fn mc3_hit(inst: &MCInstance) -> bool {
    let min_c = inst
        .candidates
        .iter()
        .filter(|c| c.is_correct)
        .map(|c| c.log_prob)
        .fold(f32::INFINITY, f32::min);
    let max_i = inst
        .candidates
        .iter()
        .filter(|c| !c.is_correct)
        .map(|c| c.log_prob)
        .fold(f32::NEG_INFINITY, f32::max);
    min_c > max_i
}

pub fn mc_scores(instances: &[MCInstance], mode: Mc2Mode) -> Result<McScores> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("no multiple-choice instances".into()));
    }
    let (mut h1, mut m2, mut h3) = (0usize, 0.0f64, 0usize);
    for inst in instances {
        inst.validate()?;
        h1 += mc1_hit(inst) as usize;
        h3 += mc3_hit(inst) as usize;
        let (mc, mi) = normalized_masses(inst);
        m2 += match mode {
            Mc2Mode::MassComparison => (mc - mi > MASS_TIE_TOL) as u8 as f64,
            Mc2Mode::MeanMass => mc,
        };
    }
    let n = instances.len() as f64;
    Ok(McScores {
        mc1: h1 as f64 / n,
        mc2: m2 / n,
        mc3: h3 as f64 / n,
        n: instances.len(),
    })
}

pub fn load_mc_instances(path: &Path) -> Result<Vec<MCInstance>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Schema(format!("row {}: {e}", i + 1))))
        .collect()
}

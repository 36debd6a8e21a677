// SPDX-License-Identifier: MIT OR Apache-2.0

//! Calibration sets: fixed-length token windows drawn from two sources and
//! shuffled together, each tagged with where it came from.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::{shuffle, stream_rng};

use super::tokenizer::ToyTokenizer;

pub const MIN_SEQ_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub n_source_a: usize,
    pub n_source_b: usize,
    pub seq_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    /// Token offset of the window within its source.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub sequences: Vec<Vec<u32>>,
    pub provenance: Vec<Provenance>,
}

fn windows(src: &[u32], n: usize, seq_len: usize, seed: u64, stream: u64, tag: Source) -> Result<Vec<(Vec<u32>, Provenance)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let need = n * seq_len;
    if src.len() < need {
        return Err(Error::SourceExhausted(format!(
            "source {tag:?} holds {} tokens; {n} windows of {seq_len} need {need}",
            src.len()
        )));
    }
    let mut rng = stream_rng(seed, stream);
    Ok((0..n)
        .map(|_| {
            let offset = rng.random_range(0..=src.len() - seq_len);
            (src[offset..offset + seq_len].to_vec(), Provenance { source: tag, offset })
        })
        .collect())
}

/// Draws `n_source_a` windows from `a` and `n_source_b` from `b` at seeded
/// uniform offsets, then shuffles the union.
pub fn build_calibration(spec: &CalibrationSpec, a: &[u32], b: &[u32]) -> Result<CalibrationSet> {
    if spec.seq_len < MIN_SEQ_LEN {
        return Err(Error::Config(format!(
            "sequence length {} is below the minimum of {MIN_SEQ_LEN}",
            spec.seq_len
        )));
    }
    if spec.n_source_a + spec.n_source_b == 0 {
        return Err(Error::TooSmall("calibration set with no sequences".into()));
    }
    let mut all = windows(a, spec.n_source_a, spec.seq_len, spec.seed, 0, Source::A)?;
    all.extend(windows(b, spec.n_source_b, spec.seq_len, spec.seed, 1, Source::B)?);
    shuffle(&mut stream_rng(spec.seed, 2), &mut all);
    let (sequences, provenance) = all.into_iter().unzip();
    Ok(CalibrationSet { sequences, provenance })
}

/// Reads a token source: a `.json` array of token ids, a `.jsonl` file whose
/// rows carry a `text` field, or plain text.
pub fn load_token_source(path: &Path, tok: &ToyTokenizer) -> Result<Vec<u32>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let ids: Vec<u32> = serde_json::from_str(&src)?;
            Ok(ids)
        }
        Some("jsonl") => {
            let mut out = Vec::new();
            for (i, line) in src.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let v: Value = serde_json::from_str(line)?;
                let text = v
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::Schema(format!("row {}: missing string field `text`", i + 1)))?;
                out.extend(tok.encode(text));
            }
            Ok(out)
        }
        _ => Ok(tok.encode(&src)),
    }
}

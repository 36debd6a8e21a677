// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report bundles: one CSV per table kind plus a JSON document carrying the
//! run configuration and a content hash.
//!
//! CSV schemas (column order is fixed):
//!
//! | file               | columns                                              |
//! |--------------------|------------------------------------------------------|
//! | `probes.csv`       | method, probe, topic, layer, seed, accuracy          |
//! | `profiles.csv`     | method, target, lambda, layer, sparsity              |
//! | `separability.csv` | method, target, seed, layer, lsd                     |
//! | `perplexity.csv`   | method, target, seed, perplexity                     |
//! | `mc.csv`           | method, n, mc1, mc2, mc3                             |
//! | `judge.csv`        | method, n, truthful, informative, true_info          |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::SparsityProfile;
use crate::error::{Error, Result};
use crate::probes::EvalReport;

use super::judge::JudgeSummary;
use super::mc::McScores;

pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsdRow {
    pub method: String,
    pub target: f64,
    pub seed: u64,
    pub layer: u32,
    pub lsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub method: String,
    pub target: f64,
    pub seed: u64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub method: String,
    pub scores: McScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRow {
    pub method: String,
    pub summary: JudgeSummary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Free-form run configuration; object keys serialize sorted.
    pub config: serde_json::Value,
    pub probes: EvalReport,
    pub profiles: Vec<SparsityProfile>,
    pub separability: Vec<LsdRow>,
    pub perplexity: Vec<PerplexityRow>,
    pub mc: Vec<McRow>,
    pub judge: Vec<JudgeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Bundle {
    content_hash: String,
    report: Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.probes.rows.is_empty()
            && self.profiles.is_empty()
            && self.separability.is_empty()
            && self.perplexity.is_empty()
            && self.mc.is_empty()
            && self.judge.is_empty()
    }

    /// Git-style object hash: SHA-256 over `report <len>\0<compact json>`.
    pub fn content_hash(&self) -> Result<String> {
        let body = serde_json::to_vec(self)?;
        let mut h = Sha256::new();
        h.update(format!("report {}\0", body.len()).as_bytes());
        h.update(&body);
        Ok(hex::encode(h.finalize()))
    }

    pub fn to_json(&self) -> Result<String> {
        let bundle = Bundle {
            content_hash: self.content_hash()?,
            report: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&bundle)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a bundle and checks its hash.
    pub fn from_json(s: &str) -> Result<Self> {
        let b: Bundle = serde_json::from_str(s)?;
        let h = b.report.content_hash()?;
        if h != b.content_hash {
            return Err(Error::Manifest(format!(
                "report hash mismatch: stored {}, computed {h}",
                b.content_hash
            )));
        }
        Ok(b.report)
    }

    pub fn csv_tables(&self) -> Result<Vec<(&'static str, String)>> {
        let profiles = table(
            &["method", "target", "lambda", "layer", "sparsity"],
            self.profiles.iter().flat_map(|p| {
                p.sparsity.iter().enumerate().map(move |(l, s)| {
                    vec![p.method.to_string(), p.target.to_string(), p.lambda.to_string(), l.to_string(), s.to_string()]
                })
            }),
        )?;
        let separability = table(
            &["method", "target", "seed", "layer", "lsd"],
            self.separability
                .iter()
                .map(|r| vec![r.method.clone(), r.target.to_string(), r.seed.to_string(), r.layer.to_string(), r.lsd.to_string()]),
        )?;
        let perplexity = table(
            &["method", "target", "seed", "perplexity"],
            self.perplexity
                .iter()
                .map(|r| vec![r.method.clone(), r.target.to_string(), r.seed.to_string(), r.perplexity.to_string()]),
        )?;
        let mc = table(
            &["method", "n", "mc1", "mc2", "mc3"],
            self.mc.iter().map(|r| {
                let s = &r.scores;
                vec![r.method.clone(), s.n.to_string(), s.mc1.to_string(), s.mc2.to_string(), s.mc3.to_string()]
            }),
        )?;
        let judge = table(
            &["method", "n", "truthful", "informative", "true_info"],
            self.judge.iter().map(|r| {
                let s = &r.summary;
                vec![
                    r.method.clone(),
                    s.n.to_string(),
                    s.truthful.to_string(),
                    s.informative.to_string(),
                    s.true_info.to_string(),
                ]
            }),
        )?;
        Ok(vec![
            ("probes.csv", self.probes.to_csv_string()?),
            ("profiles.csv", profiles),
            ("separability.csv", separability),
            ("perplexity.csv", perplexity),
            ("mc.csv", mc),
            ("judge.csv", judge),
        ])
    }
}

fn table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the requested formats into `dir` and returns the written paths.
pub fn emit_report(report: &Report, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::EmptyInput("report has no results".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let mut write = |name: &str, body: &str| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        out.push(p);
        Ok(())
    };
    if formats.contains(&ReportFormat::Csv) {
        for (name, body) in report.csv_tables()? {
            write(name, &body)?;
        }
    }
    if formats.contains(&ReportFormat::Json) {
        write(REPORT_JSON, &report.to_json()?)?;
    }
    Ok(out)
}

pub fn load_report(path: &Path) -> Result<Report> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Report::from_json(&s)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multiple-choice scores, judge-verdict summaries and report emission.

mod judge;
mod mc;
mod report;

pub use judge::{load_verdicts, summarize_verdicts, JudgeSummary, JudgeVerdict};
pub use mc::{load_mc_instances, mc_scores, normalized_masses, Candidate, MCInstance, Mc2Mode, McScores, MASS_TIE_TOL};
pub use report::{emit_report, load_report, JudgeRow, LsdRow, McRow, PerplexityRow, Report, ReportFormat, REPORT_JSON};

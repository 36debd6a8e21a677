// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ingestion of externally produced truthfulness/informativeness verdicts.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub id: String,
    pub truthful: bool,
    pub informative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub n: usize,
    pub truthful: f64,
    pub informative: f64,
    /// Product of the two rates.
    pub true_info: f64,
}

pub fn summarize_verdicts(v: &[JudgeVerdict]) -> Result<JudgeSummary> {
    if v.is_empty() {
        return Err(Error::EmptyInput("no judge verdicts".into()));
    }
    let mut seen = HashSet::new();
    for x in v {
        if !seen.insert(x.id.as_str()) {
            return Err(Error::Schema(format!("verdict for `{}` repeated", x.id)));
        }
    }
    let n = v.len() as f64;
    let truthful = v.iter().filter(|x| x.truthful).count() as f64 / n;
    let informative = v.iter().filter(|x| x.informative).count() as f64 / n;
    Ok(JudgeSummary {
        n: v.len(),
        truthful,
        informative,
        true_info: truthful * informative,
    })
}

pub fn load_verdicts(path: &Path) -> Result<Vec<JudgeVerdict>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Schema(format!("row {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(id: &str, t: bool, i: bool) -> JudgeVerdict {
        JudgeVerdict {
            id: id.into(),
            truthful: t,
            informative: i,
        }
    }

    #[test]
    fn rates_and_product() {
        let s = summarize_verdicts(&[v("a", true, true), v("b", true, false), v("c", false, true), v("d", true, true)]).unwrap();
        assert_eq!(s.truthful, 0.75);
        assert_eq!(s.informative, 0.75);
        assert_eq!(s.true_info, 0.5625);
    }

    #[test]
    fn rejects_empty_and_repeats() {
        assert!(summarize_verdicts(&[]).is_err());
        assert!(matches!(
            summarize_verdicts(&[v("a", true, true), v("a", false, false)]),
            Err(Error::Schema(_))
        ));
    }
}

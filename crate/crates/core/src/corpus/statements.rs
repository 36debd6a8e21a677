// SPDX-License-Identifier: MIT OR Apache-2.0

//! True/false statement files and rule-based negation.
//!
//! JSONL rows and CSV records share one schema: `id`, `topic`, `text`,
//! `label` (required), `polarity` (optional, defaults to affirmative) and
//! `negation` (optional hand-written negated text, required to negate
//! free-form topics).

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::separability::Polarity;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: String,
    pub topic: String,
    pub text: String,
    pub label: bool,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementFormat {
    Jsonl,
    Csv,
}

impl StatementFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(StatementFormat::Jsonl),
            Some("csv") => Ok(StatementFormat::Csv),
            _ => Err(Error::Config(format!(
                "cannot infer statement format of {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for StatementFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(StatementFormat::Jsonl),
            "csv" => Ok(StatementFormat::Csv),
            other => Err(Error::Config(format!("unknown statement format `{other}`"))),
        }
    }
}

fn parse_label(raw: &str, row: usize) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "t" => Ok(true),
        "false" | "0" | "f" => Ok(false),
        other => Err(Error::Schema(format!("row {row}: label `{other}` is not boolean"))),
    }
}

fn build(
    row: usize,
    id: Option<String>,
    topic: Option<String>,
    text: Option<String>,
    label: Option<bool>,
    polarity: Option<String>,
    negation: Option<String>,
) -> Result<Statement> {
    let missing = |f: &str| Error::Schema(format!("row {row}: missing field `{f}`"));
    let text = text.ok_or_else(|| missing("text"))?;
    if text.trim().is_empty() {
        return Err(Error::Schema(format!("row {row}: empty text")));
    }
    let polarity = match polarity.as_deref().map(str::trim) {
        None | Some("") => Polarity::Affirmative,
        Some(p) => p
            .parse()
            .map_err(|_| Error::Schema(format!("row {row}: unknown polarity `{p}`")))?,
    };
    Ok(Statement {
        id: id.ok_or_else(|| missing("id"))?,
        topic: topic.ok_or_else(|| missing("topic"))?,
        text,
        label: label.ok_or_else(|| missing("label"))?,
        polarity,
        negation: negation.filter(|n| !n.trim().is_empty()),
    })
}

fn json_string(obj: &serde_json::Map<String, Value>, key: &str, row: usize) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) if key == "id" => Ok(Some(n.to_string())),
        Some(other) => Err(Error::Schema(format!("row {row}: field `{key}` has unexpected value {other}"))),
    }
}

fn parse_jsonl(src: &str) -> Result<Vec<Statement>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Schema(format!("row {row}: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Schema(format!("row {row}: expected a JSON object")))?;
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::Bool(b)) => Some(*b),
            Some(Value::Number(n)) => Some(parse_label(&n.to_string(), row)?),
            Some(Value::String(s)) => Some(parse_label(s, row)?),
            Some(other) => return Err(Error::Schema(format!("row {row}: label {other} is not boolean"))),
        };
        out.push(build(
            row,
            json_string(obj, "id", row)?,
            json_string(obj, "topic", row)?,
            json_string(obj, "text", row)?,
            label,
            json_string(obj, "polarity", row)?,
            json_string(obj, "negation", row)?,
        )?);
    }
    Ok(out)
}

fn parse_csv(src: &str) -> Result<Vec<Statement>> {
    if src.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_reader(src.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    for required in ["id", "topic", "text", "label"] {
        if col(required).is_none() {
            return Err(Error::Schema(format!("missing column `{required}`")));
        }
    }
    let (ci, ct, cx, cl, cp, cn) = (col("id"), col("topic"), col("text"), col("label"), col("polarity"), col("negation"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::to_string);
        let label = match get(cl) {
            Some(s) if !s.trim().is_empty() => Some(parse_label(&s, row)?),
            _ => None,
        };
        out.push(build(row, get(ci), get(ct), get(cx), label, get(cp), get(cn))?);
    }
    Ok(out)
}

/// Validates and orders statements by `(topic, id)`; ties keep input order.
pub fn validate_statements(mut st: Vec<Statement>) -> Result<Vec<Statement>> {
    let mut seen = HashSet::new();
    for s in &st {
        if !seen.insert((s.id.clone(), s.polarity)) {
            return Err(Error::DuplicateStatement {
                id: s.id.clone(),
                polarity: s.polarity.to_string(),
            });
        }
    }
    st.sort_by(|a, b| (&a.topic, &a.id).cmp(&(&b.topic, &b.id)));
    Ok(st)
}

pub fn parse_statements(src: &str, format: StatementFormat) -> Result<Vec<Statement>> {
    let st = match format {
        StatementFormat::Jsonl => parse_jsonl(src)?,
        StatementFormat::Csv => parse_csv(src)?,
    };
    validate_statements(st)
}

pub fn load_statements(path: &Path, format: StatementFormat) -> Result<Vec<Statement>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_statements(&src, format)
}

/// One statement per line, fields in schema order.
pub fn statements_to_jsonl(st: &[Statement]) -> Result<String> {
    let mut out = String::new();
    for s in st {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

// ----------------------------------------------------------------------------
// negation

/// A per-topic rewrite that inserts the negation.
#[derive(Debug, Clone)]
pub struct NegationRule {
    pub topic: String,
    pub pattern: Regex,
    pub replacement: String,
}

/// Closed table of negation templates, keyed by topic.
#[derive(Debug, Clone)]
pub struct NegationRules {
    pub rules: Vec<NegationRule>,
}

impl Default for NegationRules {
    fn default() -> Self {
        let table = [
            ("cities", r"^(The city of .+?) is in (.+)$", "$1 is not in $2"),
            ("sp_en_trans", r"^(The Spanish word .+?) means (.+)$", "$1 does not mean $2"),
            ("element_symb", r"^(.+?) has the symbol (.+)$", "$1 does not have the symbol $2"),
            ("animal_class", r"^(The .+?) is (an?) (.+)$", "$1 is not $2 $3"),
            ("inventors", r"^(.+?) lived in (.+)$", "$1 did not live in $2"),
        ];
        Self {
            rules: table
                .iter()
                .map(|(t, p, r)| NegationRule {
                    topic: t.to_string(),
                    pattern: Regex::new(p).expect("static pattern"),
                    replacement: r.to_string(),
                })
                .collect(),
        }
    }
}

impl NegationRules {
    pub fn get(&self, topic: &str) -> Option<&NegationRule> {
        self.rules.iter().find(|r| r.topic == topic)
    }
}

/// Negates an affirmative statement by its topic's template, or by its
/// hand-written `negation` text when the topic has no template.
pub fn negate(st: &Statement, rules: &NegationRules) -> Result<Statement> {
    if st.polarity == Polarity::Negated {
        return Err(Error::Template(format!("statement `{}` is already negated", st.id)));
    }
    let text = match rules.get(&st.topic) {
        Some(rule) => {
            if !rule.pattern.is_match(&st.text) {
                return Err(Error::Template(format!(
                    "`{}` does not match the {} template",
                    st.text, st.topic
                )));
            }
            rule.pattern.replace(&st.text, rule.replacement.as_str()).into_owned()
        }
        None => st.negation.clone().ok_or_else(|| {
            Error::Template(format!(
                "topic `{}` has no template and statement `{}` has no negation text",
                st.topic, st.id
            ))
        })?,
    };
    Ok(Statement {
        id: st.id.clone(),
        topic: st.topic.clone(),
        text,
        label: !st.label,
        polarity: Polarity::Negated,
        negation: None,
    })
}

/// Appends the negation of every affirmative statement that lacks one.
pub fn with_negations(st: &[Statement], rules: &NegationRules) -> Result<Vec<Statement>> {
    let present: HashSet<&str> = st
        .iter()
        .filter(|s| s.polarity == Polarity::Negated)
        .map(|s| s.id.as_str())
        .collect();
    let mut out = st.to_vec();
    for s in st {
        if s.polarity == Polarity::Affirmative && !present.contains(s.id.as_str()) {
            out.push(negate(s, rules)?);
        }
    }
    validate_statements(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aff(topic: &str, text: &str, label: bool) -> Statement {
        Statement {
            id: "x".into(),
            topic: topic.into(),
            text: text.into(),
            label,
            polarity: Polarity::Affirmative,
            negation: None,
        }
    }

    #[test]
    fn table_row_loads() {
        let src = r#"{"id":"c1","topic":"cities","text":"The city of Bhopal is in India.","label":true}"#;
        let st = parse_statements(src, StatementFormat::Jsonl).unwrap();
        assert_eq!(st[0].topic, "cities");
        assert_eq!(st[0].text, "The city of Bhopal is in India.");
        assert!(st[0].label);
        assert_eq!(st[0].polarity, Polarity::Affirmative);
    }

    #[test]
    fn empty_and_missing() {
        assert!(parse_statements("", StatementFormat::Jsonl).unwrap().is_empty());
        assert!(parse_statements("", StatementFormat::Csv).unwrap().is_empty());
        let src = r#"{"id":"c1","topic":"cities","text":"x"}"#;
        assert!(matches!(parse_statements(src, StatementFormat::Jsonl), Err(Error::Schema(_))));
        assert!(matches!(
            parse_statements("id,topic,text\n1,a,b\n", StatementFormat::Csv),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_with_polarity() {
        let src = "id,topic,text,label,polarity\n2,t,b,false,negated\n1,t,a,1,\n";
        let st = parse_statements(src, StatementFormat::Csv).unwrap();
        assert_eq!(st[0].id, "1");
        assert_eq!(st[1].polarity, Polarity::Negated);
        assert!(!st[1].label);
    }

    #[test]
    fn duplicate_rejected() {
        let src = "{\"id\":\"a\",\"topic\":\"t\",\"text\":\"x\",\"label\":true}\n{\"id\":\"a\",\"topic\":\"t\",\"text\":\"y\",\"label\":false}";
        assert!(matches!(
            parse_statements(src, StatementFormat::Jsonl),
            Err(Error::DuplicateStatement { .. })
        ));
    }

    #[test]
    fn negation_templates() {
        let r = NegationRules::default();
        let cases = [
            ("sp_en_trans", "The Spanish word 'dos' means 'enemy'.", "The Spanish word 'dos' does not mean 'enemy'."),
            ("cities", "The city of Bhopal is in India.", "The city of Bhopal is not in India."),
            ("element_symb", "Indium has the symbol As.", "Indium does not have the symbol As."),
            ("animal_class", "The giant anteater is a fish.", "The giant anteater is not a fish."),
            ("inventors", "Galileo Galilei lived in Italy.", "Galileo Galilei did not live in Italy."),
        ];
        for (topic, from, to) in cases {
            let n = negate(&aff(topic, from, false), &r).unwrap();
            assert_eq!(n.text, to);
            assert!(n.label);
            assert_eq!(n.polarity, Polarity::Negated);
            assert!(matches!(negate(&n, &r), Err(Error::Template(_))));
        }
    }

    #[test]
    fn facts_need_negation_column() {
        let r = NegationRules::default();
        let mut s = aff("facts", "The moon orbits around the Earth.", true);
        assert!(matches!(negate(&s, &r), Err(Error::Template(_))));
        s.negation = Some("The moon does not orbit around the Earth.".into());
        assert_eq!(negate(&s, &r).unwrap().text, "The moon does not orbit around the Earth.");
        assert!(matches!(
            negate(&aff("cities", "Bhopal, India", true), &r),
            Err(Error::Template(_))
        ));
    }
}

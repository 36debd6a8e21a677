// SPDX-License-Identifier: MIT OR Apache-2.0

//! Whitespace tokenizer with a byte fallback.
//!
//! Ids `0..256` are raw bytes; known words follow. A word outside the
//! vocabulary is spelled out byte by byte, so encoding never fails.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BYTE_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTokenizer {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl ToyTokenizer {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("vocabulary entry `{w}` is not a single word")));
            }
            if index.insert(w.clone(), BYTE_TOKENS + i as u32).is_some() {
                return Err(Error::Config(format!("vocabulary entry `{w}` repeated")));
            }
        }
        Ok(Self { words, index })
    }

    /// Keeps the most frequent words so that the total vocabulary is at most
    /// `vocab`; ties break lexicographically.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, vocab: u32) -> Result<Self> {
        if vocab < BYTE_TOKENS {
            return Err(Error::Config(format!("vocabulary {vocab} is smaller than the {BYTE_TOKENS} byte tokens")));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for w in t.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let keep = (vocab - BYTE_TOKENS) as usize;
        Self::from_words(ranked.into_iter().take(keep).map(|(w, _)| w.to_string()).collect())
    }

    pub fn vocab_size(&self) -> u32 {
        BYTE_TOKENS + self.words.len() as u32
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            match self.index.get(w) {
                Some(&id) => out.push(id),
                None => out.extend(w.bytes().map(u32::from)),
            }
        }
        out
    }

    /// Words are joined by single spaces; consecutive byte tokens are glued
    /// into one word.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut words: Vec<String> = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |bytes: &mut Vec<u8>, words: &mut Vec<String>| {
            if !bytes.is_empty() {
                words.push(String::from_utf8_lossy(bytes).into_owned());
                bytes.clear();
            }
        };
        for &id in ids {
            if id < BYTE_TOKENS {
                bytes.push(id as u8);
            } else {
                flush(&mut bytes, &mut words);
                let w = self.words.get((id - BYTE_TOKENS) as usize).ok_or(Error::Vocab {
                    token: id,
                    vocab: self.vocab_size(),
                })?;
                words.push(w.clone());
            }
        }
        flush(&mut bytes, &mut words);
        Ok(words.join(" "))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            words: Vec<String>,
        }
        let raw: Raw = serde_json::from_str(s)?;
        Self::from_words(raw.words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_words_and_fallback() {
        let t = ToyTokenizer::fit(["the cat the dog", "the cat"], 258).unwrap();
        assert_eq!(t.vocab_size(), 258);
        assert_eq!(t.encode("the cat"), vec![256, 257]);
        assert_eq!(t.encode("dog"), vec![100, 111, 103]);
        assert_eq!(t.decode(&t.encode("the  dog cat")).unwrap(), "the dog cat");
    }

    #[test]
    fn json_round_trip() {
        let t = ToyTokenizer::fit(["a b c"], 300).unwrap();
        let u = ToyTokenizer::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(t, u);
        assert_eq!(u.encode("b"), t.encode("b"));
    }

    #[test]
    fn rejects_bad_vocab() {
        assert!(ToyTokenizer::fit(["a"], 10).is_err());
        assert!(ToyTokenizer::from_words(vec!["a b".into()]).is_err());
        let t = ToyTokenizer::fit(["a"], 300).unwrap();
        assert!(matches!(t.decode(&[400]), Err(Error::Vocab { .. })));
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Enrichment through an external text-generation client.
//!
//! The client contract is one call: prompt in, text out. Calls are retried
//! with exponential backoff, a bounded number run concurrently, and a failing
//! item is recorded without stopping the run. The only shipped client runs a
//! local command named by an environment variable; endpoints and credentials
//! belong to that command's environment, never to files written here.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::prompt::{build_enrichment_prompt, sha256_hex};

/// Environment variable holding the shell command used by [`CommandClient`].
pub const ENRICH_CMD_ENV: &str = "TRUTHPRUNE_ENRICH_CMD";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientError {
    /// No answer within the deadline; retried.
    Timeout,
    /// Temporary failure; retried.
    Transient(String),
    /// Permanent failure; not retried.
    Fatal(String),
}

impl std::fmt::Display for ClientError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClientError::Timeout => f.write_str("timed out"),
            ClientError::Transient(m) => write!(f, "transient failure: {m}"),
            ClientError::Fatal(m) => write!(f, "fatal failure: {m}"),
        }
    }
}

pub trait TextClient: Sync {
    fn generate(&self, prompt: &str) -> std::result::Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.mul_f64(self.multiplier.powi(attempt.saturating_sub(1) as i32))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichConfig {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

/// Input row: `{id, text}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText {
    pub id: String,
    pub text: String,
}

/// Output row: `{source_id, prompt_sha256, text}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedRecord {
    pub source_id: String,
    pub prompt_sha256: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedItem {
    pub id: String,
    pub reason: String,
}

impl From<FailedItem> for Error {
    fn from(f: FailedItem) -> Self {
        Error::ItemFailed { id: f.id, reason: f.reason }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnrichOutcome {
    /// Successful items in input order.
    pub records: Vec<EnrichedRecord>,
    pub failures: Vec<FailedItem>,
}

impl EnrichOutcome {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

fn run_one(item: &SourceText, client: &dyn TextClient, policy: &RetryPolicy) -> std::result::Result<EnrichedRecord, FailedItem> {
    let fail = |reason: String| FailedItem {
        id: item.id.clone(),
        reason,
    };
    let prompt = build_enrichment_prompt(&item.text).map_err(|e| fail(e.to_string()))?;
    let attempts = policy.max_attempts.max(1);
    let mut last = ClientError::Timeout;
    for attempt in 1..=attempts {
        match client.generate(&prompt) {
            Ok(text) if text.trim().is_empty() => return Err(fail("malformed response: empty text".into())),
            Ok(text) => {
                return Ok(EnrichedRecord {
                    source_id: item.id.clone(),
                    prompt_sha256: sha256_hex(&prompt),
                    text,
                })
            }
            Err(ClientError::Fatal(m)) => return Err(fail(format!("fatal failure: {m}"))),
            Err(e) => {
                last = e;
                if attempt < attempts {
                    std::thread::sleep(policy.backoff(attempt));
                }
            }
        }
    }
    Err(fail(format!("{last} after {attempts} attempts")))
}

/// Enriches every item; at most `max_in_flight` client calls run at once.
pub fn enrich_statements(items: &[SourceText], client: &dyn TextClient, cfg: &EnrichConfig) -> EnrichOutcome {
    let slots: Vec<Mutex<Option<std::result::Result<EnrichedRecord, FailedItem>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.max_in_flight.max(1).min(items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = run_one(&items[i], client, &cfg.retry);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut out = EnrichOutcome::default();
    for slot in slots {
        match slot.into_inner().expect("slot lock").expect("every item processed") {
            Ok(r) => out.records.push(r),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

pub fn load_source_texts(path: &Path) -> Result<Vec<SourceText>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Schema(format!("row {}: {e}", i + 1))))
        .collect()
}

// ----------------------------------------------------------------------------
// command client

/// Runs `sh -c <command>` per call with the prompt on stdin and takes stdout
/// as the response. A non-zero exit is transient.
#[derive(Debug, Clone)]
pub struct CommandClient {
    pub command: String,
    pub timeout: Duration,
}

impl CommandClient {
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let command = std::env::var(ENRICH_CMD_ENV)
            .ok()
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{ENRICH_CMD_ENV} is not set")))?;
        Ok(Self { command, timeout })
    }
}

impl TextClient for CommandClient {
    fn generate(&self, prompt: &str) -> std::result::Result<String, ClientError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ClientError::Fatal(format!("cannot start command: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let prompt = prompt.to_string();
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(prompt.as_bytes());
        });
        let reader = std::thread::spawn(move || {
            let mut out = Vec::new();
            let _ = stdout.read_to_end(&mut out);
            out
        });
        let err_reader = std::thread::spawn(move || {
            let mut out = String::new();
            let _ = stderr.read_to_string(&mut out);
            out
        });
        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(st)) => break st,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ClientError::Timeout);
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(ClientError::Transient(e.to_string())),
            }
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(ClientError::Transient(format!("exit {status}: {}", err.trim())));
        }
        String::from_utf8(out).map_err(|_| ClientError::Fatal("response is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl TextClient for Echo {
        fn generate(&self, prompt: &str) -> std::result::Result<String, ClientError> {
            Ok(prompt.to_string())
        }
    }

    struct FailOn(&'static str);
    impl TextClient for FailOn {
        fn generate(&self, prompt: &str) -> std::result::Result<String, ClientError> {
            if prompt.contains(self.0) {
                Err(ClientError::Timeout)
            } else {
                Ok("ok".into())
            }
        }
    }

    fn items(n: usize) -> Vec<SourceText> {
        (0..n)
            .map(|i| SourceText {
                id: format!("q{i}"),
                text: format!("statement number {i}"),
            })
            .collect()
    }

    fn fast() -> EnrichConfig {
        EnrichConfig {
            retry: RetryPolicy {
                max_attempts: 3,
                initial_backoff: Duration::ZERO,
                multiplier: 2.0,
            },
            max_in_flight: 4,
        }
    }

    #[test]
    fn echo_returns_prompts_in_order() {
        let it = items(9);
        let out = enrich_statements(&it, &Echo, &fast());
        assert!(out.failures.is_empty());
        for (r, s) in out.records.iter().zip(&it) {
            let p = build_enrichment_prompt(&s.text).unwrap();
            assert_eq!(r.source_id, s.id);
            assert_eq!(r.text, p);
            assert_eq!(r.prompt_sha256, sha256_hex(&p));
        }
    }

    #[test]
    fn failure_is_isolated() {
        let out = enrich_statements(&items(5), &FailOn("number 2"), &fast());
        assert_eq!(out.records.len(), 4);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].id, "q2");
        assert!(matches!(Error::from(out.failures[0].clone()), Error::ItemFailed { .. }));
    }

    #[test]
    fn backoff_grows_geometrically() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
    }

    #[test]
    fn command_client_round_trip() {
        let c = CommandClient {
            command: "tr a-z A-Z".into(),
            timeout: Duration::from_secs(10),
        };
        assert_eq!(c.generate("abc").unwrap(), "ABC");
        let slow = CommandClient {
            command: "sleep 5".into(),
            timeout: Duration::from_millis(50),
        };
        assert_eq!(slow.generate("x"), Err(ClientError::Timeout));
        let bad = CommandClient {
            command: "exit 3".into(),
            timeout: Duration::from_secs(10),
        };
        assert!(matches!(bad.generate("x"), Err(ClientError::Transient(_))));
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Statement ingestion, negation, synthetic corpora, calibration sets and
//! enrichment prompts.

mod calibration;
mod enrich;
mod prompt;
mod statements;
mod synthetic;
mod tokenizer;

pub use calibration::{build_calibration, load_token_source, CalibrationSet, CalibrationSpec, Provenance, Source, MIN_SEQ_LEN};
pub use enrich::{
    enrich_statements, load_source_texts, ClientError, CommandClient, EnrichConfig, EnrichOutcome, EnrichedRecord,
    FailedItem, RetryPolicy, SourceText, TextClient, ENRICH_CMD_ENV,
};
pub use prompt::{build_enrichment_prompt, build_fewshot_prompt, sha256_hex};
pub use statements::{
    load_statements, negate, parse_statements, statements_to_jsonl, validate_statements, with_negations,
    NegationRule, NegationRules, Statement, StatementFormat,
};
pub use synthetic::{gen_synthetic_corpus, topic_name, SyntheticConfig, SyntheticCorpus, SyntheticStatement};
pub use tokenizer::{ToyTokenizer, BYTE_TOKENS};

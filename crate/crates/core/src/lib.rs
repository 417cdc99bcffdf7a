//! Train small decoder-only language models on child-directed-speech-style
//! text and probe them with a mutual-exclusivity evaluation battery.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: sentence-per-line corpora, a synthetic naming-episode
//!   generator, and discourse repetition statistics.
//! - [`tokenizer`]: character-level BPE with atomic nonce tokens.
//! - [`model`]: a GPT-2 style decoder with hand-written backprop, AdamW,
//!   perplexity and teacher-forced scoring.
//! - [`battery`]: the suppression, context-dependence and dose-response
//!   tracks.
//! - [`stats`]: exact sign and signed-rank tests, Kendall and Spearman
//!   rank correlations, OLS and bootstrap slope intervals.
//! - [`orchestrator`]: grid runs with cached checkpoints and hypothesis
//!   verdicts.
//! - [`report`]: CSV tables and hand-emitted SVG figures.

pub mod battery;
pub mod corpus;
pub mod error;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod selftest;
pub mod stats;
pub mod tokenizer;
mod util;

pub use corpus::{Corpus, CorpusStats, Sentence, SynthParams};
pub use error::{Error, Result};
pub use model::{Checkpoint, ModelConfig, TrainConfig};
pub use stats::TestResult;
pub use tokenizer::{TokenId, Vocab};

//! Sliding-window repetition folding with knots, the word encoding of the
//! result, report framing, and BOUND tuning.

mod greedy;
mod report;
mod tune;
mod wire;

pub use greedy::{greedy_compress, greedy_compress_counted, knot_expand, Token, DEFAULT_BOUND, MAX_KNOT_REPS};
pub use report::{seal, unseal, Compressor, Report, ReportHeader, UnsealLimits, HEADER_LEN, MAGIC, VERSION};
pub use tune::{parse_measurements, tune_bound, BoundChoice, ProgramMeasurements, TuneError};
pub use wire::{decode_words, encode_tokens, TAG_CALL, TAG_DST, TAG_KNOT, TAG_SRC};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CondenseError {
    #[error("BOUND must be in 2..=255, got {0}")]
    BadBound(u32),
    #[error("corrupt report: {0}")]
    Corrupt(String),
    #[error("unknown compressor id {0}")]
    UnknownCompressor(u8),
    #[error("report exceeds limit: {0}")]
    TooLarge(String),
}

pub(crate) fn corrupt(msg: impl Into<String>) -> CondenseError {
    CondenseError::Corrupt(msg.into())
}

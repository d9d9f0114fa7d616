//! querygen-core: a desk-scale generative query recommendation pipeline.
//!
//! The crate covers the full loop for pre-search hint query recommendation:
//!
//! 1. [`behavior_log`] — synthetic user behavior corpora and session
//!    aggregation (exposure-level "direct" sessions, day-level "think"
//!    sessions).
//! 2. [`sample_builder`] — interest-guided label re-ranking and the direct /
//!    think training datasets.
//! 3. [`prompt_codec`] — compressed special-token prompt encoding and
//!    trigger/query/format output segmentation.
//! 4. [`text_metrics`] — ROUGE-L, length/format checks and repetition
//!    penalties that back rewards and evaluation.
//! 5. [`ctr_model`] — a daily-retrained logistic click predictor plus the
//!    simulated user-feedback loop.
//! 6. [`reward_engine`] — per-slot query rewards, sequence rewards and
//!    trigger rewards with scaling/clipping.
//! 7. [`policy`] — a small exactly-differentiable autoregressive policy with
//!    sampling, per-token log-probs/entropies and analytic gradients.
//! 8. [`il_grpo`] — list-level SFT loss and interest-aware list GRPO: dual
//!    (per-query-slot + sequence) advantages, trigger advantage routing,
//!    entropy-adaptive clipping, difficulty filtering, daily train cycle.
//! 9. [`serving`] — nearline u2q cache and the real-time x2q trigger index.
//! 10. [`eval`] / [`pipeline`] / [`config`] — offline metrics and end-to-end
//!     orchestration used by the CLI and the acceptance suite.

pub mod behavior_log;
pub mod config;
pub mod ctr_model;
pub mod eval;
pub mod il_grpo;
pub mod pipeline;
pub mod policy;
pub mod prompt_codec;
pub mod reward_engine;
pub mod sample_builder;
pub mod serving;
pub mod text_metrics;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite gradient at {0}")]
    NonFiniteGradient(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

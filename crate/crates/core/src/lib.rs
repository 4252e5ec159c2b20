//! uhead: pretraining, evaluation and deployment of feed-forward uncertainty
//! heads on cached frozen embeddings.
//!
//! The toolkit implements decoupled loss prediction: a small MLP head is
//! trained to predict, from an embedding alone, how much task loss the frozen
//! model that produced the embedding suffered on that input. The predicted
//! loss is the uncertainty estimate. Because backbones stay frozen and
//! embeddings are cached to disk up front, pretraining a head is cheap,
//! deterministic, and independent of whatever produced the embeddings.
//!
//! Module map:
//! - [`head`]: the MLP uncertainty head, its forward/backward and checkpoints
//! - [`losses`]: task cross-entropy and the ranking / regression objectives
//! - [`optim`]: AdamW, SGD with momentum, warmup+cosine schedule
//! - [`cache`]: the on-disk embedding cache and classifier heads
//! - [`synth`]: synthetic oracle datasets with closed-form Bayes risk
//! - [`trainer`]: the deterministic training loop
//! - [`eval`]: AUROC-based metrics, retrieval correctness, robustness sweeps
//! - [`retrieval`]: uncertainty-gated database cleaning and safe retrieval
//! - [`viz`]: exact t-SNE layout and SVG scatter rendering
//! - [`config`] / [`cli`]: run-configuration files and the command-line tool

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod head;
pub mod losses;
pub mod matrix;
pub mod optim;
pub mod retrieval;
pub mod seeding;
pub mod synth;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
pub use matrix::Matrix;

//! Few-shot group preference modeling.
//!
//! A small transformer reads a handful of `(viewpoint embedding, preference)`
//! pairs from one group and predicts that group's answer distribution for
//! unseen survey questions. The crate carries everything needed to train and
//! score it without external ML frameworks:
//!
//! - [`numcore`]: dense tensors, a reverse-mode tape and Adam.
//! - [`model`]: token packing, attention masks and the preference transformer.
//! - [`data`]: embedding and group dataset files, question-atomic splits.
//! - [`synth`]: seeded synthetic preference worlds.
//! - [`metrics`]: Wasserstein and Jensen-Shannon alignment scores.
//! - [`train`]: episodic meta-training and held-out group evaluation.
//! - [`baselines`]: uniform, reward-regression and context-mean comparators.
//! - [`report`]: alignment reports and plot-ready CSV tables.

pub mod baselines;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod par;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

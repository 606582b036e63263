//! Reinforcement learning for mask-free defect classification at desk scale.
//!
//! The crate trains a small featurized softmax policy to emit structured
//! `<think>/<answer>` verdicts over synthetic imbalanced corpora, using
//! group-relative advantage normalization, a binary format reward, a
//! confidence-shaped focal reward with class-dependent scaling, and
//! KL-regularized gradient-ascent updates. An evaluation harness scores
//! emissions with strict parsing, accuracy, macro F1, and per-object
//! reports.
//!
//! Modules:
//! - [`protocol`] — prompt template rendering and strict response parsing.
//! - [`corpus`] — synthetic imbalanced datasets, manifest files, imbalance stats.
//! - [`rewards`] — format reward, focal reward, class scaling, aggregation.
//! - [`policy`] — the toy softmax policy with exact log-probability gradients.
//! - [`grpo`] — group statistics, advantages, KL, surrogate objective, training loop.
//! - [`eval`] — greedy prediction, confusion accounting, accuracy/F1, reports.
//! - [`cli`] — config files, subcommand implementations, sweeps.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod protocol;
pub mod rewards;
pub mod seeds;

pub use corpus::{Dataset, ImbalanceStats, Sample, Split};
pub use protocol::{Label, MalformedReason, ParsedResponse};

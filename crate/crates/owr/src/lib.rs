//! Desk-scale open-world recognition engine.
//!
//! Prototype-based classification with rejection of unknown classes,
//! online-updated class means and rejection threshold, incremental class
//! learning with exemplar rehearsal and feature distillation, plus the
//! shallow nearest-class-mean / nearest-non-outlier baselines — all driven
//! by an incremental protocol with pluggable label oracles.
//!
//! The crate is organized bottom-up:
//!
//! - [`embedding`] — trainable dense feature extractor with explicit
//!   forward/backward passes, SGD-with-momentum, frozen snapshots
//! - [`prototypes`] — per-class running means and probability scores
//! - [`rejection`] — dynamic threshold and the open-set prediction rule
//! - [`losses`] — classification + distillation objective and gradients
//! - [`baselines`] — NCM with a learned linear metric, and shallow NNO
//! - [`memory`] / [`sampler`] — exemplar memory and the ratio batch sampler
//! - [`oracle`] — ground-truth, noisy-web and interactive label oracles
//! - [`protocol`] — the incremental driver and open/closed-world evaluation
//! - [`dataset`] / [`synthetic`] / [`config`] / [`metrics`] /
//!   [`checkpoint`] — ingestion, benchmark generation, configuration,
//!   metrics logging and persistence

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod oracle;
pub mod protocol;
pub mod prototypes;
pub mod rejection;
pub mod rng;
pub mod sampler;
pub mod synthetic;

pub use config::RunConfig;
pub use dataset::{ClassId, Dataset, LabeledSample, OpenWorldSplit};
pub use error::{Error, Result};
pub use protocol::{evaluate, EvalReport, OwrState};
pub use rejection::Prediction;

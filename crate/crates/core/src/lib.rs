//! Modeling, prediction, and analysis of execution-time variation in staged
//! perception pipelines.
//!
//! The crate works on per-frame latency traces with stage breakdowns and
//! intermediate counts ([`trace`]). On top of those it provides variation
//! statistics ([`stats`]), a proposal-driven end-to-end latency model with
//! dynamic calibration ([`predictor`]), deadline-policy analysis
//! ([`deadline`]), two seeded middleware simulators ([`transport`],
//! [`fusion`]), and a ground-truth synthetic trace generator ([`synth`]).
//!
//! Everything seeded is deterministic: the same inputs and seed reproduce
//! results bit-exactly.

pub mod deadline;
pub mod error;
pub mod fusion;
pub mod kv;
pub mod predictor;
pub mod stats;
pub mod synth;
pub mod trace;
pub mod transport;

pub use error::{Error, Result};

//! Fault diagnosis for multivariate vibration time series.
//!
//! The pipeline trains a temporal graph convolutional forecaster on
//! healthy data, scores test data by per-node squared prediction error
//! against a threshold calibrated from training scores, and condenses
//! threshold exceedances into a statistically smoothed severity index
//! `μ_t + m σ_t`.
//!
//! Modules follow the processing order: [`numerics`] is the
//! differentiable matrix kernel, [`graph`] builds normalized
//! adjacencies, [`model`] is the forecaster, [`training`] fits it,
//! [`detection`] scores and flags, [`severity`] tracks the index, and
//! [`pipeline`] wires ingestion through report emission.

pub mod detection;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod severity;
pub mod training;

pub use detection::AnomalySeries;
pub use graph::{Graph, GraphSpec, NormalizedGraph};
pub use model::{ModelDims, TgcnModel};
pub use numerics::Matrix;
pub use severity::{SeveritySeries, SeverityState};
pub use training::Dataset;

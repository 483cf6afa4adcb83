//! Prediction-error anomaly scoring and threshold calibration.
//!
//! Every node gets its own score sequence and its own threshold: the
//! maximum score the trained model produced on the training windows.
//! A fault is flagged on strict exceedance, so the calibration set
//! itself is flag-free by construction.

use thiserror::Error;

use crate::graph::NormalizedGraph;
use crate::model::{ModelError, TgcnModel};
use crate::numerics::Matrix;
use crate::training::WindowSample;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("cannot calibrate a threshold from an empty window set")]
    NoWindows,
    #[error("threshold is not set; calibrate before flagging")]
    ThresholdUnset,
    #[error("threshold has {got} entries for {nodes} nodes")]
    ThresholdLength { got: usize, nodes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-node anomaly scores aligned to target time indices, with the
/// calibrated per-node threshold once set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    scores: Matrix,
    timestamps: Vec<usize>,
    threshold: Option<Vec<f64>>,
}

impl AnomalySeries {
    /// Wraps an `N x T` score matrix with its aligned time indices.
    /// The threshold starts unset.
    pub fn new(scores: Matrix, timestamps: Vec<usize>) -> Self {
        assert_eq!(
            timestamps.len(),
            scores.cols(),
            "one timestamp per score column"
        );
        AnomalySeries {
            scores,
            timestamps,
            threshold: None,
        }
    }

    /// `N x T` score matrix; column `t` holds every node's score at
    /// `timestamps[t]`.
    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn timestamps(&self) -> &[usize] {
        &self.timestamps
    }

    pub fn n_nodes(&self) -> usize {
        self.scores.rows()
    }

    pub fn threshold(&self) -> Option<&[f64]> {
        self.threshold.as_deref()
    }

    pub fn set_threshold(&mut self, tau: Vec<f64>) -> Result<(), DetectError> {
        if tau.len() != self.n_nodes() {
            return Err(DetectError::ThresholdLength {
                got: tau.len(),
                nodes: self.n_nodes(),
            });
        }
        self.threshold = Some(tau);
        Ok(())
    }

    /// Indicator sequences: `I_t = 1` iff `S_t > τ`, strict.
    pub fn flag(&self) -> Result<Vec<Vec<bool>>, DetectError> {
        let tau = self.threshold.as_ref().ok_or(DetectError::ThresholdUnset)?;
        let mut out = Vec::with_capacity(self.n_nodes());
        for (node, &tau_node) in tau.iter().enumerate() {
            out.push(
                (0..self.scores.cols())
                    .map(|t| self.scores.get(node, t) > tau_node)
                    .collect(),
            );
        }
        Ok(out)
    }
}

/// Scores a window set: per node and window, the squared error of the
/// one-step-ahead forecast against the observed target.
pub fn score(
    model: &TgcnModel,
    graph: &NormalizedGraph,
    windows: &[WindowSample],
) -> Result<AnomalySeries, DetectError> {
    let n = model.dims.n_nodes;
    let mut scores = Matrix::zeros(n, windows.len());
    let mut timestamps = Vec::with_capacity(windows.len());
    for (t, sample) in windows.iter().enumerate() {
        let pred = model.forward(graph, &sample.inputs)?;
        for node in 0..n {
            let err = pred.get(node, 0) - sample.target.get(node, 0);
            scores.set(node, t, err * err);
        }
        timestamps.push(sample.target_index);
    }
    Ok(AnomalySeries {
        scores,
        timestamps,
        threshold: None,
    })
}

/// Calibrates `τ_i` as the maximum training-window score of node `i`.
pub fn calibrate_threshold(
    model: &TgcnModel,
    graph: &NormalizedGraph,
    train_windows: &[WindowSample],
) -> Result<Vec<f64>, DetectError> {
    if train_windows.is_empty() {
        return Err(DetectError::NoWindows);
    }
    let series = score(model, graph, train_windows)?;
    let mut tau = Vec::with_capacity(series.n_nodes());
    for node in 0..series.n_nodes() {
        let max = (0..series.scores.cols())
            .map(|t| series.scores.get(node, t))
            .fold(f64::NEG_INFINITY, f64::max);
        tau.push(max);
    }
    if tau.iter().all(|&v| v == 0.0) {
        log::warn!("degenerate calibration: every training score is zero");
    }
    Ok(tau)
}

//! Preprocessing, sliding windows, MSE loss, Adam, and the epoch loop.
//!
//! Splits are contiguous in time: train first, then validation, then
//! test, since healthy behavior dominates the start of run-to-failure
//! records. Normalization statistics come from the train segment only
//! and are applied to every segment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

use crate::graph::NormalizedGraph;
use crate::model::{forward_on_tape, ModelError, TgcnModel, TgcnVars};
use crate::numerics::{Matrix, ShapeError, Tape, TapeError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("split fraction `{field}` = {value} must lie in (0,1)")]
    FractionOutOfRange { field: &'static str, value: f64 },
    #[error("train_frac {train} + test_frac {test} must sum to 1")]
    SplitDoesNotPartition { train: f64, test: f64 },
    #[error("{t} time steps is too short; need at least window + 2 = {min}")]
    TooShort { t: usize, min: usize },
    #[error("{segment} segment has {len} steps, need more than window = {window}")]
    SegmentTooShort {
        segment: &'static str,
        len: usize,
        window: usize,
    },
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Chronological split fractions. `val_frac_of_train` is carved from
/// the end of the train allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac_of_train: f64,
    pub test_frac: f64,
}

impl SplitSpec {
    pub fn new(
        train_frac: f64,
        val_frac_of_train: f64,
        test_frac: f64,
    ) -> Result<Self, TrainError> {
        let spec = SplitSpec {
            train_frac,
            val_frac_of_train,
            test_frac,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (field, value) in [
            ("train_frac", self.train_frac),
            ("val_frac_of_train", self.val_frac_of_train),
            ("test_frac", self.test_frac),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(TrainError::FractionOutOfRange { field, value });
            }
        }
        if (self.train_frac + self.test_frac - 1.0).abs() > 1e-9 {
            return Err(TrainError::SplitDoesNotPartition {
                train: self.train_frac,
                test: self.test_frac,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Segment {
    fn name(self) -> &'static str {
        match self {
            Segment::Train => "train",
            Segment::Val => "validation",
            Segment::Test => "test",
        }
    }
}

/// Per-channel train-segment statistics used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    /// True when the train segment was constant and the divisor was
    /// replaced by 1.
    pub constant: bool,
}

/// Z-scored feature matrix with chronological segment boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    window: usize,
    train: Range<usize>,
    val: Range<usize>,
    test: Range<usize>,
    channel_stats: Vec<ChannelStats>,
}

/// One training example: `window` consecutive `N x 1` inputs and the
/// column that immediately follows them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub inputs: Vec<Matrix>,
    pub target: Matrix,
    /// Global column index of the target in the full feature matrix.
    pub target_index: usize,
}

/// Z-scores every channel with statistics from the train segment.
///
/// A constant train channel (std below 1e-8) keeps its mean shift but
/// divides by 1, with a warning; downstream math stays finite.
pub fn normalize_dataset(
    raw: &Matrix,
    split: &SplitSpec,
    window: usize,
) -> Result<Dataset, TrainError> {
    split.validate()?;
    let t = raw.cols();
    let min = window + 2;
    if t < min {
        return Err(TrainError::TooShort { t, min });
    }

    let train_total = (t as f64 * split.train_frac).floor() as usize;
    let n_val = (train_total as f64 * split.val_frac_of_train).floor() as usize;
    let n_train = train_total - n_val;
    let train = 0..n_train;
    let val = n_train..train_total;
    let test = train_total..t;

    let n = raw.rows();
    let mut channel_stats = Vec::with_capacity(n);
    let mut features = Matrix::zeros(n, t);
    for node in 0..n {
        let seg: Vec<f64> = train.clone().map(|c| raw.get(node, c)).collect();
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / seg.len() as f64;
        let std = var.sqrt();
        let constant = std < 1e-8;
        if constant {
            log::warn!("channel {node} is constant over the train segment; dividing by 1");
        }
        let divisor = if constant { 1.0 } else { std };
        let stats = ChannelStats {
            mean,
            std: divisor,
            constant,
        };
        for c in 0..t {
            features.set(node, c, (raw.get(node, c) - mean) / divisor);
        }
        channel_stats.push(stats);
    }

    Ok(Dataset {
        features,
        window,
        train,
        val,
        test,
        channel_stats,
    })
}

impl Dataset {
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_steps(&self) -> usize {
        self.features.cols()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channel_stats(&self) -> &[ChannelStats] {
        &self.channel_stats
    }

    pub fn segment_range(&self, segment: Segment) -> Range<usize> {
        match segment {
            Segment::Train => self.train.clone(),
            Segment::Val => self.val.clone(),
            Segment::Test => self.test.clone(),
        }
    }

    fn column(&self, c: usize) -> Matrix {
        let mut out = Matrix::zeros(self.n_nodes(), 1);
        for r in 0..self.n_nodes() {
            out.set(r, 0, self.features.get(r, c));
        }
        out
    }
}

/// Stride-1 windows of one segment, chronological. No window or target
/// crosses the segment boundary.
pub fn make_windows(ds: &Dataset, segment: Segment) -> Result<Vec<WindowSample>, TrainError> {
    let range = ds.segment_range(segment);
    let w = ds.window;
    if range.len() <= w {
        return Err(TrainError::SegmentTooShort {
            segment: segment.name(),
            len: range.len(),
            window: w,
        });
    }
    let count = range.len() - w;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = range.start + i;
        let inputs = (start..start + w).map(|c| ds.column(c)).collect();
        out.push(WindowSample {
            inputs,
            target: ds.column(start + w),
            target_index: start + w,
        });
    }
    Ok(out)
}

/// Train-segment windows in a seeded shuffled order.
pub fn make_windows_shuffled(
    ds: &Dataset,
    segment: Segment,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WindowSample>, TrainError> {
    let mut windows = make_windows(ds, segment)?;
    windows.shuffle(rng);
    Ok(windows)
}

/// Mean over all entries of the squared prediction error.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64, TrainError> {
    let diff = pred.sub(target)?;
    Ok(diff.hadamard(&diff)?.reduce_mean())
}

pub(crate) fn mse_on_tape(pred: &Var, target: &Var) -> Result<Var, TapeError> {
    let diff = pred.sub(target)?;
    Ok(diff.hadamard(&diff)?.reduce_mean())
}

/// Adam hyperparameters; defaults follow the usual 0.9/0.999/1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_learning_rate(0.001)
    }
}

/// Bias-corrected Adam moments, one pair per parameter matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let m_corr = 1.0 - c.beta1.powi(t);
        let v_corr = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.as_mut_slice();
            let gd = g.as_slice();
            let md = m.as_mut_slice();
            let vd = v.as_mut_slice();
            for i in 0..pd.len() {
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / m_corr;
                let v_hat = vd[i] / v_corr;
                pd[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}

/// Knobs for [`train`]. Gradient clipping is off unless requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Loss history plus a convergence report that never alters the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Relative train-loss change over the last five epochs.
    pub final_rel_change: f64,
    pub converged: bool,
}

/// Runs the fixed-epoch training loop: seeded shuffle each epoch,
/// gradient accumulation per batch, one Adam step per batch. The last
/// partial batch is kept.
pub fn train(
    model: &mut TgcnModel,
    graph: &NormalizedGraph,
    ds: &Dataset,
    opts: &TrainOptions,
) -> Result<TrainReport, TrainError> {
    if opts.epochs == 0 {
        return Err(TrainError::ZeroEpochs);
    }
    if opts.batch_size == 0 {
        return Err(TrainError::ZeroBatchSize);
    }
    let val_windows = make_windows(ds, Segment::Val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new(opts.adam, &model.params_flat());

    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let windows = make_windows_shuffled(ds, Segment::Train, &mut rng)?;
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in windows.chunks(opts.batch_size).enumerate() {
            let batch_mse = run_batch(model, graph, &mut adam, batch, opts.grad_clip)?;
            if !batch_mse.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_mse,
                });
            }
            loss_sum += batch_mse * batch.len() as f64;
        }
        let train_mse = loss_sum / windows.len() as f64;
        let val_mse = evaluate_mse(model, graph, &val_windows)?;
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
    }

    let final_rel_change = if history.len() >= 6 {
        let last = history[history.len() - 1].train_mse;
        let earlier = history[history.len() - 6].train_mse;
        (last - earlier).abs() / earlier.abs().max(1e-12)
    } else {
        f64::INFINITY
    };
    Ok(TrainReport {
        history,
        final_rel_change,
        converged: final_rel_change < 1e-3,
    })
}

/// Accumulates gradients over one batch, averages them, and applies one
/// Adam step. Returns the batch-mean MSE computed before the update.
fn run_batch(
    model: &mut TgcnModel,
    graph: &NormalizedGraph,
    adam: &mut AdamState,
    batch: &[WindowSample],
    grad_clip: Option<f64>,
) -> Result<f64, TrainError> {
    let mut params = model.params_flat();
    let mut grad_acc: Vec<Matrix> = params
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let mut loss_sum = 0.0;

    for sample in batch {
        let tape = Tape::new();
        let flat_vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
        let vars = TgcnVars::from_flat(&model.dims, &flat_vars);
        let a_hat = tape.var(graph.a_hat().clone());
        let inputs: Vec<Var> = sample.inputs.iter().map(|x| tape.var(x.clone())).collect();
        let pred = forward_on_tape(&tape, &vars, &model.dims, &a_hat, &inputs)?;
        let target = tape.var(sample.target.clone());
        let loss = mse_on_tape(&pred, &target)?;
        loss_sum += loss.value().scalar();
        let grads = loss.backward()?;
        for (acc, var) in grad_acc.iter_mut().zip(&flat_vars) {
            let g = grads.get(var);
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for g in &mut grad_acc {
        for v in g.as_mut_slice() {
            *v *= scale;
        }
    }
    if let Some(clip) = grad_clip {
        clip_global_norm(&mut grad_acc, clip);
    }
    adam.step(&mut params, &grad_acc);
    model.set_params_flat(&params);
    Ok(loss_sum * scale)
}

fn clip_global_norm(grads: &mut [Matrix], clip: f64) {
    let norm_sq: f64 = grads.iter().flat_map(|g| g.as_slice()).map(|v| v * v).sum();
    let norm = norm_sq.sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads {
            for v in g.as_mut_slice() {
                *v *= scale;
            }
        }
    }
}

/// Mean window MSE of the model over a window set, without training.
pub fn evaluate_mse(
    model: &TgcnModel,
    graph: &NormalizedGraph,
    windows: &[WindowSample],
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for sample in windows {
        let pred = model.forward(graph, &sample.inputs)?;
        sum += mse_loss(&pred, &sample.target)?;
    }
    Ok(sum / windows.len().max(1) as f64)
}

/// MSE of the persistence forecaster (next value = current value) over
/// a window set; the sanity floor a trained model must beat.
pub fn persistence_mse(windows: &[WindowSample]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for sample in windows {
        let last = sample.inputs.last().expect("windows are nonempty");
        sum += mse_loss(last, &sample.target)?;
    }
    Ok(sum / windows.len().max(1) as f64)
}

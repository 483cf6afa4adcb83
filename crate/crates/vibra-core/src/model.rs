//! The T-GCN forecaster: a graph convolution feeding GRU gates per
//! node, stacked in recurrent layers, with a shared linear readout that
//! predicts the next time step for every node.
//!
//! All forward math is recorded on a [`Tape`], so training gets
//! gradients from the exact arithmetic inference runs.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NormalizedGraph;
use crate::numerics::{Matrix, Tape, TapeError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("window has {got} steps, model expects {expected}")]
    WrongWindowLength { expected: usize, got: usize },
    #[error("input step {step} is {rows}x{cols}, expected {n}x1")]
    BadInputShape {
        step: usize,
        rows: usize,
        cols: usize,
        n: usize,
    },
    #[error("graph has {graph_nodes} nodes, model was built for {model_nodes}")]
    GraphMismatch {
        graph_nodes: usize,
        model_nodes: usize,
    },
}

/// Model dimensions, fixed at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_nodes: usize,
    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
}

/// One graph convolution: `apply(x) = σ(Â x W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weight: Matrix,
}

/// GRU gate parameters. Gate weights act on `[gcn_out, h_prev]` rows,
/// so each weight is `(F_gcn + H) x H` and each bias is `1 x H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_cand: Matrix,
    pub b_update: Matrix,
    pub b_reset: Matrix,
    pub b_cand: Matrix,
    pub hidden_dim: usize,
}

/// One recurrent layer: graph convolution feeding a GRU cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub gcn: GcnLayer,
    pub gru: GruCell,
}

/// Gate activations of one GRU step, exposed for inspection.
#[derive(Debug, Clone)]
pub struct GruGates {
    pub update: Matrix,
    pub reset: Matrix,
    pub candidate: Matrix,
    pub hidden: Matrix,
}

/// Stacked T-GCN with a node-shared linear readout.
///
/// Serialized form is the checkpoint format: dims, seed, then every
/// weight matrix in declared order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgcnModel {
    pub dims: ModelDims,
    pub seed: u64,
    pub layers: Vec<LayerParams>,
    pub readout_weight: Matrix,
    pub readout_bias: Matrix,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

impl TgcnModel {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    ///
    /// Layer 1's convolution projects the single input feature to `H`;
    /// deeper layers project `H` to `H`. Gate inputs are the
    /// convolution output concatenated with the hidden state.
    pub fn init(seed: u64, dims: ModelDims) -> Self {
        assert!(dims.n_nodes >= 1, "n_nodes must be positive");
        assert!(dims.window >= 1, "window must be positive");
        assert!(dims.hidden >= 1, "hidden must be positive");
        assert!(dims.layers >= 1, "layer count must be positive");

        let h = dims.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let f_in = if l == 0 { 1 } else { h };
            let gcn = GcnLayer {
                weight: glorot(&mut rng, f_in, h, f_in, h),
            };
            let gate_rows = 2 * h;
            let gru = GruCell {
                w_update: glorot(&mut rng, gate_rows, h, gate_rows, h),
                w_reset: glorot(&mut rng, gate_rows, h, gate_rows, h),
                w_cand: glorot(&mut rng, gate_rows, h, gate_rows, h),
                b_update: Matrix::zeros(1, h),
                b_reset: Matrix::zeros(1, h),
                b_cand: Matrix::zeros(1, h),
                hidden_dim: h,
            };
            layers.push(LayerParams { gcn, gru });
        }
        let readout_weight = glorot(&mut rng, h, 1, h, 1);
        TgcnModel {
            dims,
            seed,
            layers,
            readout_weight,
            readout_bias: Matrix::zeros(1, 1),
        }
    }

    /// One-step-ahead forecast from a window of `N x 1` inputs. Hidden
    /// states start at zero; nothing carries across windows.
    pub fn forward(
        &self,
        graph: &NormalizedGraph,
        window: &[Matrix],
    ) -> Result<Matrix, ModelError> {
        self.check_inputs(graph, window)?;
        let tape = Tape::new();
        let vars = self.register(&tape);
        let a_hat = tape.var(graph.a_hat().clone());
        let inputs: Vec<Var> = window.iter().map(|x| tape.var(x.clone())).collect();
        let pred = forward_on_tape(&tape, &vars, &self.dims, &a_hat, &inputs)?;
        Ok(pred.value())
    }

    fn check_inputs(&self, graph: &NormalizedGraph, window: &[Matrix]) -> Result<(), ModelError> {
        if graph.n_nodes() != self.dims.n_nodes {
            return Err(ModelError::GraphMismatch {
                graph_nodes: graph.n_nodes(),
                model_nodes: self.dims.n_nodes,
            });
        }
        if window.len() != self.dims.window {
            return Err(ModelError::WrongWindowLength {
                expected: self.dims.window,
                got: window.len(),
            });
        }
        for (step, x) in window.iter().enumerate() {
            if x.shape() != (self.dims.n_nodes, 1) {
                return Err(ModelError::BadInputShape {
                    step,
                    rows: x.rows(),
                    cols: x.cols(),
                    n: self.dims.n_nodes,
                });
            }
        }
        Ok(())
    }

    /// Registers every parameter on `tape` in the canonical flat order.
    pub fn register(&self, tape: &Tape) -> TgcnVars {
        let vars: Vec<Var> = self
            .params_flat()
            .into_iter()
            .map(|m| tape.var(m))
            .collect();
        TgcnVars::from_flat(&self.dims, &vars)
    }

    /// Parameters in canonical order: per layer `w_gcn, w_update,
    /// w_reset, w_cand, b_update, b_reset, b_cand`, then the readout
    /// weight and bias. Training state and gradients share this order.
    pub fn params_flat(&self) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.push(layer.gcn.weight.clone());
            out.push(layer.gru.w_update.clone());
            out.push(layer.gru.w_reset.clone());
            out.push(layer.gru.w_cand.clone());
            out.push(layer.gru.b_update.clone());
            out.push(layer.gru.b_reset.clone());
            out.push(layer.gru.b_cand.clone());
        }
        out.push(self.readout_weight.clone());
        out.push(self.readout_bias.clone());
        out
    }

    /// Writes back parameters in the same order `params_flat` returns.
    pub fn set_params_flat(&mut self, params: &[Matrix]) {
        assert_eq!(params.len(), self.n_params(), "flat parameter count");
        let mut it = params.iter().cloned();
        for layer in &mut self.layers {
            layer.gcn.weight = it.next().unwrap();
            layer.gru.w_update = it.next().unwrap();
            layer.gru.w_reset = it.next().unwrap();
            layer.gru.w_cand = it.next().unwrap();
            layer.gru.b_update = it.next().unwrap();
            layer.gru.b_reset = it.next().unwrap();
            layer.gru.b_cand = it.next().unwrap();
        }
        self.readout_weight = it.next().unwrap();
        self.readout_bias = it.next().unwrap();
    }

    pub fn n_params(&self) -> usize {
        self.layers.len() * 7 + 2
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(std::io::Error::from)
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let file = std::fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(std::io::Error::from)
    }
}

impl GcnLayer {
    /// `σ(Â x W)`.
    pub fn apply(&self, graph: &NormalizedGraph, x: &Matrix) -> Result<Matrix, ModelError> {
        let tape = Tape::new();
        let a_hat = tape.var(graph.a_hat().clone());
        let xv = tape.var(x.clone());
        let wv = tape.var(self.weight.clone());
        Ok(gcn_on_tape(&a_hat, &xv, &wv)?.value())
    }
}

impl GruCell {
    /// One gate step; returns the new hidden state.
    pub fn step(&self, gcn_out: &Matrix, h_prev: &Matrix) -> Result<Matrix, ModelError> {
        Ok(self.gates(gcn_out, h_prev)?.hidden)
    }

    /// One gate step with every intermediate activation exposed.
    pub fn gates(&self, gcn_out: &Matrix, h_prev: &Matrix) -> Result<GruGates, ModelError> {
        let tape = Tape::new();
        let vars = GruVars {
            w_update: tape.var(self.w_update.clone()),
            w_reset: tape.var(self.w_reset.clone()),
            w_cand: tape.var(self.w_cand.clone()),
            b_update: tape.var(self.b_update.clone()),
            b_reset: tape.var(self.b_reset.clone()),
            b_cand: tape.var(self.b_cand.clone()),
        };
        let g = tape.var(gcn_out.clone());
        let h = tape.var(h_prev.clone());
        let (u, r, c, h_next) = gru_on_tape(&vars, &g, &h)?;
        Ok(GruGates {
            update: u.value(),
            reset: r.value(),
            candidate: c.value(),
            hidden: h_next.value(),
        })
    }
}

/// Tape handles for every model parameter, in canonical flat order.
pub struct TgcnVars {
    pub layers: Vec<LayerVars>,
    pub readout_weight: Var,
    pub readout_bias: Var,
}

pub struct LayerVars {
    pub w_gcn: Var,
    pub gru: GruVars,
}

pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_cand: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_cand: Var,
}

impl TgcnVars {
    /// Reassembles structured handles from a flat slice laid out like
    /// [`TgcnModel::params_flat`].
    pub fn from_flat(dims: &ModelDims, vars: &[Var]) -> TgcnVars {
        assert_eq!(vars.len(), dims.layers * 7 + 2, "flat var count");
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let base = l * 7;
            layers.push(LayerVars {
                w_gcn: vars[base].clone(),
                gru: GruVars {
                    w_update: vars[base + 1].clone(),
                    w_reset: vars[base + 2].clone(),
                    w_cand: vars[base + 3].clone(),
                    b_update: vars[base + 4].clone(),
                    b_reset: vars[base + 5].clone(),
                    b_cand: vars[base + 6].clone(),
                },
            });
        }
        TgcnVars {
            layers,
            readout_weight: vars[vars.len() - 2].clone(),
            readout_bias: vars[vars.len() - 1].clone(),
        }
    }
}

fn gcn_on_tape(a_hat: &Var, x: &Var, w: &Var) -> Result<Var, TapeError> {
    Ok(a_hat.matmul(x)?.matmul(w)?.sigmoid())
}

fn gru_on_tape(
    vars: &GruVars,
    gcn_out: &Var,
    h_prev: &Var,
) -> Result<(Var, Var, Var, Var), TapeError> {
    let gate_in = gcn_out.concat_features(h_prev)?;
    let u = gate_in
        .matmul(&vars.w_update)?
        .add_row_bias(&vars.b_update)?
        .sigmoid();
    let r = gate_in
        .matmul(&vars.w_reset)?
        .add_row_bias(&vars.b_reset)?
        .sigmoid();
    let cand_in = gcn_out.concat_features(&r.hadamard(h_prev)?)?;
    let c = cand_in
        .matmul(&vars.w_cand)?
        .add_row_bias(&vars.b_cand)?
        .tanh();
    let h = u.hadamard(h_prev)?.add(&u.one_minus().hadamard(&c)?)?;
    Ok((u, r, c, h))
}

/// Records the full window forward pass and returns the `N x 1`
/// prediction node. Layer 1 consumes the raw inputs; each deeper layer
/// consumes the hidden sequence of the layer below.
pub fn forward_on_tape(
    tape: &Tape,
    vars: &TgcnVars,
    dims: &ModelDims,
    a_hat: &Var,
    window: &[Var],
) -> Result<Var, TapeError> {
    let zero_h = Matrix::zeros(dims.n_nodes, dims.hidden);
    let mut hidden: Vec<Var> = (0..dims.layers).map(|_| tape.var(zero_h.clone())).collect();

    for x_t in window {
        let mut layer_input = x_t.clone();
        for (l, layer) in vars.layers.iter().enumerate() {
            let conv = gcn_on_tape(a_hat, &layer_input, &layer.w_gcn)?;
            let (_, _, _, h) = gru_on_tape(&layer.gru, &conv, &hidden[l])?;
            hidden[l] = h.clone();
            layer_input = h;
        }
    }

    let last = &hidden[dims.layers - 1];
    last.matmul(&vars.readout_weight)?
        .add_row_bias(&vars.readout_bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, GraphSpec};

    fn pair_graph() -> NormalizedGraph {
        Graph::from_spec(&GraphSpec::Preset {
            preset: "pair2".into(),
        })
        .unwrap()
        .normalize()
    }

    fn tiny_dims() -> ModelDims {
        ModelDims {
            n_nodes: 2,
            window: 2,
            hidden: 3,
            layers: 2,
        }
    }

    #[test]
    fn gcn_zero_preactivation_gives_half() {
        // Edgeless graph, W = I, x = 0: σ(0) everywhere.
        let g = Graph::from_edges(3, &[]).unwrap().normalize();
        let layer = GcnLayer {
            weight: Matrix::identity(3),
        };
        let out = layer.apply(&g, &Matrix::zeros(3, 3)).unwrap();
        for v in out.as_slice() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn gcn_fanjet_hand_value() {
        // Â all 0.5, x = [2, 0]^T, W = [[1]]: Âx = [1, 1]^T, σ(1) ≈ 0.731.
        let g = pair_graph();
        let layer = GcnLayer {
            weight: Matrix::from_vec(1, 1, vec![1.0]),
        };
        let x = Matrix::column(&[2.0, 0.0]);
        let out = layer.apply(&g, &x).unwrap();
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((out.get(0, 0) - sig1).abs() < 1e-12);
        assert!((out.get(1, 0) - sig1).abs() < 1e-12);
    }

    #[test]
    fn gcn_zero_weight_gives_half() {
        let g = pair_graph();
        let layer = GcnLayer {
            weight: Matrix::zeros(1, 4),
        };
        let x = Matrix::column(&[3.0, -7.0]);
        let out = layer.apply(&g, &x).unwrap();
        for v in out.as_slice() {
            assert_eq!(*v, 0.5);
        }
    }

    fn zero_cell(f_gcn: usize, h: usize) -> GruCell {
        GruCell {
            w_update: Matrix::zeros(f_gcn + h, h),
            w_reset: Matrix::zeros(f_gcn + h, h),
            w_cand: Matrix::zeros(f_gcn + h, h),
            b_update: Matrix::zeros(1, h),
            b_reset: Matrix::zeros(1, h),
            b_cand: Matrix::zeros(1, h),
            hidden_dim: h,
        }
    }

    #[test]
    fn gru_all_zero_parameters() {
        let cell = zero_cell(2, 2);
        let gates = cell
            .gates(&Matrix::zeros(3, 2), &Matrix::zeros(3, 2))
            .unwrap();
        for v in gates.update.as_slice() {
            assert_eq!(*v, 0.5);
        }
        for v in gates.reset.as_slice() {
            assert_eq!(*v, 0.5);
        }
        for v in gates.candidate.as_slice() {
            assert_eq!(*v, 0.0);
        }
        for v in gates.hidden.as_slice() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn gru_saturated_update_gate_keeps_previous_state() {
        // b_update → +∞ makes u → 1, so h = h_prev.
        let h = 2;
        let mut cell = zero_cell(1, h);
        cell.b_update = Matrix::from_rows(&[vec![40.0, 40.0]]);
        let h_prev = Matrix::from_rows(&[vec![0.3, -0.8], vec![1.2, 0.05]]);
        let out = cell.step(&Matrix::zeros(2, 1), &h_prev).unwrap();
        assert!(out.max_abs_diff(&h_prev) < 1e-6);
    }

    #[test]
    fn gru_suppressed_update_gate_takes_candidate() {
        // b_update → −∞ makes u → 0, so h = c.
        let h = 2;
        let mut cell = zero_cell(1, h);
        cell.b_update = Matrix::from_rows(&[vec![-40.0, -40.0]]);
        cell.b_cand = Matrix::from_rows(&[vec![0.7, -0.2]]);
        let h_prev = Matrix::from_rows(&[vec![0.3, -0.8], vec![1.2, 0.05]]);
        let gates = cell.gates(&Matrix::zeros(2, 1), &h_prev).unwrap();
        assert!(gates.hidden.max_abs_diff(&gates.candidate) < 1e-6);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let dims = tiny_dims();
        let mut model = TgcnModel::init(1, dims);
        let zeros = model
            .params_flat()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect::<Vec<_>>();
        model.set_params_flat(&zeros);
        let g = pair_graph();
        let window = vec![Matrix::column(&[0.4, -0.9]), Matrix::column(&[1.0, 2.0])];
        let pred = model.forward(&g, &window).unwrap();
        assert_eq!(pred, Matrix::zeros(2, 1));
    }

    #[test]
    fn prediction_shape_is_n_by_1() {
        for window_len in [1usize, 3, 5] {
            let dims = ModelDims {
                n_nodes: 2,
                window: window_len,
                hidden: 4,
                layers: 2,
            };
            let model = TgcnModel::init(3, dims);
            let g = pair_graph();
            let window: Vec<Matrix> = (0..window_len)
                .map(|t| Matrix::column(&[t as f64, -(t as f64)]))
                .collect();
            let pred = model.forward(&g, &window).unwrap();
            assert_eq!(pred.shape(), (2, 1));
        }
    }

    #[test]
    fn wrong_window_length_rejected() {
        let model = TgcnModel::init(1, tiny_dims());
        let g = pair_graph();
        let window = vec![Matrix::column(&[0.0, 0.0])];
        let err = model.forward(&g, &window).unwrap_err();
        assert_eq!(
            err,
            ModelError::WrongWindowLength {
                expected: 2,
                got: 1
            }
        );
    }

    #[test]
    fn forward_is_deterministic() {
        let model = TgcnModel::init(11, tiny_dims());
        let g = pair_graph();
        let window = vec![Matrix::column(&[0.2, 0.3]), Matrix::column(&[-0.1, 0.8])];
        let a = model.forward(&g, &window).unwrap();
        let b = model.forward(&g, &window).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = TgcnModel::init(42, tiny_dims());
        let b = TgcnModel::init(42, tiny_dims());
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = TgcnModel::init(1, tiny_dims());
        let b = TgcnModel::init(2, tiny_dims());
        assert_ne!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn glorot_weights_within_bound() {
        let model = TgcnModel::init(7, tiny_dims());
        let h = 3.0;
        for layer in &model.layers {
            let f_in = layer.gcn.weight.rows() as f64;
            let bound = (6.0 / (f_in + h)).sqrt();
            for v in layer.gcn.weight.as_slice() {
                assert!(v.abs() <= bound);
            }
            let gate_bound = (6.0 / (2.0 * h + h)).sqrt();
            for w in [&layer.gru.w_update, &layer.gru.w_reset, &layer.gru.w_cand] {
                for v in w.as_slice() {
                    assert!(v.abs() <= gate_bound);
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = TgcnModel::init(9, tiny_dims());
        model.save(&path).unwrap();
        let loaded = TgcnModel::load(&path).unwrap();
        assert_eq!(model, loaded);

        let g = pair_graph();
        let window = vec![Matrix::column(&[0.5, 0.1]), Matrix::column(&[0.9, -0.4])];
        assert_eq!(
            model.forward(&g, &window).unwrap(),
            loaded.forward(&g, &window).unwrap()
        );
    }

    #[test]
    fn node_permutation_equivariance() {
        // Swapping the two nodes of the pair graph (Â is invariant) must
        // swap the prediction rows, since all weights are node-shared.
        let dims = tiny_dims();
        let model = TgcnModel::init(5, dims);
        let g = pair_graph();
        let window = vec![Matrix::column(&[0.7, -0.3]), Matrix::column(&[0.1, 0.9])];
        let swapped: Vec<Matrix> = window
            .iter()
            .map(|x| Matrix::column(&[x.get(1, 0), x.get(0, 0)]))
            .collect();
        let pred = model.forward(&g, &window).unwrap();
        let pred_swapped = model.forward(&g, &swapped).unwrap();
        assert!((pred.get(0, 0) - pred_swapped.get(1, 0)).abs() < 1e-10);
        assert!((pred.get(1, 0) - pred_swapped.get(0, 0)).abs() < 1e-10);
    }
}

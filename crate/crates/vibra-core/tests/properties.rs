//! Property tests for the algebraic invariants of the kernel, the
//! graph normalization, the model gates, and the severity index.

use proptest::prelude::*;

use vibra_core::graph::Graph;
use vibra_core::model::{GruCell, ModelDims, TgcnModel};
use vibra_core::numerics::{grad_check, stable_sigmoid, Matrix, Tape};
use vibra_core::severity::{batch_severity, SeverityState};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data))
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..5, 1usize..5, 1usize..5)
}

proptest! {
    #[test]
    fn matmul_transpose_identity((m, k, n) in dims(), seed in 0u64..1000) {
        let mut gen = seed;
        let mut next = || {
            gen = gen.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (gen >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let a = Matrix::from_vec(m, k, (0..m * k).map(|_| next()).collect());
        let b = Matrix::from_vec(k, n, (0..k * n).map(|_| next()).collect());
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn sigmoid_and_tanh_ranges(xs in proptest::collection::vec(-18.0f64..18.0, 1..64)) {
        // Strictness holds while the tail stays above f64 epsilon; tanh
        // rounds to exactly 1 near x = 18.7, sigmoid near 36.7, so the
        // sampled grid stops at 18.
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut prev_sig = f64::NEG_INFINITY;
        let mut prev_tanh = f64::NEG_INFINITY;
        for x in sorted {
            let s = stable_sigmoid(x);
            let t = x.tanh();
            prop_assert!(s > 0.0 && s < 1.0);
            prop_assert!(t > -1.0 && t < 1.0);
            prop_assert!(s >= prev_sig);
            prop_assert!(t >= prev_tanh);
            prev_sig = s;
            prev_tanh = t;
        }
    }

    #[test]
    fn adjoint_linearity(x in matrix(3, 3), w1 in matrix(3, 2), w2 in matrix(3, 3)) {
        // Gradient of f + g w.r.t. x equals the sum of the separate
        // gradients, entrywise.
        let f = |tape: &Tape, xv: &vibra_core::numerics::Var| {
            let w = tape.var(w1.clone());
            xv.matmul(&w).unwrap().sigmoid().reduce_mean()
        };
        let g = |tape: &Tape, xv: &vibra_core::numerics::Var| {
            let w = tape.var(w2.clone());
            xv.matmul(&w).unwrap().tanh().hadamard(xv).unwrap().reduce_mean()
        };

        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let combined = f(&tape, &xv).add(&g(&tape, &xv)).unwrap();
        let joint = combined.backward().unwrap().get(&xv);

        let tape_f = Tape::new();
        let xf = tape_f.var(x.clone());
        let gf = f(&tape_f, &xf).backward().unwrap().get(&xf);
        let tape_g = Tape::new();
        let xg = tape_g.var(x.clone());
        let gg = g(&tape_g, &xg).backward().unwrap().get(&xg);

        let summed = gf.add(&gg).unwrap();
        prop_assert!(joint.max_abs_diff(&summed) <= 1e-12);
    }

    #[test]
    fn random_graph_spectral_radius_bounded(n in 2usize..21, seed in 0u64..500) {
        // Power iteration on Â: the dominant eigenvalue magnitude never
        // exceeds 1 beyond rounding.
        let mut gen = seed.wrapping_add(1);
        let mut coin = || {
            gen = gen.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (gen >> 32) & 1 == 1
        };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if coin() {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::from_edges(n, &edges).unwrap();
        let a_hat = graph.normalize().a_hat().clone();

        let mut v = Matrix::from_vec(n, 1, (0..n).map(|i| 1.0 + (i as f64) * 0.1).collect());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let next = a_hat.matmul(&v).unwrap();
            let norm: f64 = next.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = next.scale(1.0 / norm);
            let av = a_hat.matmul(&v).unwrap();
            lambda = v
                .as_slice()
                .iter()
                .zip(av.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        prop_assert!(lambda.abs() <= 1.0 + 1e-9, "spectral radius estimate {lambda}");
    }

    #[test]
    fn severity_streaming_equals_batch(
        scores in proptest::collection::vec(0.0f64..4.0, 1..200),
        tau in 0.1f64..2.0,
        m in 0.0f64..4.0,
    ) {
        let batch = batch_severity(&scores, tau, m).unwrap();
        let mut state = SeverityState::new(tau, m).unwrap();
        for (s, expected) in scores.iter().zip(&batch.points) {
            let p = state.update(*s).unwrap();
            prop_assert!((p.mu - expected.mu).abs() <= 1e-12);
            prop_assert!((p.sigma - expected.sigma).abs() <= 1e-12);
            prop_assert!((p.index - expected.index).abs() <= 1e-12);
        }
    }

    #[test]
    fn severity_index_bounds_mean(
        scores in proptest::collection::vec(0.0f64..4.0, 1..200),
        tau in 0.1f64..2.0,
        m in 0.0f64..4.0,
    ) {
        let series = batch_severity(&scores, tau, m).unwrap();
        for p in &series.points {
            prop_assert!(p.mu >= 0.0);
            prop_assert!(p.index >= p.mu);
        }
    }

    #[test]
    fn severity_translation_coupling(
        scores in proptest::collection::vec(0.0f64..4.0, 1..100),
        tau in 0.1f64..2.0,
        delta in 0.01f64..3.0,
    ) {
        // Shifting every score and the threshold by the same delta leaves
        // each exceedance, hence the whole index trajectory, unchanged.
        let base = batch_severity(&scores, tau, 2.0).unwrap();
        let shifted_scores: Vec<f64> = scores.iter().map(|s| s + delta).collect();
        let shifted = batch_severity(&shifted_scores, tau + delta, 2.0).unwrap();
        for (a, b) in base.points.iter().zip(&shifted.points) {
            prop_assert!((a.mu - b.mu).abs() <= 1e-9);
            prop_assert!((a.index - b.index).abs() <= 1e-9);
        }
    }

    #[test]
    fn severity_ignores_subthreshold_scores(
        below in proptest::collection::vec(0.0f64..1.0, 1..50),
    ) {
        // Scores at or below tau leave n and mu untouched.
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        state.update(3.0).unwrap();
        let n_before = state.fault_count();
        let mut last = None;
        for s in below {
            last = Some(state.update(s).unwrap());
        }
        prop_assert_eq!(state.fault_count(), n_before);
        prop_assert!((last.unwrap().mu - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn gru_hidden_state_stays_convex_bounded(seed in 0u64..200, steps in 1usize..12) {
        // h_t is a convex blend of h_{t-1} and a tanh candidate, so its
        // sup-norm never exceeds max(previous sup-norm, 1).
        let dims = ModelDims { n_nodes: 3, window: 1, hidden: 4, layers: 1 };
        let model = TgcnModel::init(seed, dims);
        let cell: &GruCell = &model.layers[0].gru;
        let mut gen = seed.wrapping_add(17);
        let mut next = || {
            gen = gen.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (gen >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let mut h = Matrix::from_vec(3, 4, (0..12).map(|_| next()).collect());
        for _ in 0..steps {
            let gcn_out = Matrix::from_vec(3, 4, (0..12).map(|_| next()).collect());
            let bound = h.as_slice().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
            h = cell.step(&gcn_out, &h).unwrap();
            let new_norm = h.as_slice().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            prop_assert!(new_norm <= bound + 1e-12);
        }
    }
}

#[test]
fn gate_ranges_hold_over_1000_draws() {
    let dims = ModelDims {
        n_nodes: 2,
        window: 1,
        hidden: 3,
        layers: 1,
    };
    let mut lcg = 0x2545F4914F6CDD1Du64;
    let mut next = || {
        lcg = lcg
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (lcg >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
    };
    for seed in 0..1000u64 {
        let model = TgcnModel::init(seed, dims);
        let cell = &model.layers[0].gru;
        let gcn_out = Matrix::from_vec(2, 3, (0..6).map(|_| next()).collect());
        let h_prev = Matrix::from_vec(2, 3, (0..6).map(|_| next()).collect());
        let gates = cell.gates(&gcn_out, &h_prev).unwrap();
        for v in gates.update.as_slice().iter().chain(gates.reset.as_slice()) {
            assert!(*v > 0.0 && *v < 1.0, "gate {v} out of (0,1)");
        }
        for v in gates.candidate.as_slice() {
            assert!(*v > -1.0 && *v < 1.0, "candidate {v} out of (-1,1)");
        }
    }
}

#[test]
fn severity_smoothing_dampens_fluctuations() {
    // On a noisy sequence with many exceedances, the index moves less
    // step-to-step than the raw exceedance does.
    let mut lcg = 99u64;
    let mut next = || {
        lcg = lcg
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (lcg >> 11) as f64 / (1u64 << 53) as f64
    };
    let tau = 0.5;
    let scores: Vec<f64> = (0..300).map(|_| next() * 2.0).collect();
    let series = batch_severity(&scores, tau, 2.0).unwrap();

    let exceedance: Vec<f64> = scores.iter().map(|s| (s - tau).max(0.0)).collect();
    let detected: Vec<usize> = (1..scores.len()).filter(|&t| scores[t] > tau).collect();
    assert!(detected.len() >= 20, "need enough exceedances");

    let mean_abs = |f: &dyn Fn(usize) -> f64| {
        detected.iter().map(|&t| f(t).abs()).sum::<f64>() / detected.len() as f64
    };
    let d_index = mean_abs(&|t| series.points[t].index - series.points[t - 1].index);
    let d_exc = mean_abs(&|t| exceedance[t] - exceedance[t - 1]);
    assert!(
        d_index <= d_exc,
        "index increments {d_index} should not exceed raw increments {d_exc}"
    );
}

#[test]
fn tape_gradients_match_finite_differences_on_random_expressions() {
    // Five seeded draws through a mixed expression with every primitive.
    for seed in 0..5u64 {
        let mut lcg = seed.wrapping_add(3);
        let mut next = || {
            lcg = lcg
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (lcg >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let params = [
            Matrix::from_vec(2, 3, (0..6).map(|_| next()).collect()),
            Matrix::from_vec(3, 2, (0..6).map(|_| next()).collect()),
            Matrix::from_vec(1, 2, (0..2).map(|_| next()).collect()),
        ];
        let report = grad_check(
            |tape, vars| {
                let prod = vars[0].matmul(&vars[1]).unwrap();
                let gated = prod.sigmoid().hadamard(&prod.tanh()).unwrap();
                let biased = gated.add_row_bias(&vars[2]).unwrap();
                let wide = biased.concat_features(&prod).unwrap();
                let back = wide.transpose();
                let mixed = back.scale(0.5).add_scalar(0.1).one_minus();
                let extra = tape.var(Matrix::from_vec(1, 1, vec![0.25]));
                mixed.reduce_mean().add(&extra).unwrap()
            },
            &params,
            1e-5,
            1e-5,
        );
        assert!(
            report.pass,
            "seed {seed}: max rel err {}",
            report.max_rel_err()
        );
    }
}

//! Central finite-difference check for tape gradients.

use super::matrix::Matrix;
use super::tape::{Tape, Var};

/// Worst-entry comparison between analytic and numeric gradients of one
/// parameter matrix.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param: usize,
    pub max_rel_err: f64,
    pub worst_entry: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
}

/// Outcome of [`grad_check`]. Failures are carried, never panicked.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Compares tape gradients of a scalar function against central finite
/// differences `(f(p + h) - f(p - h)) / 2h` per parameter entry.
///
/// The relative error uses a unit floor, `|a - n| / max(|a|, |n|, 1)`,
/// so near-zero gradient entries are compared absolutely. The closure
/// must rebuild the loss from scratch on the tape it is handed; it is
/// re-invoked for every perturbed evaluation.
pub fn grad_check<F>(f: F, params: &[Matrix], step: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let eval = |perturbed: &[Matrix]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.var(p.clone())).collect();
        f(&tape, &vars).value().scalar()
    };

    let analytic: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
        let loss = f(&tape, &vars);
        let grads = loss.backward().expect("grad_check loss must be scalar");
        vars.iter().map(|v| grads.get(v)).collect()
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst = ParamCheck {
            param: pi,
            max_rel_err: 0.0,
            worst_entry: (0, 0),
            analytic: grad.get(0, 0),
            numeric: grad.get(0, 0),
            pass: true,
        };
        for r in 0..grad.rows() {
            for c in 0..grad.cols() {
                let base = work[pi].get(r, c);
                work[pi].set(r, c, base + step);
                let plus = eval(&work);
                work[pi].set(r, c, base - step);
                let minus = eval(&work);
                work[pi].set(r, c, base);

                let numeric = (plus - minus) / (2.0 * step);
                let a = grad.get(r, c);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                if rel > worst.max_rel_err {
                    worst.max_rel_err = rel;
                    worst.worst_entry = (r, c);
                    worst.analytic = a;
                    worst.numeric = numeric;
                }
            }
        }
        worst.pass = worst.max_rel_err <= tol;
        checks.push(worst);
    }

    let pass = checks.iter().all(|c| c.pass);
    GradCheckReport {
        params: checks,
        tol,
        pass,
    }
}

//! Define-by-run reverse-mode differentiation over matrix primitives.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles in
//! execution order, so the record is topologically sorted by
//! construction. [`Var::backward`] seeds the adjoint of a scalar loss
//! with one and replays the record in reverse, accumulating adjoints by
//! the chain rule. Nodes the loss never touched keep a zero adjoint.
//!
//! A tape is single-threaded; distinct tapes are independent.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

use super::matrix::{stable_sigmoid, Matrix, ShapeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("backward requires a scalar (1x1) loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
}

/// Records primitives applied to its variables; replayed by `backward`.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one recorded node. Cloning is cheap and aliases the node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

/// Adjoints produced by one backward pass.
pub struct Gradients {
    tape: Tape,
}

impl std::fmt::Debug for Gradients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gradients")
            .field("nodes", &self.tape.len())
            .finish()
    }
}

#[derive(Default)]
struct TapeInner {
    values: Vec<Matrix>,
    ops: Vec<OpRecord>,
    adjoints: Vec<Matrix>,
}

struct OpRecord {
    out: usize,
    op: Op,
}

enum Op {
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Hadamard { a: usize, b: usize },
    AddRowBias { a: usize, bias: usize },
    ConcatCols { a: usize, b: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Transpose { a: usize },
    ReduceMean { a: usize },
    ReduceMax { a: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize },
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a leaf value and returns its handle.
    pub fn var(&self, value: Matrix) -> Var {
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.values.push(value);
            inner.values.len() - 1
        };
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, value: Matrix, op: Op) -> Var {
        let out = {
            let mut inner = self.inner.borrow_mut();
            inner.values.push(value);
            let out = inner.values.len() - 1;
            inner.ops.push(OpRecord { out, op });
            out
        };
        Var {
            tape: self.clone(),
            id: out,
        }
    }
}

impl Var {
    /// Copy of this node's forward value.
    pub fn value(&self) -> Matrix {
        self.tape.inner.borrow().values[self.id].clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().values[self.id].shape()
    }

    fn same_tape(&self, other: &Var) -> Tape {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "variables recorded on different tapes"
        );
        self.tape.clone()
    }

    fn binary(
        &self,
        other: &Var,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix, ShapeError>,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var, TapeError> {
        let tape = self.same_tape(other);
        let value = {
            let inner = tape.inner.borrow();
            f(&inner.values[self.id], &inner.values[other.id])?
        };
        Ok(tape.record(value, op(self.id, other.id)))
    }

    fn unary(&self, f: impl FnOnce(&Matrix) -> Matrix, op: Op) -> Var {
        let value = {
            let inner = self.tape.inner.borrow();
            f(&inner.values[self.id])
        };
        self.tape.record(value, op)
    }

    pub fn matmul(&self, other: &Var) -> Result<Var, TapeError> {
        self.binary(other, Matrix::matmul, |a, b| Op::MatMul { a, b })
    }

    pub fn add(&self, other: &Var) -> Result<Var, TapeError> {
        self.binary(other, Matrix::add, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, other: &Var) -> Result<Var, TapeError> {
        self.binary(other, Matrix::sub, |a, b| Op::Sub { a, b })
    }

    pub fn hadamard(&self, other: &Var) -> Result<Var, TapeError> {
        self.binary(other, Matrix::hadamard, |a, b| Op::Hadamard { a, b })
    }

    /// Adds a `1 x cols` bias row to every row.
    pub fn add_row_bias(&self, bias: &Var) -> Result<Var, TapeError> {
        self.binary(bias, Matrix::add_row_bias, |a, bias| Op::AddRowBias {
            a,
            bias,
        })
    }

    /// Stacks `other` to the right along the feature axis.
    pub fn concat_features(&self, other: &Var) -> Result<Var, TapeError> {
        self.binary(other, Matrix::concat_cols, |a, b| Op::ConcatCols { a, b })
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(|m| m.map(stable_sigmoid), Op::Sigmoid { a: self.id })
    }

    pub fn tanh(&self) -> Var {
        self.unary(|m| m.map(f64::tanh), Op::Tanh { a: self.id })
    }

    pub fn transpose(&self) -> Var {
        self.unary(Matrix::transpose, Op::Transpose { a: self.id })
    }

    /// Mean over all entries, as a `1 x 1` node.
    pub fn reduce_mean(&self) -> Var {
        self.unary(
            |m| Matrix::from_vec(1, 1, vec![m.reduce_mean()]),
            Op::ReduceMean { a: self.id },
        )
    }

    /// Maximum entry, as a `1 x 1` node. Backward routes to the first argmax.
    pub fn reduce_max(&self) -> Var {
        self.unary(
            |m| Matrix::from_vec(1, 1, vec![m.reduce_max()]),
            Op::ReduceMax { a: self.id },
        )
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(|m| m.scale(c), Op::Scale { a: self.id, c })
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(|m| m.map(|v| v + c), Op::AddScalar { a: self.id })
    }

    /// `1 - self` elementwise; the complement gate in a GRU convex blend.
    pub fn one_minus(&self) -> Var {
        self.scale(-1.0).add_scalar(1.0)
    }

    /// Runs the chain rule backward from this scalar node.
    pub fn backward(&self) -> Result<Gradients, TapeError> {
        self.tape.inner.borrow_mut().backward_from(self.id)?;
        Ok(Gradients {
            tape: self.tape.clone(),
        })
    }
}

impl Gradients {
    /// Adjoint of `var`; zero matrix when the loss never touched it.
    pub fn get(&self, var: &Var) -> Matrix {
        self.tape.inner.borrow().adjoints[var.id].clone()
    }
}

impl TapeInner {
    fn backward_from(&mut self, out: usize) -> Result<(), TapeError> {
        let (rows, cols) = self.values[out].shape();
        if (rows, cols) != (1, 1) {
            return Err(TapeError::NonScalarLoss { rows, cols });
        }
        self.adjoints = self
            .values
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        self.adjoints[out].set(0, 0, 1.0);

        for record in self.ops.iter().rev() {
            let g = self.adjoints[record.out].clone();
            match record.op {
                Op::MatMul { a, b } => {
                    let da = g
                        .matmul(&self.values[b].transpose())
                        .expect("recorded shapes");
                    let db = self.values[a]
                        .transpose()
                        .matmul(&g)
                        .expect("recorded shapes");
                    accumulate(&mut self.adjoints[a], &da);
                    accumulate(&mut self.adjoints[b], &db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut self.adjoints[a], &g);
                    accumulate(&mut self.adjoints[b], &g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut self.adjoints[a], &g);
                    accumulate(&mut self.adjoints[b], &g.scale(-1.0));
                }
                Op::Hadamard { a, b } => {
                    let da = g.hadamard(&self.values[b]).expect("recorded shapes");
                    let db = g.hadamard(&self.values[a]).expect("recorded shapes");
                    accumulate(&mut self.adjoints[a], &da);
                    accumulate(&mut self.adjoints[b], &db);
                }
                Op::AddRowBias { a, bias } => {
                    accumulate(&mut self.adjoints[a], &g);
                    let mut col_sum = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            col_sum.set(0, c, col_sum.get(0, c) + g.get(r, c));
                        }
                    }
                    accumulate(&mut self.adjoints[bias], &col_sum);
                }
                Op::ConcatCols { a, b } => {
                    let a_cols = self.values[a].cols();
                    let (da, db) = split_cols(&g, a_cols);
                    accumulate(&mut self.adjoints[a], &da);
                    accumulate(&mut self.adjoints[b], &db);
                }
                Op::Sigmoid { a } => {
                    let y = &self.values[record.out];
                    let dy = y.map(|v| v * (1.0 - v));
                    let da = g.hadamard(&dy).expect("recorded shapes");
                    accumulate(&mut self.adjoints[a], &da);
                }
                Op::Tanh { a } => {
                    let y = &self.values[record.out];
                    let dy = y.map(|v| 1.0 - v * v);
                    let da = g.hadamard(&dy).expect("recorded shapes");
                    accumulate(&mut self.adjoints[a], &da);
                }
                Op::Transpose { a } => {
                    accumulate(&mut self.adjoints[a], &g.transpose());
                }
                Op::ReduceMean { a } => {
                    let (rows, cols) = self.values[a].shape();
                    let w = g.scalar() / (rows * cols) as f64;
                    let da = Matrix::from_vec(rows, cols, vec![w; rows * cols]);
                    accumulate(&mut self.adjoints[a], &da);
                }
                Op::ReduceMax { a } => {
                    let idx = self.values[a].argmax();
                    self.adjoints[a].as_mut_slice()[idx] += g.scalar();
                }
                Op::Scale { a, c } => {
                    accumulate(&mut self.adjoints[a], &g.scale(c));
                }
                Op::AddScalar { a } => {
                    accumulate(&mut self.adjoints[a], &g);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adjoint: &mut Matrix, delta: &Matrix) {
    for (dst, src) in adjoint.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *dst += src;
    }
}

fn split_cols(g: &Matrix, a_cols: usize) -> (Matrix, Matrix) {
    let rows = g.rows();
    let b_cols = g.cols() - a_cols;
    let mut da = Matrix::zeros(rows, a_cols);
    let mut db = Matrix::zeros(rows, b_cols);
    for r in 0..rows {
        for c in 0..a_cols {
            da.set(r, c, g.get(r, c));
        }
        for c in 0..b_cols {
            db.set(r, c, g.get(r, a_cols + c));
        }
    }
    (da, db)
}

//! Matrix kernel with reverse-mode differentiation and a
//! finite-difference gradient checker. Double precision throughout.

mod grad_check;
mod matrix;
mod tape;

pub use grad_check::{grad_check, GradCheckReport, ParamCheck};
pub use matrix::{stable_sigmoid, Matrix, ShapeError};
pub use tape::{Gradients, Tape, TapeError, Var};

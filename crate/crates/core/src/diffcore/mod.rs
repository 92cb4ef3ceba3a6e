//! Minimal reverse-mode differentiation over dense `f64` vectors.

mod check;
pub mod kernels;
mod params;
mod tape;

pub use check::{grad_check, relative_error, CoordError, Eval, GradCheckReport};
pub use params::{GradientTable, ParamId, ParamStore, Tensor};
pub use tape::{LinearMap, NodeId, Tape};

pub(crate) use tape::sigmoid;

//! Dense tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
pub mod kernels;
mod tensor;

pub use adam::AdamState;
pub use params::{Bound, ParamId, ParamStore};
pub use graph::{Graph, Var, LAYER_NORM_EPS, LOG_CLAMP};
pub use tensor::{Scalar, Tensor};

/// Default negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

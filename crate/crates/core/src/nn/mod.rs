//! Minimal tensor autodiff and optimizer used by the ordering network.

mod graph;
mod params;

pub use graph::{Gradients, Graph, Tensor, Var, LAYER_NORM_EPS};
pub use params::{Adam, Bound, ParamId, ParamStore};

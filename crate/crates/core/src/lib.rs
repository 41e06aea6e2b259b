//! Multi-relational graph diffusion with parallel retention (MGDPR) for
//! next-day stock trend classification.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph_generation;
pub mod market_data;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use tensor::{Gradients, Graph, Tensor, TensorError, Var};

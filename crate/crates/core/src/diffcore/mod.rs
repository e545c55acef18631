//! Tape-based reverse-mode differentiation over dense `f32` arrays.
//!
//! A [`Graph`] records every operation whose inputs are tracked. Constants
//! (tensors created with [`Tensor::new`]) never touch a graph, so evaluating
//! a model on constants is a plain forward pass.
//!
//! ```
//! use cvtrf::diffcore::{Graph, Tensor};
//!
//! let graph = Graph::new();
//! let x = graph.leaf(Tensor::scalar(3.0));
//! let loss = x.mul(&x).unwrap();
//! let grads = graph.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap(), &[6.0]);
//! ```

mod adam;
mod broadcast;
mod gemm;
mod graph;
pub(crate) mod module;
mod ops;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph};
pub use module::{attach, collect_grads, param_count, Linear, Module};
pub use tensor::Tensor;

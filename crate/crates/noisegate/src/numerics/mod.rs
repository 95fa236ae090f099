//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! This is the numerical substrate for the rest of the crate: row-major
//! tensors, a tape-style [`Graph`] that records every operation as it runs,
//! and a [`Graph::backward`] pass that walks the tape in reverse and
//! accumulates gradients for every recorded node.
//!
//! Design points:
//!
//! * **Generic scalar type.** Everything is generic over [`Scalar`]
//!   (`f32` or `f64`). Training runs in `f32`; gradient checking rebuilds the
//!   same model in `f64`, where central differences are trustworthy.
//! * **Pure ops.** An operation never mutates its inputs; each op allocates
//!   its output. Recorded values stay valid for the lifetime of the graph,
//!   which is what makes the reverse pass simple and the engine easy to test.
//! * **Eager shape checks.** Every op validates ranks and extents up front
//!   and reports both offending shapes in the error.

mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use graph::{AttnMask, Grads, Graph, TensorId};
pub use scalar::{Dtype, Scalar};
pub use tensor::Tensor;

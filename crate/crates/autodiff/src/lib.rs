//! Reverse-mode automatic differentiation over a dynamic computation graph.
//!
//! A [`Graph`] is built node by node (define-then-run). Leaves are
//! placeholders bound at [`Graph::forward`] time, trainable parameters read
//! from a [`ParamStore`], or constants. After a forward pass every node's
//! value is cached and [`Graph::backward`] returns the gradient of a scalar
//! output with respect to every leaf.
//!
//! Besides the numeric adjoints, most element-wise and vector primitives can
//! also emit their adjoint *as new graph nodes* through
//! [`Graph::grad_nodes`]. This is what lets an inner gradient-descent loop
//! (for example a penalty correction step) live inside the graph and still be
//! differentiated by the outer training loss.
//!
//! ```
//! use dcil_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.placeholder("x", &[1]);
//! let y = g.mul(x, x);
//! let mut bindings = dcil_autodiff::Bindings::new();
//! bindings.bind(x, Tensor::scalar(3.0));
//! g.forward(&Default::default(), &bindings).unwrap();
//! assert_eq!(g.value(y).unwrap().item(), 9.0);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

mod error;
mod graph;
mod kernels;
mod params;
mod symbolic;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{wrap_angle, Bindings, CustomOp, Gradients, Graph, NodeId};
pub use params::{AdamConfig, Checkpoint, ParamId, ParamSpec, ParamStore};
pub use tensor::Tensor;

//! Scalar expression graphs with reverse-mode differentiation, and Adam.
//!
//! Derivatives are built as ordinary graph nodes, so the output of
//! [`Graph::grad`] can itself be differentiated. This is what lets a loss
//! contain `du/dx` and `d²u/dx²` and still be differentiated with respect to
//! the network parameters.

mod adam;
mod graph;

pub use adam::{AdamConfig, ParamGroup, ParamStore};
pub use graph::{sigmoid, softplus, Bindings, Expr, Graph, Op};

//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! node is created, and [`Graph::backward`] walks the tape in reverse to
//! produce [`Gradients`] for every node that depends on a differentiable leaf.
//! Everything is two-dimensional; scalars are `1×1` matrices.
//!
//! Parameters are borrowed rather than copied, so binding a large embedding
//! table to a graph costs nothing beyond a pointer.

mod graph;
pub mod check;

pub use graph::{Gradients, Graph, Var};

/// Dense row-major matrix used for every node value.
pub type Matrix = ndarray::Array2<f64>;

//! Discrete membrane model on m-regular trees.
//!
//! The field on `V_n` has covariance `G_n = (Δ²_Λ)^{-1}`; its infinite-volume
//! limit has covariance `G(x,y) = Σ_k (k+1) P_x(S_k = y)`. This crate computes
//! both exactly, splits `G_n = Ḡ_n - E_n` through the random walk, samples
//! the fields and evaluates extreme-value statistics of the samples.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classes;
pub mod error;
pub mod excursion;
pub mod export;
pub mod extremes;
pub mod gauss;
pub mod greens;
pub mod linalg;
pub mod operators;
pub mod sampler;
pub mod tree;
pub mod walk;

pub use error::{Error, Result};
pub use tree::{build_tree, RegularTree, TreeParams};

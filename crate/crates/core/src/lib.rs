//! Causal structure learning and conditional moment-matching simulation of
//! structural equation models.
//!
//! The crate is `no_std` with `alloc`. File formats, configuration and the
//! command line live in the `causemm` companion crate.
//!
//! Adjacency matrices use the convention row = child, column = parent:
//! `W[i][j] ≠ 0` is the edge `j → i`, so a linear SEM reads `X = −ξ + W·X`.

#![no_std]
// `!(x > 0.0)` is the NaN-rejecting form used by the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod causalae;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod math;
pub mod mmd;
pub mod rng;
pub mod semgen;
pub mod structlearn;
pub mod tensorcore;

pub use error::{Error, Result};
pub use tensorcore::Tensor;

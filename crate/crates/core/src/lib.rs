//! Allocation-only core of a multi-stream affect recognition pipeline.
//!
//! Per-frame feature streams of heterogeneous width are mapped to a common
//! width by learned affine maps plus sinusoidal positional encoding, joined
//! per frame, fused by a pre-norm transformer encoder and read out by three
//! heads: valence/arousal regression, 8-way expression classification and
//! 12-unit action-unit detection. Everything here runs without `std`; file
//! formats and the command-line tool live in the `affuse` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Shape, Tensor};

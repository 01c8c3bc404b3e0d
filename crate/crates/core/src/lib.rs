//! Discretized Khmaladze transforms.
//!
//! Distributions are approximated on a finite grid of cells, so every operator in
//! the first transform (innovation regression) and the second transform (the
//! norm-preserving rotation between projected Brownian motions) becomes a dense
//! matrix acting on N-vectors. The crate provides:
//!
//! - [`discretization`]: grids, cell probabilities and binning of samples.
//! - [`operators`]: projections, weighted reflections, the embedding `L` and the
//!   rotation `V_K` built as a product of reflections.
//! - [`scores`]: raw and normalized score vectors and the information matrix.
//! - [`processes`]: Brownian motion / projected increments, function-parametric
//!   evaluation and the rotation of one projected process onto another.
//! - [`kt1`]: the regression form of the first transform.
//! - [`multidim`]: two-dimensional grids, the Brownian pillow and colour-blind
//!   symmetrization.
//! - [`gof`]: statistics, Monte-Carlo null tables and the end-to-end test.
//! - [`cli`] and [`verify`]: the command-line surface and the invariant suites.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod discretization;
pub mod error;
pub mod family;
pub mod gof;
pub mod kt1;
pub mod linalg;
pub mod mc;
pub mod multidim;
pub mod operators;
pub mod processes;
pub mod rng;
pub mod scores;
pub mod verify;

pub use error::{Error, Result};

//! Dense numerical substrate: row-major `f64` matrices, a counter-based
//! seedable RNG, the Adam optimizer, and a central-difference gradient oracle.
//!
//! Deliberately minimal — no BLAS, no GPU, no tape. Every gradient elsewhere
//! in this crate is a hand-derived closed form, and [`fd::finite_diff_grad`]
//! is the independent referee that keeps those derivations honest.

pub mod adam;
pub mod fd;
pub mod matrix;
pub mod rng;

pub use adam::AdamState;
pub use fd::finite_diff_grad;
pub use matrix::{dot, Matrix};
pub use rng::{gumbel_draw, gumbel_from_uniform, RngStream};

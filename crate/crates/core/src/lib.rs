//! Find *where* a concept lives in a stack of layered activations, isolate it
//! in a sparse feature dictionary, and subtract it at inference time.
//!
//! The pipeline, end to end:
//!
//! 1. [`actstore`] generates (or loads) per-layer activation slabs for a batch
//!    of labelled instances, optionally with a planted concept direction whose
//!    separability varies across depth — the ground truth everything else is
//!    measured against.
//! 2. [`searchtrain`] runs a bilevel loop: a soft distribution over layers
//!    (Gumbel-Softmax over learnable logits, [`depthsel`]) mixes the layer
//!    slabs into one training stream for a sparse autoencoder ([`sae`]), and
//!    the logits are in turn updated to minimize a contrastive separability
//!    loss plus the reconstruction objective ([`conceptsig`]).
//! 3. The distribution collapses to a single layer `l*`; [`intervene`] erases
//!    the concept there by masked feature subtraction, and [`probe`] measures
//!    what a linear classifier can still recover.
//!
//! Brute-force and stride oracles in [`searchtrain`] retrain one autoencoder
//! per candidate layer, giving an independent answer to compare `l*` (and the
//! cost of finding it) against.
//!
//! Everything is `f64`, hand-differentiated, and deterministic given a seed;
//! [`numkit`] holds the matrix/RNG/Adam/finite-difference substrate.

pub mod actstore;
pub mod conceptsig;
pub mod depthsel;
pub mod error;
pub mod intervene;
pub mod numkit;
pub mod probe;
pub mod sae;
pub mod searchtrain;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{ClearError, Result};

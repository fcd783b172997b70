//! Error taxonomy for the whole pipeline.
//!
//! The classes matter downstream: the CLI maps [`ClearError::Divergence`] to
//! exit code 2 and everything else (bad configs, bad files, bad shapes) to
//! exit code 1, so tests and scripts can tell "you fed it garbage" apart from
//! "the optimization blew up".

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClearError {
    /// Operand shapes do not conform; names both shapes so the message is
    /// actionable without a debugger.
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    /// Invalid configuration or arguments (odd batch sizes, empty prompt
    /// sets, unknown config keys, missing checkpoints, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file is structurally not one of ours: wrong magic, unsupported
    /// version, or a header field that cannot be interpreted.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// A file has the right header but a damaged payload; `offset` is the
    /// byte position where the damage was detected.
    #[error("corrupted file {path} at byte offset {offset}: {detail}")]
    Corrupt {
        path: String,
        offset: u64,
        detail: String,
    },

    /// Training produced a non-finite loss; carries everything needed to
    /// reconstruct the failing iteration.
    #[error("divergence at iteration {iteration}: reconstruction+sparsity loss {l_sae}, contrastive loss {l_con}")]
    Divergence {
        iteration: usize,
        l_sae: f64,
        l_con: f64,
    },

    /// A probed function returned a non-finite value during finite-difference
    /// evaluation; identifies the coordinate being perturbed.
    #[error("non-finite function value while perturbing coordinate {coordinate}: {detail}")]
    Eval { coordinate: usize, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClearError {
    /// Helper for wrapping `std::io::Error` with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ClearError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClearError>;

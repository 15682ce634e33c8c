//! Singing-technique classification from audio, end to end: WAV decoding,
//! multi-resolution spectrograms, an oblong-kernel CNN with optional
//! modulated deformable convolution, class-weighted training with decoupled
//! classifier re-training, and the evaluation metrics.
//!
//! All numerics are hand-written over dense [`Tensor`]s with exact backward
//! passes; there is no autodiff graph. Layers parallelize internally over
//! batch or channel slices with fixed reduction order, so results are
//! bitwise reproducible for any thread count.

pub mod audio;
pub mod checkpoint;
pub mod data;
pub mod deform;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub(crate) mod kernels;
pub mod model;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{AudioError, Error, Result};
pub use scalar::Scalar;
pub use tensor::{GradPair, Tensor};

/// Installs a global rayon pool with `n` threads. `n = 1` is the
/// single-threaded reproducibility mode; results do not depend on the
/// thread count either way. Must be called before any parallel work.
pub fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArg(format!("thread pool: {e}")))
}

//! Semi-blind morphological component analysis (SBMCA).
//!
//! Single-channel separation of a nominally periodic source whose local
//! structure is approximately known (through a dictionary of prototype
//! pulses) from an unknown, structured background. The background is
//! modelled by a dictionary learned from the mixture itself.
//!
//! The crate is organised bottom-up:
//!
//! - [`blocking`]: signals to `m x q` block matrices and back.
//! - [`solvers`]: soft-thresholding, column-wise LASSO, one-step OMP.
//! - [`dictionaries`]: pulse, DCT and identity dictionaries plus file IO.
//! - [`dictlearn`]: the dictionary-learning stage.
//! - [`separators`]: SBMCA, fixed-dictionary MCA and truncated SVD.
//! - [`synth`]: the synthetic pulse-train / background mixture generator.
//! - [`metrics`]: SNR, per-block errors, histograms and grid search.
//! - [`audio`]: WAV and CSV signal IO.

pub mod audio;
pub mod blocking;
pub mod dictionaries;
pub mod dictlearn;
pub mod error;
pub mod metrics;
pub mod persist;
pub mod separators;
pub mod solvers;
pub mod synth;

pub use blocking::{blockify, deblockify, BlockMatrix};
pub use dictionaries::{AtomLabel, Dictionary};
pub use dictlearn::{learn_dictionary, DictLearnOptions, DictLearnOutput};
pub use error::{Error, Result};
pub use separators::{mca_separate, sbmca_separate, truncated_svd_denoise, Init, SbmcaParams, SeparationResult};
pub use solvers::{lasso, omp_one_step, soft_threshold, LassoOptions, SparseCode};

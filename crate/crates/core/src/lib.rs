//! De-speckling and compression of 3-D volumes by low tensor-train rank and
//! low multilinear rank approximation.
//!
//! The pipeline runs an ADMM solver that shrinks the singular values of
//! every unfolding with a Schatten-p thresholding rule, reads off the rank
//! structure of the result, corrects that rank to hit a requested
//! compression ratio, and finally fits a TT (TT-SVD) or Tucker (HOOI) model
//! to the input volume.

pub mod admm;
pub mod decomp;
pub mod error;
pub mod io;
mod linalg;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod prox;
pub mod tensor;

pub use admm::{denoise_ml, denoise_tt, ml_weights, tt_weights, AdmmConfig, AdmmTrace, MlRank, MlRankEstimate, TtRank};
pub use decomp::{
    tt_reconstruct, tt_svd_eps, tt_svd_ranks, tucker_als, tucker_reconstruct, TTModel, TuckerModel,
};
pub use error::{Error, FormatError, Result};
pub use io::{read_model, read_volume, write_model, write_volume, ElementType, StoredModel};
pub use metrics::{align_bscans, cnr, relative_error, segmentation_error, snr, RegionMask, SurfaceSet};
pub use phantom::{make_phantom, SpeckledPhantomSpec};
pub use pipeline::{
    calibrate, cr_ml, cr_tt, despeckle_compress_ml, despeckle_compress_tt, CalibrationTable, CompressedModel,
    CompressionOutcome, PipelineOptions, Scheme,
};
pub use prox::{prox_oracle, prox_scalar, svt, SpNorm, SvtResult};
pub use tensor::{
    contracted_product, fold_canonical, fold_mode_n, frobenius_norm, mode_n_product, unfold_canonical,
    unfold_mode_n, DenseMatrix, DenseTensor,
};

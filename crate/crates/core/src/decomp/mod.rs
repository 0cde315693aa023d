//! Tensor-train and Tucker decompositions.

mod tt;
mod tucker;

pub use tt::{tt_reconstruct, tt_svd_eps, tt_svd_ranks, TTModel};
pub use tucker::{tucker_als, tucker_als_with_trace, tucker_reconstruct, TuckerModel, TuckerTrace};

/// Default relative fit-change tolerance of [`tucker_als`].
pub const TUCKER_TOL: f64 = 1e-6;
/// Default sweep cap of [`tucker_als`].
pub const TUCKER_MAX_SWEEPS: usize = 50;

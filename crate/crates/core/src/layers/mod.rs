//! Trainable building blocks with explicit forward and backward passes.

mod linear;
mod mlp;
mod norm;

pub use linear::LinearParams;
#[allow(unused_imports)]
pub(crate) use linear::{affine_rows, affine_rows_bwd};
pub use mlp::{mlp_param_count, MlpCache, MlpParams};
pub use norm::{NormCache, NormParams, DEFAULT_NORM_EPS};

//! Depthwise causal temporal convolution with constant, exponential or
//! learnable tap spacing.
//!
//! The dense path ([`causal_conv_fwd`] / [`causal_conv_bwd`]) is used for
//! training; [`StreamingConv`] and [`stream_step`] evaluate one step at a time
//! against a [`ConvRingBuffer`] for inference.

mod conv;
mod kernel;
mod stream;

pub use conv::{causal_conv_bwd, causal_conv_fwd, ConvGrads};
pub use kernel::{
    clamp_positions, gaussian_tap, receptive_field, receptive_field_cd, receptive_field_eid,
    ConvVariant, KernelSpec, DEFAULT_SIGMA,
};
pub use stream::{stream_step, ConvRingBuffer, StreamingConv, Truncation};

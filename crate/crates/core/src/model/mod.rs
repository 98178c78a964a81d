//! The full network: encoder, a stack of convolution / recurrence / MLP /
//! norm layers, and a decoder.

mod checkpoint;
mod config;
mod forward;
mod params;
mod stream;

pub use checkpoint::{sha256_hex, Checkpoint, EntryKind, CHECKPOINT_MAGIC};
pub use config::{ConvConfig, ConvKind, Head, Mixer, NetworkConfig, PositionInit};
pub use forward::{layer_fwd, network_fwd, LayerCache, NetworkCache};
pub use params::{count_params, LayerParams, NetworkParams, ParamBreakdown, ParamGroup, ParamRef};
pub use stream::{NetworkStream, StepOutput};

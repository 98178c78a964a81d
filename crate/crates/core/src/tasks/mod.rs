//! Dataset generators and readers: flip-flop languages, noisy Lorenz
//! trajectories and scan-line images.

mod dataset;
pub mod flipflop;
pub mod images;
pub mod lorenz;

pub use dataset::{Dataset, DatasetSidecar, Targets};
pub use flipflop::{
    build_flipflop_oracle, fixed_context_chance_demo, gen_flipflop, FlipFlopConfig,
};
pub use images::{load_images, ImageSource, Split};
pub use lorenz::{gen_lorenz, LorenzConfig};

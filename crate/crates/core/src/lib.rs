pub mod analysis;
pub mod cli;
pub mod dcls_conv;
pub mod error;
pub mod layers;
pub mod memplan;
pub mod mingru;
pub mod model;
pub mod numcore;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};

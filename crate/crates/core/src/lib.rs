pub mod autodiff;
pub mod config;
pub mod costing;
pub mod dsp;
pub mod embeddings;
pub mod error;
pub mod formats;
pub mod imageops;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod networks;
pub mod pipeline;
pub mod plane;
pub mod robustness;

pub use error::{Error, Result};

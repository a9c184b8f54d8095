pub mod aggregator;
pub mod cli;
pub mod config;
pub mod ecapa;
pub mod error;
pub mod model;
pub mod params;
pub mod scoring;
pub mod seed;
pub mod signal;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod upstream;

pub use error::{Error, Result};

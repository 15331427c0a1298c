pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod recognizers;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

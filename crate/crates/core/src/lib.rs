//! Temporal audio-text alignment on a synthetic corpus.

pub mod audio;
pub mod captions;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod export;
pub mod features;
pub mod gradient;
pub mod loss;
pub mod model;
pub mod optim;
pub mod seed;
pub mod sweep;
pub mod trainer;
pub mod wav;
pub mod zste;

pub use error::{Error, Result};

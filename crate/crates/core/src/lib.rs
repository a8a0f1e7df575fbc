//! Keyword spotting with vocal-tract-length warped MFCC features.

pub mod augment;
pub mod cache;
pub mod config;
pub mod dataset;
pub mod error;
pub mod frontend;
pub mod inference;
pub mod model;
pub mod seed;
pub mod stats;
pub mod synthetic;
pub mod train;
pub mod warp;

pub use error::{Error, Result};

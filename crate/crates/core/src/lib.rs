//! Pointer-generator summarization lab.

pub mod autodiff;
pub mod data;
pub mod model;
pub mod losses;
pub mod trainer;
pub mod decoder;
pub mod metrics;
pub mod error;
pub mod tiny;
pub mod config;
pub mod pipeline;

pub use error::{Error, Result};

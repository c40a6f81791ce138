pub mod autodiff;
pub mod classifiers;
pub mod cli;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod rephraser;
pub mod synth;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};

pub mod augment;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod frames;
pub mod loss;
pub mod ndtensor;
pub mod rng;
pub mod signal;
pub mod similarity;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};

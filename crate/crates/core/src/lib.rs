pub mod cli;
pub mod error;
pub mod evaluate;
pub mod manifest;
pub mod modelselect;
pub mod pipeline;
pub mod preprocess;
pub mod regress;
pub mod rng;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};

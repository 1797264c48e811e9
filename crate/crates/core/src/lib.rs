pub mod checkpoint;
pub mod cli;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod lossmap;
pub mod models;
pub mod objective;
pub mod rng;
pub mod svg;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

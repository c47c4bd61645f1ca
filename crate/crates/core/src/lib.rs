pub mod archjson;
pub mod cli;
pub mod data;
pub mod detector;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod models;
pub mod ops;
pub mod poison;
pub mod scanner;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod trigger;

pub use error::{Error, Result};

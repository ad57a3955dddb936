pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod memory;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};

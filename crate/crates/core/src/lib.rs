pub mod blocks;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod scan;
pub mod tensor;
pub mod verify;

pub use error::{Result, SumError};

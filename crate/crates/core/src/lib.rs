pub mod conditions;
pub mod decomposition;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod moments;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};

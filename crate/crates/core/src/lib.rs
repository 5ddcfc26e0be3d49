pub mod analysis;
pub mod coding;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod runtime;
pub mod trainers;

pub use error::{Error, Result};

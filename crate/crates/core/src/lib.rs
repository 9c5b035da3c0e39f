pub mod attention;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod model;
pub mod numerics;
pub mod patching;
pub mod pipeline;
pub mod reprogramming;

pub use error::{Result, SeedError};

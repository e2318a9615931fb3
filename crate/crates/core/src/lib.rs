pub mod datagen;
pub mod drift;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};

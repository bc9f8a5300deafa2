//! Structure-aware brain graph representation learning: a learnable edge
//! masker trained under an information-bottleneck objective, followed by
//! self-supervised training on augmentations that preserve the masked
//! substructure.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod masker;
pub mod mi;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

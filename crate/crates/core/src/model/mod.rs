//! ViT-FC: patch embedding, pre-norm transformer encoder, mean pooling and
//! an FC/BN regression head.

mod checkpoint;
mod config;
mod layers;
mod vit;

pub use checkpoint::*;
pub use config::*;
pub use layers::*;
pub use vit::*;

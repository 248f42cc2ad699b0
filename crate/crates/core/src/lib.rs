//! Battery state-of-health estimation from partial CC-charge windows with a
//! patch-based transformer encoder and a fully connected regression head.

pub mod autodiff;
pub mod battery;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

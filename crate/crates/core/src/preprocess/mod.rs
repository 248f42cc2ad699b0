//! From cycle records to scaled model inputs and SOH labels.

mod dataset;
mod sample;
mod scaler;
mod soh;
mod split;
mod window;

pub use dataset::*;
pub use sample::*;
pub use scaler::*;
pub use soh::*;
pub use split::*;
pub use window::*;

//! Source training, head fine-tuning and grid search.

mod adam;
mod fit;
mod grid;

pub use adam::*;
pub use fit::*;
pub use grid::*;

//! Classification reports and saliency-versus-annotation scoring.

mod classification;
mod saliency;

pub use classification::*;
pub use saliency::*;

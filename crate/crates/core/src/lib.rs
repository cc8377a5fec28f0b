#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod dsp;
pub mod error;
pub mod evalsal;
pub mod model;
pub mod ndiff;
pub mod xai_gradcam;
pub mod xai_slime;

pub use error::{Error, Result};

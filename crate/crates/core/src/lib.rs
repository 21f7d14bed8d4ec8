pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod nncore;
pub mod train;

pub use error::{Error, Result};

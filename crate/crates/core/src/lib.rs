pub mod autodiff;
pub mod data;
mod error;
pub mod eval;
pub mod features;
pub mod hash;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod translator;
pub mod warning;

pub use error::{Error, Result};

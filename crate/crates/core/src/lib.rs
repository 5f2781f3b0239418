pub mod cache;
pub mod cate;
pub mod dataset;
pub mod effects;
pub mod error;
mod float_serde;
pub mod learners;
pub mod nuisance;
pub mod rules;
pub mod simgen;
pub mod stats;

pub use error::{Error, Result};

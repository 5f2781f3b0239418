//! Command-line pipeline over a cached nuisance artifact:
//! `calculate` -> `segment` -> `assess`, plus `simulate`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

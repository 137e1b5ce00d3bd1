pub mod bgmm;
pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod protocol;
pub mod seed;

pub use error::{Error, Result};

pub mod cli;
pub mod data_model;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod losses;
pub mod mogras;
pub mod motion_sim;
pub mod nn;
pub mod seed;
pub mod store;
pub mod training;

pub use error::{Error, Result};

pub mod certificate;
pub mod cli;
pub mod conditions;
pub mod config;
pub mod error;
pub mod linalg;
pub mod linearize;
pub mod network;
pub mod report;
pub mod simulate;
pub mod steady_state;

pub use error::{Assumption, Error, Result};

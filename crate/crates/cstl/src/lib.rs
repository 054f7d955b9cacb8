pub mod encode;
pub mod error;
pub mod cbf;
pub mod cli;
pub mod lindyn;
pub mod monitor;
pub mod plan;
pub mod problem;
pub mod reach;
pub mod stl;

pub use error::{CstlError, Result};

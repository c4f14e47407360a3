pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod positional;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};

pub mod data;
pub mod error;
pub mod inference;
mod io;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, ParamStore, Tape};

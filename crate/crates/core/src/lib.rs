pub mod error;
pub mod greeks;
pub mod hjb;
pub mod linalg;
pub mod market;
pub mod math;
pub mod paths;
pub mod pde;
pub mod rng;
pub mod strategy;
pub mod structure;

pub use error::{Error, Result};
pub use linalg::Matrix;

pub mod error;
pub mod linalg;
pub mod model;
pub mod sweeps;

pub use error::{Error, Result};
pub mod spectral;
pub mod ecd;
pub mod propagators;
pub mod experiments;

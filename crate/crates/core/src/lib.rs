pub mod error;
pub mod experiment;
pub mod fit;
pub mod imperfections;
pub mod observables;
pub mod sawtooth;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
pub use num_complex::Complex64;

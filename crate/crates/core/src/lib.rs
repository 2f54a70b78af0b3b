//! Spatial point-pattern analysis of urban facility locations: planar
//! projection, nested quadrat counts, aggregation tests, Taylor power-law
//! fits, a two-factor decomposition of the fitted exponents and an
//! equilibrium clustering model.

pub mod csr;
pub mod decomp;
pub mod distributions;
pub mod equilibrium;
pub mod error;
pub mod geoproj;
pub mod grid;
pub mod pipeline;
pub mod pointgen;
pub mod taylor;

pub use error::{Error, ErrorClass, Result};

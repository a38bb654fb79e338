//! Numerical laboratory for transportation coefficients, Huovinen transforms and
//! the stopping-time Lipschitz graph construction on planar discrete measures.

pub mod analysis;
pub mod error;
pub mod geom;
pub mod huovinen;
pub mod lemmas;
pub mod measure;
pub mod netsimplex;
pub mod stopping;
pub mod transport;

pub use error::{Error, Result};

//! Spectral geometry on conformally flat tori.

pub mod error;
pub mod field;
pub mod eigen;
pub mod surface;
pub mod nodal;
pub mod growth;
pub mod schrodinger;
pub mod tiling;
pub mod crofton;
pub mod harmonic;
pub mod carleman;
pub mod plot;
pub mod experiment;

pub use error::{Error, Result};
pub use field::{Domain, GridField, ScalarField};

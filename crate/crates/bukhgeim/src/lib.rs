//! Forward and inverse solver for the 2D complex conductivity equation via
//! the Dirac system and complex geometrical optics solutions.
//!
//! Pipeline: conductivity -> Dirac potential -> CGO solutions at spectral
//! points (lambda, w) -> generalized scattering data h(lambda, w) -> annulus
//! averaged reconstruction of the potential and the conductivity, plus
//! diagnostics that measure the large-|lambda| decay the method relies on.

pub mod cauchy;
pub mod cgo;
pub mod dirac;
pub mod error;
pub mod grid;
pub mod quadrature;
pub mod reconstruct;
pub mod scattering;

pub use error::{Error, Result};

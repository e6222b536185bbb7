//! Joint blind super-resolution and demixing of point-source signals.
//!
//! A single low-frequency measurement vector mixes K signals, each a sum of
//! r spikes convolved with an unknown point spread function constrained to a
//! known subspace. The data matrices are recovered by scaled gradient descent
//! on low-rank factors of their vectorized Hankel lifts, locations are
//! extracted with a subspace pseudospectrum, and the coefficient products
//! follow from an over-determined least squares solve.

pub mod bench;
pub mod error;
pub mod lift;
pub mod linalg;
pub mod model;
pub mod post;
pub mod solver;

pub use error::{Error, Result};

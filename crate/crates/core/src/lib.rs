//! Solvers for the drift-modified conformal constraint system on the flat
//! periodic n-torus.

pub mod coupled;
pub mod error;
pub mod grid;
pub mod momentum;
pub mod physical;
pub mod scalar;
pub mod stability;
pub mod verify;

pub use error::{Error, Result};

//! Differentiable LES with neural subgrid closures trained through the
//! discrete adjoint of a staggered-grid projection solver.

pub mod adjoint;
pub mod analysis;
pub mod burgers;
pub mod closure;
pub mod config;
pub mod error;
pub mod filter;
pub mod grid;
pub mod io;
pub mod neural;
mod par;
pub mod pipeline;
pub mod solver;
pub mod spectral;
pub mod train;

pub use error::{DpmError, Result};
pub use grid::{GridSpec, ScalarField, VectorField};

//! Pseudospectral Galerkin simulation of the calmed rotational Navier–Stokes
//! equations with additive noise on the periodic box `[0, 2π)³`, and a
//! random-dynamical-systems toolkit for pullback absorption, flattening and
//! attractor-convergence experiments.
//!
//! The numerical core ([`spectral`], [`calming`], [`model`], [`integrator`])
//! is generic over the scalar type through [`Real`]; the experiment layers
//! ([`noise`], [`rds`], [`diagnostics`], [`io`]) work in `f64`.

pub mod calming;
pub mod diagnostics;
pub mod integrator;
pub mod io;
pub mod model;
pub mod noise;
pub mod rds;
pub mod scalar;
pub mod spectral;

pub use calming::{CalmingSpec, CalmingVariant};
pub use scalar::Real;

/// Double-precision wave grid.
pub type Grid = spectral::WaveGrid<f64>;
/// Double-precision spectral vector field.
pub type Field = spectral::SpectralField<f64>;
/// Single-precision spectral vector field.
pub type Field32 = spectral::SpectralField<f32>;

//! Fourier representation on the periodic box: lattice, transforms, Leray
//! projection, Stokes operator, Galerkin truncation, Sobolev norms and
//! dealiasing.
//!
//! Norms use the volume-normalised measure `dx / (2π)³`, so that
//! `‖u‖² = Σ_k |û_k|²` over the full lattice.

mod field;
mod grid;
pub mod snapshot;
mod transform;

pub use field::{PhysicalField, ScalarField, SpectralField, TailReport};
pub use grid::{fft_wavenumber, WaveGrid};
pub use transform::{forward_pair, inverse_pair, Workspace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("grid resolution must be even and at least 4, got {0}")]
    InvalidResolution(usize),
    #[error("invalid dealias fraction: {0}")]
    InvalidDealias(String),
    #[error("shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

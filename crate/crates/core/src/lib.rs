//! Simulation and configuration library for programmable photonic meshes.
//!
//! A mesh of 2x2 Mach-Zehnder interferometers (MZIs) realizes an N x N
//! unitary transfer matrix. Each MZI carries two programmable phases
//! (theta, phi) and two fixed splitter imperfections (alpha, beta). This
//! crate provides:
//!
//! - complex matrix algebra and blockwise field propagation ([`matrix`], [`mesh`]),
//! - Haar-measure sampling of mesh phases and splitter error models ([`sampling`]),
//! - ideal decomposition of a target unitary into mesh phases ([`decompose`]),
//! - white-box local error correction with residual accounting ([`correction`]),
//! - a black-box simulated device interface ([`hardware`]),
//! - hardware-in-the-loop self-configuration algorithms ([`selfconfig`]),
//! - Monte Carlo sweeps, heatmaps and statistics checks ([`experiments`]).

use thiserror::Error;

pub mod correction;
pub mod decompose;
pub mod experiments;
pub mod hardware;
pub mod matrix;
pub mod mesh;
pub mod sampling;
pub mod selfconfig;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not unitary: residual {residual:.3e} exceeds {tolerance:.3e}")]
    NotUnitary { residual: f64, tolerance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown crossing id {0}")]
    UnknownCrossing(usize),

    #[error("operation not supported for topology {0:?}")]
    UnsupportedTopology(crate::mesh::Topology),

    #[error("mesh has no tap ports")]
    NoTaps,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, MeshError>;

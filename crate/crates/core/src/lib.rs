//! Matrix-free geometric multigrid with adaptive Galerkin coarse-grid
//! approximation (AGCA) on block-structured 2D triangular grids.
//!
//! The library builds a macro grid of the unit square, refines it uniformly,
//! and applies variable-coefficient elliptic and Stokes operators in a
//! matrix-free, element-wise fashion. Coarse-grid operators blend direct
//! re-discretization (DCA) with locally stored Galerkin matrices (GCA),
//! selected per macro element by a coefficient-gradient threshold. On top of
//! that sit a Chebyshev-smoothed V-cycle, FGMRES, a block-triangular Stokes
//! preconditioner with a diag(A)-BFBT Schur complement, and a sinker
//! benchmark suite with a memory model for the coarse operators.

// Element kernels and stencil code live on plain index loops.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod coarsening;
pub mod fem;
pub mod mesh;
pub mod selftest;
pub mod solvers;
pub mod sparse;
pub mod stokes;
pub mod transfer;

use thiserror::Error;

/// Errors produced by mesh construction, local assembly, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("coefficient error: {0}")]
    Coefficient(String),
    #[error("level error: {0}")]
    Level(String),
    #[error("build error: {0}")]
    Build(String),
    #[error("matrix error: {0}")]
    Matrix(String),
    #[error("solver breakdown: {0}")]
    Breakdown(String),
}

pub type Result<T> = std::result::Result<T, Error>;

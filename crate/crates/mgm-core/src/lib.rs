//! Kernel-based Galerkin multigrid on compact surfaces.
//!
//! The library discretizes elliptic problems `-Δu + c·u = f` (plus an optional
//! constant advection term on the torus) in a mesh-free kernel space spanned by
//! Lagrange functions of a spectrally defined Sobolev kernel.  Nested point sets
//! on the unit sphere or the flat torus give a multilevel hierarchy; damped
//! Jacobi smoothing plus kernel-space transfer operators give a τ-cycle
//! multigrid solver with level-independent contraction.  Stiffness and transfer
//! matrices can be sparsified by geodesic-radius truncation, which brings the
//! cost per cycle down to `O(N log^d N)` while keeping the cycle convergent.
//!
//! Modules follow the pipeline: [`geometry`] (point hierarchies, quadrature),
//! [`kernels`] / [`basis`] (spectral kernels, Lagrange bases), [`assembly`]
//! (stiffness, load, transfers), [`multigrid`] (cycles and solves),
//! [`sparsify`] (truncation and flop accounting), [`study`] (diagnostics and
//! acceptance studies).

pub mod assembly;
pub mod basis;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod multigrid;
pub mod par;
pub mod sparsify;
pub mod study;

pub use error::{MgError, Result};

/// Dense matrix type used throughout.
pub type Matrix = ndarray::Array2<f64>;
/// Dense vector type used throughout.
pub type Vector = ndarray::Array1<f64>;

//! Finite element solvers for Westervelt's quasilinear acoustic wave equation
//!
//! ```text
//! (1 - 2k u) u_tt - c^2 Δu - b Δu_t = 2k u_t^2
//! ```
//!
//! and its linear variable-coefficient counterpart, with P1/Q1 elements in
//! space and Newmark integration in time, plus the convergence studies used
//! to verify them.
//!
//! Kernels run data-parallel on rayon with the default `parallel` feature.
//! Every parallel kernel produces results bit-identical to its sequential
//! path (see [`exec`]).

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod config;
pub mod convergence;
pub mod error;
pub mod exec;
pub mod fespace;
pub mod linalg;
pub mod mesh;
pub mod study;
pub mod wavesolver;

pub use error::{Error, Result};
pub use exec::Exec;
pub use fespace::{FeFunction, FeSpace};
pub use linalg::{SolveReport, SolverConfig, SparseMatrix};
pub use mesh::{BoundaryTag, Mesh};
pub use wavesolver::{MaterialParams, NewmarkParams, TimeGrid, WaveState};

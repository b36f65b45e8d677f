//! Second-order two-scale homogenization for quasilinear divergence-form
//! elliptic equations with rapidly oscillating periodic coefficients.
//!
//! The pipeline is split by stage:
//!
//! * [`grid`] structured periodic cell grids and Dirichlet macro grids,
//! * [`fem`] Q1 assembly and Jacobi-preconditioned conjugate gradients,
//! * [`coefficients`] built-in coefficient families `a_ij(u, x, y)` and sources,
//! * [`cell`] periodic corrector problems and the homogenized tensor,
//! * [`macro_solver`] Picard iteration for the homogenized problem,
//! * [`two_scale`] reconstruction `u0 + eps u1 + eps^2 u2` and the fine-scale solver,
//! * [`analysis`] error norms and convergence-rate fitting.

pub mod analysis;
pub mod cell;
pub mod coefficients;
mod error;
pub mod fem;
pub mod grid;
pub mod macro_solver;
pub mod tensor;
pub mod two_scale;

pub use error::{Error, Result};
pub use grid::{CellGrid, Grid, MacroGrid, ScalarField};
pub use tensor::{Mat2, Point, Vec2};

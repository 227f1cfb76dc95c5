//! Numerical toolkit for the fractional p-Laplacian with singular weights:
//! weight-class membership with re-checkable witnesses, first and second
//! eigenpairs by their variational characterizations, sup-norm certification
//! by level-set iteration, non-resonant solvers, small-solution search, and
//! pseudo-arclength branch continuation.

pub mod apriori;
pub mod bifurcation;
pub mod eigen;
pub mod gagliardo;
pub mod grid;
pub mod nonlinear;
pub mod solver;
pub mod weights;

pub use grid::{build_grid, Domain1D, GridFunction};
pub use solver::SolverOptions;

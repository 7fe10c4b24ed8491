//! Exact high-dimensional asymptotics for minimum l1-norm interpolation and
//! the Lasso under i.i.d. Gaussian design: fixed-point solvers for the
//! two-unknown nonlinear systems governing the limiting risk, geometry of
//! the risk curve over the over-parameterization ratio (multi-descent),
//! a generalized AMP engine with decaying regularization, and a Monte Carlo
//! harness validating the theory at finite sample sizes.

pub mod amp;
pub mod fixed_point;
pub mod linalg;
pub mod montecarlo;
pub mod prior;
pub mod risk_curve;
pub mod special;

pub use fixed_point::{solve_interpolator, solve_lasso, FixedPointSolution, SolverConfig};
pub use prior::{ModelParams, Prior, SparseModel};

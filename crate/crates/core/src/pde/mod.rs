//! Finite-difference engines for pure second-order Cauchy problems, their
//! divergence-form adjoints, approximate fundamental solutions, and the
//! discrete Green's-identity residual.

mod greens;
mod grid;
mod solver;

pub use greens::{greens_residual, SpaceTimeWindow};
pub use grid::{SpaceTimeGrid, StorePolicy, ValueSurface};
pub use solver::{
    adjoint_density, fundamental_solution, gaussian_bump, solve_adjoint, solve_cauchy,
    CrossStencil, Scheme, SolveOptions,
};

//! AMG-ANN: a two-level algebraic multigrid preconditioner whose strong
//! threshold is chosen by a convolutional surrogate of the convergence factor.
//!
//! The crate is organised bottom-up:
//!
//! - [`sparse`]: COO/CSR storage, products and the coarse-level direct solvers.
//! - [`fem`]: P1 finite elements for `-div(mu grad u) = f` on `(-1, 1)^2`.
//! - [`amg`]: strong connections, Ruge–Stüben splitting, direct interpolation,
//!   Gauss–Seidel smoothing and the two-level cycle.
//! - [`solver`]: AMG-preconditioned CG and the approximate convergence factor.
//! - [`pooling`]: compression of a sparse matrix into an `m x m` view.
//! - [`ann`]: the CNN + dense regression surrogate, trained with Adam.
//! - [`dataset`]: corpus generation, storage, splitting and timing analysis.
//! - [`pipeline`]: threshold selection and the full ANN-enhanced solve.

pub mod amg;
pub mod ann;
pub mod dataset;
mod error;
pub mod fem;
pub mod pipeline;
pub mod pooling;
pub mod solver;
pub mod sparse;
pub mod timing;

pub use error::{Error, Result};

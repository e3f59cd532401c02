//! Penalized least-squares splines on bilinear finite elements.
//!
//! A fit minimizes `Σ (u(pᵢ) − zᵢ)² + λ uᵀPu` over continuous piecewise-bilinear
//! functions on a rectangular grid, with `P` a gradient, mixed-derivative or
//! biharmonic penalty. The crate covers operator assembly, the sparse SPD
//! solve, GCV selection of `λ`, image noise models, PSNR and the experiment
//! drivers behind the `lspline` binary. The guide in `book/` walks through each
//! stage.

// NaN must fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod cli;
pub mod dense;
pub mod error;
pub mod experiments;
pub mod gcv;
pub mod grid;
pub mod imageio;
pub mod metrics;
pub mod noise;
pub mod penalty;
pub mod solver;
pub mod sparse;
pub mod system;

pub use error::{Error, Result};
pub use grid::{Domain2, Grid, Point};
pub use penalty::PenaltyKind;
pub use system::{DataSet, SolverConfig, SplineProblem, SplineSolution};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/gcv.md")]
    mod gcv {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

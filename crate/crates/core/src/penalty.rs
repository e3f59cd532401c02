//! Roughness penalties `P` in the normal system `(AᵀA + λP) u = Aᵀz`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_biharmonic, assemble_mixed, assemble_stiffness};
use crate::error::Error;
use crate::grid::Grid;
use crate::sparse::SparseMatrix;

/// Which differential operator the smoothing term penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    /// `∫ ‖∇u‖²`
    #[serde(alias = "grad")]
    Gradient,
    /// `∫ ‖∇u‖² + (∂²u/∂x∂y)²`
    Mixed,
    /// `∫ (Δu)²` through the lumped-mass discrete Laplacian.
    #[serde(alias = "biharm")]
    Biharmonic,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 3] = [PenaltyKind::Gradient, PenaltyKind::Mixed, PenaltyKind::Biharmonic];

    /// Short label used in reports and on the command line.
    pub fn label(self) -> &'static str {
        match self {
            PenaltyKind::Gradient => "grad",
            PenaltyKind::Mixed => "mixed",
            PenaltyKind::Biharmonic => "biharm",
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grad" | "gradient" => Ok(PenaltyKind::Gradient),
            "mixed" => Ok(PenaltyKind::Mixed),
            "biharm" | "biharmonic" => Ok(PenaltyKind::Biharmonic),
            other => Err(Error::InvalidArgument(format!(
                "unknown penalty '{other}' (expected grad, mixed or biharm)"
            ))),
        }
    }
}

/// Assembles the penalty matrix for `kind` on `grid`. Every result is
/// symmetric positive semidefinite with the constants in its null space.
pub fn penalty_matrix(kind: PenaltyKind, grid: &Grid) -> SparseMatrix {
    match kind {
        PenaltyKind::Gradient => assemble_stiffness(grid),
        PenaltyKind::Mixed => assemble_stiffness(grid).add(&assemble_mixed(grid)),
        PenaltyKind::Biharmonic => assemble_biharmonic(grid),
    }
}

//! Finite element operators for continuous piecewise-bilinear (Q1) functions
//! on a tensor-product grid.
//!
//! All element integrals are evaluated in closed form. Corner order within an
//! element is `(origin, +x, +x+y, +y)`.

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Corner offsets `(ax, ay)` in local corner order.
pub const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

/// Sign of the constant mixed derivative of each corner's shape function,
/// scaled by `hx * hy`.
pub const MIXED_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, -1.0];

/// Local matrices of one `hx x hy` rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrices {
    pub stiffness: [[f64; 4]; 4],
    pub mixed: [[f64; 4]; 4],
    pub lumped_mass: [f64; 4],
}

pub fn local_matrices(hx: f64, hy: f64) -> Result<ElementMatrices> {
    if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "element spacings must be positive, got {hx} x {hy}"
        )));
    }
    // 1-D reference integrals: stiffness [[1,-1],[-1,1]] / h, mass h/6 [[2,1],[1,2]]
    let stiff_1d = |a: usize, b: usize| if a == b { 1.0 } else { -1.0 };
    let mass_1d = |a: usize, b: usize| if a == b { 2.0 } else { 1.0 };

    let mut stiffness = [[0.0; 4]; 4];
    let mut mixed = [[0.0; 4]; 4];
    for (a, &(ax, ay)) in CORNERS.iter().enumerate() {
        for (b, &(bx, by)) in CORNERS.iter().enumerate() {
            let dxx = stiff_1d(ax, bx) * mass_1d(ay, by) * hy / (6.0 * hx);
            let dyy = mass_1d(ax, bx) * stiff_1d(ay, by) * hx / (6.0 * hy);
            stiffness[a][b] = dxx + dyy;
            mixed[a][b] = MIXED_SIGNS[a] * MIXED_SIGNS[b] / (hx * hy);
        }
    }
    Ok(ElementMatrices {
        stiffness,
        mixed,
        lumped_mass: [hx * hy / 4.0; 4],
    })
}

fn scatter(grid: &Grid, local: &[[f64; 4]; 4]) -> SparseMatrix {
    let n = grid.node_count();
    let mut b = TripletBuilder::with_capacity(n, n, 16 * grid.element_count());
    for e in 0..grid.element_count() {
        let nodes = grid.element_nodes(e);
        for (a, &ra) in nodes.iter().enumerate() {
            for (c, &rc) in nodes.iter().enumerate() {
                b.push(ra, rc, local[a][c]);
            }
        }
    }
    b.build()
}

fn locals(grid: &Grid) -> ElementMatrices {
    local_matrices(grid.hx(), grid.hy()).expect("grid spacings are positive")
}

/// Stiffness matrix `K_ij = ∫ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(grid: &Grid) -> SparseMatrix {
    scatter(grid, &locals(grid).stiffness)
}

/// Mixed-derivative matrix `M_ij = ∫ ∂²φ_i/∂x∂y · ∂²φ_j/∂x∂y`.
pub fn assemble_mixed(grid: &Grid) -> SparseMatrix {
    scatter(grid, &locals(grid).mixed)
}

/// Diagonal of the lumped mass matrix: each node's share of its adjacent
/// element areas.
pub fn lumped_mass_diagonal(grid: &Grid) -> Vec<f64> {
    let share = locals(grid).lumped_mass;
    let mut d = vec![0.0; grid.node_count()];
    for e in 0..grid.element_count() {
        for (a, &node) in grid.element_nodes(e).iter().enumerate() {
            d[node] += share[a];
        }
    }
    d
}

pub fn assemble_lumped_mass(grid: &Grid) -> SparseMatrix {
    SparseMatrix::from_diagonal(&lumped_mass_diagonal(grid))
}

/// Discrete biharmonic operator `B = K D⁻¹ K`, i.e. the squared lumped-mass
/// discrete Laplacian `‖D⁻¹K u‖²_D`.
pub fn assemble_biharmonic(grid: &Grid) -> SparseMatrix {
    let k = assemble_stiffness(grid);
    let inv_mass: Vec<f64> = lumped_mass_diagonal(grid).iter().map(|d| 1.0 / d).collect();
    k.symmetric_sandwich(&inv_mass)
}

/// Nonzero basis values at `p` as `(node, weight)` pairs with increasing node.
pub fn basis_values(grid: &Grid, p: Point) -> Result<Vec<(usize, f64)>> {
    let loc = grid.locate(p)?;
    let nodes = grid.element_nodes(loc.element);
    let weights = Grid::shape_values(&loc);
    // corner order -> increasing node order: origin, +x, +y, +x+y
    let order = [0, 1, 3, 2];
    Ok(order
        .iter()
        .filter(|&&c| weights[c] != 0.0)
        .map(|&c| (nodes[c], weights[c]))
        .collect())
}

/// Point-evaluation matrix `A_ij = φ_j(p_i)`.
pub fn assemble_point_eval(grid: &Grid, points: &[Point]) -> Result<SparseMatrix> {
    let mut b = TripletBuilder::with_capacity(points.len(), grid.node_count(), 4 * points.len());
    for (i, &p) in points.iter().enumerate() {
        let row = basis_values(grid, p).map_err(|_| Error::PointOutsideDomain {
            index: i,
            x: p.x,
            y: p.y,
        })?;
        for (node, w) in row {
            b.push(i, node, w);
        }
    }
    Ok(b.build())
}

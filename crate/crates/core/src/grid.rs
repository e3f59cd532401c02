//! Tensor-product partitions of a rectangle.
//!
//! Nodes are numbered row-major, `j * nx + i`, where `i` runs along `x`.
//! Elements are numbered the same way over the `(nx - 1) x (ny - 1)` cells.
//! The local corner order of an element is counterclockwise starting at its
//! origin: `(origin, +x, +x+y, +y)`.

use crate::error::{Error, Result};

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// An axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain2 {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Domain2 {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::InvalidGrid(format!(
                "degenerate domain [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn unit_square() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0).expect("unit square is valid")
    }

    /// `[-1, 1]^2`.
    pub fn symmetric_square() -> Self {
        Self::new(-1.0, 1.0, -1.0, 1.0).expect("symmetric square is valid")
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Element index and local coordinates `(xi, eta)` in `[0, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub element: usize,
    pub xi: f64,
    pub eta: f64,
}

/// Tensor-product grid with `nx * ny` nodes. Spacings are always derived
/// from the domain and node counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain2,
    nx: usize,
    ny: usize,
}

impl Grid {
    pub fn new(domain: Domain2, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes per axis, got {nx} x {ny}"
            )));
        }
        Ok(Self { domain, nx, ny })
    }

    pub fn domain(&self) -> &Domain2 {
        &self.domain
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn hx(&self) -> f64 {
        self.domain.width() / (self.nx - 1) as f64
    }
    pub fn hy(&self) -> f64 {
        self.domain.height() / (self.ny - 1) as f64
    }
    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }
    pub fn element_count(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// `(i, j)` of a node index.
    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    pub fn x_coord(&self, i: usize) -> f64 {
        self.domain.x_min + i as f64 * self.hx()
    }

    pub fn y_coord(&self, j: usize) -> f64 {
        self.domain.y_min + j as f64 * self.hy()
    }

    pub fn node_point(&self, node: usize) -> Point {
        let (i, j) = self.node_ij(node);
        Point::new(self.x_coord(i), self.y_coord(j))
    }

    /// All node coordinates in node order.
    pub fn node_points(&self) -> Vec<Point> {
        (0..self.node_count()).map(|k| self.node_point(k)).collect()
    }

    /// Evaluates `f` at every node.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let xs: Vec<f64> = (0..self.nx).map(|i| self.x_coord(i)).collect();
        let mut out = Vec::with_capacity(self.node_count());
        for j in 0..self.ny {
            let y = self.y_coord(j);
            out.extend(xs.iter().map(|&x| f(x, y)));
        }
        out
    }

    /// Node indices of element `e` in local corner order `(origin, +x, +x+y, +y)`.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let ex = e % (self.nx - 1);
        let ey = e / (self.nx - 1);
        let n0 = ey * self.nx + ex;
        [n0, n0 + 1, n0 + self.nx + 1, n0 + self.nx]
    }

    /// Doubles the number of elements per axis; existing nodes keep their
    /// coordinates exactly.
    pub fn refine(&self) -> Grid {
        Grid {
            domain: self.domain,
            nx: 2 * self.nx - 1,
            ny: 2 * self.ny - 1,
        }
    }

    /// Applies [`Grid::refine`] `levels` times.
    pub fn refined(&self, levels: usize) -> Grid {
        (0..levels).fold(self.clone(), |g, _| g.refine())
    }

    /// Finds the element containing `p`. Points on element boundaries go to
    /// the lowest-index element that contains them.
    pub fn locate(&self, p: Point) -> Result<Location> {
        if !(p.x.is_finite() && p.y.is_finite()) || !self.domain.contains(p) {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        let (ex, xi) = axis_cell((p.x - self.domain.x_min) / self.hx(), self.nx - 1);
        let (ey, eta) = axis_cell((p.y - self.domain.y_min) / self.hy(), self.ny - 1);
        Ok(Location {
            element: ey * (self.nx - 1) + ex,
            xi,
            eta,
        })
    }

    /// Bilinear shape function values at a location, in local corner order.
    pub fn shape_values(loc: &Location) -> [f64; 4] {
        let (xi, eta) = (loc.xi, loc.eta);
        [
            (1.0 - xi) * (1.0 - eta),
            xi * (1.0 - eta),
            xi * eta,
            (1.0 - xi) * eta,
        ]
    }
}

// Parameter t in cell units along one axis with `cells` intervals. Values
// within rounding of a grid line snap onto it so nodes evaluate exactly.
fn axis_cell(t: f64, cells: usize) -> (usize, f64) {
    let nearest = t.round();
    let t = if (t - nearest).abs() <= 1e-12 * nearest.abs().max(1.0) {
        nearest
    } else {
        t
    };
    let t = t.clamp(0.0, cells as f64);
    // ceil(t) - 1 sends interior grid lines to the lower cell.
    let cell = (t.ceil() as usize).saturating_sub(1).min(cells - 1);
    (cell, t - cell as f64)
}

/// Grid over `[0, 1]^2` with one node per pixel of an `rows x cols` image;
/// pixel `(r, c)` is node `r * cols + c`.
pub fn make_image_grid(rows: usize, cols: usize) -> Result<Grid> {
    Grid::new(Domain2::unit_square(), cols, rows)
}

/// Grid over `[-1, 1]^2` with `n` nodes per axis.
pub fn make_symmetric_grid(n_per_axis: usize) -> Result<Grid> {
    Grid::new(Domain2::symmetric_square(), n_per_axis, n_per_axis)
}

/// Node count per axis of the base grid used by the function studies
/// (`h = 2/19` on `[-1, 1]`).
pub const FUNCTION_BASE_NODES: usize = 20;

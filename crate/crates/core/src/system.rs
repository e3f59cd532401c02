//! The penalized normal system `H(λ) u = Aᵀz` with `H(λ) = AᵀA + λP`.

use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{MatMut, Side};

use crate::assembly::{assemble_point_eval, basis_values};
use crate::dense;
use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::penalty::{penalty_matrix, PenaltyKind};
use crate::solver::{default_max_iter, pcg_with_floor, CgOutcome};
use crate::sparse::SparseMatrix;

/// Largest system the dense oracle will factor.
pub const DENSE_ORACLE_LIMIT: usize = 400;

/// Scattered observations `z_i` at points `p_i`, with an inclusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    points: Vec<Point>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl DataSet {
    /// All points included.
    pub fn new(points: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; points.len()];
        Self::with_mask(points, values, mask)
    }

    pub fn with_mask(points: Vec<Point>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != points.len() || mask.len() != points.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values and mask entries", points.len()),
                found: format!("{} values, {} mask entries", values.len(), mask.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("observation {i} is not finite")));
        }
        Ok(Self { points, values, mask })
    }

    /// Observations at every node of `grid`, e.g. the pixels of an image.
    pub fn on_nodes(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid.node_points(), values)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points that take part in the fit.
    pub fn included_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy of the dataset with the mask replaced.
    pub fn masked(&self, mask: Vec<bool>) -> Result<Self> {
        Self::with_mask(self.points.clone(), self.values.clone(), mask)
    }

    fn included(&self) -> (Vec<Point>, Vec<f64>) {
        self.points
            .iter()
            .zip(&self.values)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((&p, &z), _)| (p, z))
            .unzip()
    }
}

/// `Aᵀz` over the rows whose mask entry is set.
pub fn build_rhs(a: &SparseMatrix, z: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if z.len() != a.rows() || mask.len() != a.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} observations and mask entries", a.rows()),
            found: format!("{} observations, {} mask entries", z.len(), mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyData);
    }
    let mut rhs = vec![0.0; a.cols()];
    for i in (0..a.rows()).filter(|&i| mask[i]) {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            rhs[c] += v * z[i];
        }
    }
    Ok(rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreconditionerKind {
    /// Diagonal of `H`.
    Jacobi,
    /// Sparse Cholesky factor of the assembled `H`.
    Cholesky,
    /// Cholesky, falling back to Jacobi when the factorization breaks down.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative residual target `‖Hu − b‖ / ‖b‖`.
    pub tol: f64,
    /// `None` selects `10·√n + 1000`.
    pub max_iter: Option<usize>,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            preconditioner: PreconditionerKind::Auto,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

struct CholeskyPattern {
    gram: SparseMatrix,
    symbolic: SymbolicSparseColMat<usize>,
    llt: SymbolicLlt<usize>,
}

/// A fixed grid, penalty and dataset; `λ` varies per call.
pub struct SplineProblem {
    grid: Grid,
    kind: PenaltyKind,
    design: SparseMatrix,
    observations: Vec<f64>,
    penalty: SparseMatrix,
    rhs: Vec<f64>,
    pattern: OnceLock<std::result::Result<Arc<CholeskyPattern>, String>>,
}

impl std::fmt::Debug for SplineProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplineProblem")
            .field("grid", &self.grid)
            .field("kind", &self.kind)
            .field("data_points", &self.design.rows())
            .finish_non_exhaustive()
    }
}

impl SplineProblem {
    pub fn new(grid: &Grid, data: &DataSet, kind: PenaltyKind) -> Result<Self> {
        let (points, observations) = data.included();
        if points.is_empty() {
            return Err(Error::EmptyData);
        }
        // Report the offending index in the caller's numbering.
        if let Some(i) = (0..data.len()).find(|&i| data.mask[i] && !grid.domain().contains(data.points[i])) {
            let p = data.points[i];
            return Err(Error::PointOutsideDomain { index: i, x: p.x, y: p.y });
        }
        let design = assemble_point_eval(grid, &points)?;
        let rhs = design.mul_transpose_vec(&observations);
        Ok(Self {
            grid: grid.clone(),
            kind,
            penalty: penalty_matrix(kind, grid),
            design,
            observations,
            rhs,
            pattern: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }
    /// Point-evaluation matrix over the included points.
    pub fn design(&self) -> &SparseMatrix {
        &self.design
    }
    /// Included observations, in dataset order.
    pub fn observations(&self) -> &[f64] {
        &self.observations
    }
    pub fn penalty(&self) -> &SparseMatrix {
        &self.penalty
    }
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }
    pub fn data_count(&self) -> usize {
        self.design.rows()
    }
    pub fn unknowns(&self) -> usize {
        self.grid.node_count()
    }

    /// `y = H(λ) x` without forming `AᵀA`.
    pub fn apply(&self, lambda: f64, x: &[f64], y: &mut [f64]) {
        let mut ax = vec![0.0; self.design.rows()];
        self.apply_with(lambda, x, y, &mut ax);
    }

    fn apply_with(&self, lambda: f64, x: &[f64], y: &mut [f64], scratch: &mut [f64]) {
        self.penalty.mul_vec_into(x, y);
        y.iter_mut().for_each(|v| *v *= lambda);
        self.design.mul_vec_into(x, scratch);
        self.design.mul_transpose_vec_acc(1.0, scratch, y);
    }

    /// Relative residual that rounding in one `H x` product can reach:
    /// a small multiple of `ε ‖ |H| |x| ‖ / ‖b‖`.
    fn rounding_floor(&self, lambda: f64, x: &[f64], b_norm: f64) -> f64 {
        let abs_x: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let mut bound: Vec<f64> = (0..self.penalty.rows())
            .map(|i| {
                let (cols, vals) = self.penalty.row(i);
                lambda * cols.iter().zip(vals).map(|(&c, v)| v.abs() * abs_x[c]).sum::<f64>()
            })
            .collect();
        let ax: Vec<f64> = (0..self.design.rows())
            .map(|i| {
                let (cols, vals) = self.design.row(i);
                cols.iter().zip(vals).map(|(&c, v)| v.abs() * abs_x[c]).sum()
            })
            .collect();
        for (i, &a) in ax.iter().enumerate() {
            let (cols, vals) = self.design.row(i);
            for (&c, v) in cols.iter().zip(vals) {
                bound[c] += v.abs() * a;
            }
        }
        let max_row = (0..self.penalty.rows()).map(|i| self.penalty.row(i).0.len()).max().unwrap_or(1);
        let norm = bound.iter().map(|v| v * v).sum::<f64>().sqrt();
        4.0 * max_row as f64 * f64::EPSILON * norm / b_norm
    }

    fn cholesky_pattern(&self) -> Result<Arc<CholeskyPattern>> {
        self.pattern
            .get_or_init(|| {
                let gram = self.design.gram();
                // The union pattern of AᵀA and P does not depend on λ.
                let h = gram.add_scaled(1.0, &self.penalty, 1.0);
                let n = h.rows();
                let symbolic = SymbolicSparseColMat::new_checked(
                    n,
                    n,
                    h.row_ptr().to_vec(),
                    None,
                    h.col_indices().to_vec(),
                );
                let llt = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower).map_err(|e| format!("{e:?}"))?;
                Ok(Arc::new(CholeskyPattern { gram, symbolic, llt }))
            })
            .clone()
            .map_err(Error::Factorization)
    }

    /// Assembles `H(λ)` explicitly. Symmetric storage means the CSR arrays
    /// double as CSC arrays.
    pub fn assembled(&self, lambda: f64) -> SparseMatrix {
        self.design.gram().add_scaled(1.0, &self.penalty, lambda)
    }

    fn jacobi_diagonal(&self, lambda: f64) -> Vec<f64> {
        let mut d: Vec<f64> = self.penalty.diagonal().iter().map(|p| lambda * p).collect();
        for (&c, &v) in self.design.col_indices().iter().zip(self.design.values()) {
            d[c] += v * v;
        }
        d
    }

    fn factor(&self, lambda: f64) -> Result<Precond> {
        let pattern = self.cholesky_pattern()?;
        let values = pattern.gram.add_scaled(1.0, &self.penalty, lambda).values().to_vec();
        let h = SparseColMatRef::new(pattern.symbolic.as_ref(), &values);
        let llt = Llt::try_new_with_symbolic(pattern.llt.clone(), h, Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Precond::Cholesky(llt))
    }

    /// Prepares `H(λ)` for repeated solves with different right-hand sides.
    pub fn system(&self, lambda: f64, config: SolverConfig) -> Result<PreparedSystem<'_>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive and finite, got {lambda}")));
        }
        if !(config.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {}", config.tol)));
        }
        let jacobi = || Precond::Jacobi(self.jacobi_diagonal(lambda).iter().map(|d| 1.0 / d).collect());
        let precond = match config.preconditioner {
            PreconditionerKind::Jacobi => jacobi(),
            PreconditionerKind::Cholesky => self.factor(lambda)?,
            // A failed factorization leaves PCG to report the curvature it finds.
            PreconditionerKind::Auto => match self.factor(lambda) {
                Err(Error::Factorization(e)) => {
                    log::debug!("cholesky failed at lambda {lambda:e} ({e}); using jacobi");
                    jacobi()
                }
                other => other?,
            },
        };
        Ok(PreparedSystem {
            problem: self,
            lambda,
            precond,
            tol: config.tol,
            max_iter: config.max_iter.unwrap_or_else(|| default_max_iter(self.unknowns())),
        })
    }

    /// Solves `H(λ) u = Aᵀz`.
    pub fn solve(&self, lambda: f64, config: SolverConfig) -> Result<SplineSolution> {
        let out = self.system(lambda, config)?.solve(&self.rhs)?;
        Ok(SplineSolution {
            grid: self.grid.clone(),
            coefficients: out.x,
            kind: self.kind,
            lambda,
            iterations: out.iterations,
            residual: out.residual,
        })
    }

    /// `A u`: the fitted values at the included points.
    pub fn fitted_values(&self, coefficients: &[f64]) -> Vec<f64> {
        self.design.mul_vec(coefficients)
    }

    /// `Σ (u(p_i) − z_i)²` over the included points.
    pub fn residual_sq(&self, coefficients: &[f64]) -> f64 {
        self.fitted_values(coefficients)
            .iter()
            .zip(&self.observations)
            .map(|(f, z)| (f - z).powi(2))
            .sum()
    }

    /// Dense copy of `H(λ)`, for systems within the oracle size guard.
    pub fn dense_matrix(&self, lambda: f64) -> Result<Vec<Vec<f64>>> {
        let n = self.unknowns();
        if n > DENSE_ORACLE_LIMIT {
            return Err(Error::SizeGuard {
                size: n,
                limit: DENSE_ORACLE_LIMIT,
            });
        }
        let mut h = self.penalty.to_dense();
        h.iter_mut().flatten().for_each(|v| *v *= lambda);
        for i in 0..self.design.rows() {
            let (cols, vals) = self.design.row(i);
            for (&j, &a_ij) in cols.iter().zip(vals) {
                for (&k, &a_ik) in cols.iter().zip(vals) {
                    h[j][k] += a_ij * a_ik;
                }
            }
        }
        Ok(h)
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Cholesky(Llt<usize, f64>),
}

/// `H(λ)` with its preconditioner built.
pub struct PreparedSystem<'a> {
    problem: &'a SplineProblem,
    lambda: f64,
    precond: Precond,
    tol: f64,
    max_iter: usize,
}

impl PreparedSystem<'_> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<CgOutcome> {
        let n = self.problem.unknowns();
        if rhs.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("rhs of length {n}"),
                found: rhs.len().to_string(),
            });
        }
        let mut scratch = vec![0.0; self.problem.data_count()];
        let apply = |x: &[f64], y: &mut [f64]| self.problem.apply_with(self.lambda, x, y, &mut scratch);
        let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let floor = |x: &[f64]| self.problem.rounding_floor(self.lambda, x, b_norm);
        match &self.precond {
            Precond::Jacobi(inv) => pcg_with_floor(
                rhs,
                apply,
                |r, z| {
                    for i in 0..r.len() {
                        z[i] = r[i] * inv[i];
                    }
                },
                floor,
                self.tol,
                self.max_iter,
            ),
            Precond::Cholesky(llt) => pcg_with_floor(
                rhs,
                apply,
                |r, z| {
                    z.copy_from_slice(r);
                    llt.solve_in_place(MatMut::from_column_major_slice_mut(z, n, 1));
                },
                floor,
                self.tol,
                self.max_iter,
            ),
        }
    }
}

/// A fitted spline `u_h = Σ u_i φ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSolution {
    pub grid: Grid,
    pub coefficients: Vec<f64>,
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl SplineSolution {
    pub fn value_at(&self, p: Point) -> Result<f64> {
        Ok(basis_values(&self.grid, p)?
            .iter()
            .map(|&(node, w)| w * self.coefficients[node])
            .sum())
    }

    pub fn evaluate(&self, points: &[Point]) -> Result<Vec<f64>> {
        points.iter().map(|&p| self.value_at(p)).collect()
    }
}

/// Solves the smoothing problem once with the default preconditioner.
pub fn solve(
    grid: &Grid,
    data: &DataSet,
    kind: PenaltyKind,
    lambda: f64,
    tol: f64,
    max_iter: Option<usize>,
) -> Result<SplineSolution> {
    let config = SolverConfig {
        tol,
        max_iter,
        preconditioner: PreconditionerKind::Auto,
    };
    SplineProblem::new(grid, data, kind)?.solve(lambda, config)
}

/// Reference solution by a dense Cholesky factorization of `H(λ)`.
pub fn dense_oracle_solve(grid: &Grid, data: &DataSet, kind: PenaltyKind, lambda: f64) -> Result<Vec<f64>> {
    let n = grid.node_count();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            size: n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let problem = SplineProblem::new(grid, data, kind)?;
    dense::cholesky_solve(&problem.dense_matrix(lambda)?, problem.rhs())
}

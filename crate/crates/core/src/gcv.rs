//! Smoothing-parameter selection by generalized cross validation.
//!
//! The GCV score is `V(λ) = N ‖(I − S)z‖² / (N − tr S)²` with the influence
//! matrix `S(λ) = A H(λ)⁻¹ Aᵀ`. Its trace is estimated with Rademacher probes.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::penalty::PenaltyKind;
use crate::system::{DataSet, PreparedSystem, SolverConfig, SplineProblem, DENSE_ORACLE_LIMIT};

/// Scores whose denominator `N − tr S` is at most this fraction of `N` are
/// treated as degenerate.
pub const DEGENERATE_FRACTION: f64 = 1e-8;

/// Golden ratio conjugate `(√5 − 1) / 2`.
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Strictly increasing, strictly positive candidate values of `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid(Vec<f64>);

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if values.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("lambda values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("lambda values must be strictly increasing".into()));
        }
        Ok(Self(values))
    }

    /// `count` points evenly spaced in `log λ` from `min` to `max` inclusive.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(min > 0.0 && max > min) {
            return Err(Error::InvalidArgument(format!(
                "log-spaced grid needs 0 < min < max and at least 2 points, got [{min}, {max}] x {count}"
            )));
        }
        let (a, b) = (min.ln(), max.ln());
        let step = (b - a) / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|k| (a + step * k as f64).exp()).collect();
        values[0] = min;
        values[count - 1] = max;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self::log_spaced(1e-7, 10.0, 16).expect("default grid is valid")
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(g: LambdaGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcvConfig {
    pub lambdas: LambdaGrid,
    /// Hutchinson probe count.
    pub probes: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Golden-section evaluations after the grid scan; 0 disables refinement.
    pub refine_evaluations: usize,
    /// Worker threads for the grid scan.
    pub jobs: usize,
}

impl Default for GcvConfig {
    fn default() -> Self {
        Self {
            lambdas: LambdaGrid::default(),
            probes: 10,
            seed: 0,
            solver: SolverConfig::default(),
            refine_evaluations: 10,
            jobs: 1,
        }
    }
}

impl GcvConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.probes == 0 {
            return Err(Error::InvalidArgument("GCV needs at least one probe vector".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation of the GCV function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvRecord {
    pub lambda: f64,
    /// `‖(I − S)z‖²`.
    pub residual_sq: f64,
    pub trace_est: f64,
    /// `None` when the denominator degenerates.
    pub gcv: Option<f64>,
}

/// GCV scores over the λ grid, in λ order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GcvCurve {
    pub records: Vec<GcvRecord>,
}

impl GcvCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the smallest non-degenerate score; ties keep the smaller λ.
    pub fn argmin(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.records.iter().enumerate() {
            if let Some(s) = r.gcv {
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// CSV with header `lambda,residual_sq,trace_est,gcv`; degenerate scores
    /// are left empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lambda", "residual_sq", "trace_est", "gcv"])
            .map_err(csv_err)?;
        for r in &self.records {
            out.write_record([
                format!("{:e}", r.lambda),
                format!("{:e}", r.residual_sq),
                format!("{:e}", r.trace_est),
                r.gcv.map(|g| format!("{g:e}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Outcome of [`select_lambda`].
#[derive(Debug, Clone, PartialEq)]
pub struct GcvSelection {
    /// Minimizer over the grid and the refinement evaluations.
    pub lambda: f64,
    pub score: f64,
    /// One record per grid point.
    pub curve: GcvCurve,
    /// Golden-section evaluations, in evaluation order.
    pub refinement: Vec<GcvRecord>,
}

/// `N · residual_sq / (N − trace)²`.
pub fn score_from_parts(residual_sq: f64, trace: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    let dof = nf - trace;
    if !(dof > DEGENERATE_FRACTION * nf) {
        return Err(Error::DegenerateGcv { trace, n });
    }
    Ok(nf * residual_sq / (dof * dof))
}

/// Rademacher probe `k` for a given seed: one ChaCha stream per probe, so
/// probes do not depend on how many were drawn before.
fn probe(seed: u64, k: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Per-probe Hutchinson samples `vᵀ S v`.
pub fn trace_samples(problem: &SplineProblem, system: &PreparedSystem<'_>, probes: usize, seed: u64) -> Result<Vec<f64>> {
    let a = problem.design();
    (0..probes)
        .map(|k| {
            let v = probe(seed, k, a.rows());
            let u = system.solve(&a.mul_transpose_vec(&v))?.x;
            Ok(a.mul_vec(&u).iter().zip(&v).map(|(s, v)| s * v).sum())
        })
        .collect()
}

/// Hutchinson estimate of `tr S(λ)` with `probes` Rademacher vectors.
pub fn influence_trace(grid: &Grid, data: &DataSet, kind: PenaltyKind, lambda: f64, probes: usize, seed: u64) -> Result<f64> {
    if probes == 0 {
        return Err(Error::InvalidArgument("trace estimation needs at least one probe".into()));
    }
    let problem = SplineProblem::new(grid, data, kind)?;
    let system = problem.system(lambda, SolverConfig::default())?;
    let samples = trace_samples(&problem, &system, probes, seed)?;
    Ok(samples.iter().sum::<f64>() / probes as f64)
}

/// Exact `tr S(λ)` through a dense factorization; subject to the dense size guard.
pub fn exact_trace(problem: &SplineProblem, lambda: f64) -> Result<f64> {
    if problem.unknowns() > DENSE_ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            size: problem.unknowns(),
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let h = problem.dense_matrix(lambda)?;
    let a = problem.design();
    let mut trace = 0.0;
    for i in 0..a.rows() {
        let row = a.mul_transpose_vec(&unit(a.rows(), i));
        let x = dense::cholesky_solve(&h, &row)?;
        trace += row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>();
    }
    Ok(trace)
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// GCV score at `λ` for a given trace estimate.
pub fn gcv_score(grid: &Grid, data: &DataSet, kind: PenaltyKind, lambda: f64, trace_estimate: f64) -> Result<f64> {
    let problem = SplineProblem::new(grid, data, kind)?;
    let sol = problem.solve(lambda, SolverConfig::default())?;
    score_from_parts(problem.residual_sq(&sol.coefficients), trace_estimate, problem.data_count())
}

/// Solves once for the fit and `probes` times for the trace at `λ`.
pub fn evaluate(problem: &SplineProblem, lambda: f64, config: &GcvConfig) -> Result<GcvRecord> {
    let system = problem.system(lambda, config.solver)?;
    let u = system.solve(problem.rhs())?.x;
    let residual_sq = problem.residual_sq(&u);
    let samples = trace_samples(problem, &system, config.probes, config.seed)?;
    let trace_est = samples.iter().sum::<f64>() / samples.len() as f64;
    let gcv = match score_from_parts(residual_sq, trace_est, problem.data_count()) {
        Ok(s) => Some(s),
        Err(Error::DegenerateGcv { .. }) => None,
        Err(e) => return Err(e),
    };
    log::debug!("gcv lambda={lambda:e} residual_sq={residual_sq:e} trace={trace_est:.3} score={gcv:?}");
    Ok(GcvRecord {
        lambda,
        residual_sq,
        trace_est,
        gcv,
    })
}

/// Scans the grid, in parallel when `config.jobs > 1`.
pub fn scan(problem: &SplineProblem, config: &GcvConfig) -> Result<GcvCurve> {
    config.validate()?;
    let lambdas = config.lambdas.values();
    let records = if config.jobs == 1 {
        lambdas.iter().map(|&l| evaluate(problem, l, config)).collect::<Result<Vec<_>>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<GcvRecord>>>> = Mutex::new((0..lambdas.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..config.jobs.min(lambdas.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= lambdas.len() {
                        break;
                    }
                    let r = evaluate(problem, lambdas[i], config);
                    slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|r| r.expect("every index evaluated"))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(GcvCurve { records })
}

/// Picks `λ*` minimizing the GCV score: a grid scan followed by golden-section
/// refinement in `log λ` between the neighbours of the grid minimizer.
pub fn select_lambda(grid: &Grid, data: &DataSet, kind: PenaltyKind, config: &GcvConfig) -> Result<GcvSelection> {
    let problem = SplineProblem::new(grid, data, kind)?;
    select_lambda_for(&problem, config)
}

pub fn select_lambda_for(problem: &SplineProblem, config: &GcvConfig) -> Result<GcvSelection> {
    let curve = scan(problem, config)?;
    let k = curve.argmin().ok_or(Error::SelectionFailed)?;
    let mut best = curve.records[k];
    let mut refinement = Vec::new();

    let lambdas = config.lambdas.values();
    if config.refine_evaluations > 0 && lambdas.len() > 1 {
        let lo = lambdas[k.saturating_sub(1)].ln();
        let hi = lambdas[(k + 1).min(lambdas.len() - 1)].ln();
        let mut eval = |t: f64| -> Result<f64> {
            let r = evaluate(problem, t.exp(), config)?;
            refinement.push(r);
            Ok(r.gcv.unwrap_or(f64::INFINITY))
        };
        let (mut a, mut b) = (lo, hi);
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = eval(c)?;
        let mut fd = if config.refine_evaluations > 1 { eval(d)? } else { f64::INFINITY };
        for _ in 2..config.refine_evaluations {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = eval(d)?;
            }
        }
        for r in &refinement {
            if let Some(s) = r.gcv {
                if s < best.gcv.expect("grid minimizer has a score") {
                    best = *r;
                }
            }
        }
    }
    Ok(GcvSelection {
        lambda: best.lambda,
        score: best.gcv.expect("selected record has a score"),
        curve,
        refinement,
    })
}

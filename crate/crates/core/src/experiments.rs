//! Denoising and function-recovery studies with CSV reports.
//!
//! Report CSV columns are `experiment,penalty,variance,condition,h,lambda,psnr_db,iters,seconds`.
//! The `seconds` column is filled only when timing is requested, so that
//! repeated runs with the same seed produce identical bytes.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcv::{select_lambda_for, GcvConfig};
use crate::grid::{make_symmetric_grid, Grid, Point, FUNCTION_BASE_NODES};
use crate::imageio::{write_grid_csv_file, write_image, Image};
use crate::metrics::{psnr, spike_diagnostic, Psnr};
use crate::noise::{add_gaussian, detect_impulses, NoiseSpec};
use crate::penalty::PenaltyKind;
use crate::system::{DataSet, SplineProblem, SplineSolution};

pub const REPORT_HEADER: [&str; 9] = [
    "experiment",
    "penalty",
    "variance",
    "condition",
    "h",
    "lambda",
    "psnr_db",
    "iters",
    "seconds",
];

pub const DIAGNOSTICS_HEADER: [&str; 8] = ["experiment", "penalty", "condition", "h", "max_abs_error", "x", "y", "seconds"];

/// Closed-form test surfaces on `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    /// `sin(3x) · exp(x² − y²)`
    F,
    /// `−x² − x y²`
    G,
}

impl TestFunction {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            TestFunction::F => (3.0 * x).sin() * (x * x - y * y).exp(),
            TestFunction::G => -x * x - x * y * y,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TestFunction::F => "f",
            TestFunction::G => "g",
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TestFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f" | "F" => Ok(TestFunction::F),
            "g" | "G" => Ok(TestFunction::G),
            other => Err(Error::InvalidArgument(format!("unknown test function '{other}' (expected f or g)"))),
        }
    }
}

/// Where function-study observations live as the mesh is refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataPlacement {
    /// Sampled once at the base-grid nodes; only the spline space is refined.
    #[default]
    Fixed,
    /// Sampled afresh at every node of each refined grid.
    Resample,
}

impl FromStr for DataPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed" => Ok(DataPlacement::Fixed),
            "resample" => Ok(DataPlacement::Resample),
            other => Err(Error::InvalidArgument(format!("unknown placement '{other}' (expected fixed or resample)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    /// Minimize the GCV score.
    Gcv,
    Fixed(f64),
}

/// Settings shared by all studies.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kinds: Vec<PenaltyKind>,
    pub lambda: LambdaPolicy,
    /// GCV grid, probes and solver settings. The probe seed is replaced by the
    /// study seed.
    pub gcv: GcvConfig,
    /// Cells evaluated concurrently.
    pub jobs: usize,
    /// Fill the `seconds` column.
    pub timing: bool,
    /// Directory for recovered images and node-value grids.
    pub export_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kinds: PenaltyKind::ALL.to_vec(),
            lambda: LambdaPolicy::Gcv,
            gcv: GcvConfig::default(),
            jobs: 1,
            timing: false,
            export_dir: None,
        }
    }
}

impl StudyConfig {
    fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("no penalty kinds selected".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// One `(penalty, condition)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub experiment: String,
    pub penalty: PenaltyKind,
    pub variance: f64,
    /// Impulse density, refinement level or mesh-size label.
    pub condition: String,
    pub h: f64,
    pub lambda: Option<f64>,
    pub psnr: Option<Psnr>,
    pub iterations: Option<usize>,
    pub seconds: f64,
    /// Largest nodal deviation from the clean reference.
    pub max_abs_error: Option<f64>,
    pub max_error_location: Option<Point>,
    /// PSNR of the corrupted input against the clean reference.
    pub noisy_psnr: Option<Psnr>,
    /// Set when the cell failed; the numeric fields are then empty.
    pub error: Option<String>,
}

impl ExperimentRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn psnr_db(&self) -> Option<f64> {
        self.psnr.and_then(Psnr::db)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub timing: bool,
}

fn csv_io(e: csv::Error) -> Error {
    Error::Stream(std::io::Error::other(e))
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_HEADER).map_err(csv_io)?;
        for r in &self.rows {
            let psnr = match (&r.error, r.psnr) {
                (Some(_), _) => "failed".to_string(),
                (None, Some(p)) => p.to_string(),
                (None, None) => String::new(),
            };
            out.write_record([
                r.experiment.clone(),
                r.penalty.label().to_string(),
                r.variance.to_string(),
                r.condition.clone(),
                format!("{:e}", r.h),
                r.lambda.map(|l| format!("{l:e}")).unwrap_or_default(),
                psnr,
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                if self.timing { format!("{:.3}", r.seconds) } else { String::new() },
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Companion CSV with the spike diagnostic and wall time of every cell.
    pub fn write_diagnostics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(DIAGNOSTICS_HEADER).map_err(csv_io)?;
        for r in &self.rows {
            let loc = r.max_error_location;
            out.write_record([
                r.experiment.clone(),
                r.penalty.label().to_string(),
                r.condition.clone(),
                format!("{:e}", r.h),
                r.max_abs_error.map(|e| format!("{e:e}")).unwrap_or_default(),
                loc.map(|p| p.x.to_string()).unwrap_or_default(),
                loc.map(|p| p.y.to_string()).unwrap_or_default(),
                format!("{:.3}", r.seconds),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_diagnostics_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_diagnostics_csv(std::io::BufWriter::new(file))
    }

    pub fn find(&self, penalty: PenaltyKind, condition: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.penalty == penalty && r.condition == condition)
    }
}

/// Runs `f` over `items` on up to `jobs` threads; results keep item order.
fn run_ordered<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every cell evaluated"))
        .collect()
}

/// Chooses `λ` by the configured policy and solves.
pub fn fit(problem: &SplineProblem, config: &StudyConfig, seed: u64) -> Result<SplineSolution> {
    let lambda = match config.lambda {
        LambdaPolicy::Fixed(l) => l,
        LambdaPolicy::Gcv => {
            let gcv = GcvConfig {
                seed,
                jobs: 1,
                ..config.gcv.clone()
            };
            select_lambda_for(problem, &gcv)?.lambda
        }
    };
    problem.solve(lambda, config.gcv.solver)
}

struct CellResult {
    solution: SplineSolution,
    seconds: f64,
}

fn timed_fit(problem: Result<SplineProblem>, config: &StudyConfig, seed: u64) -> Result<CellResult> {
    let start = Instant::now();
    let solution = fit(&problem?, config, seed)?;
    Ok(CellResult {
        solution,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn failed_row(mut row: ExperimentRow, err: &Error) -> ExperimentRow {
    log::error!("{} {} {}: {err}", row.experiment, row.penalty, row.condition);
    row.error = Some(err.to_string());
    row
}

fn blank_row(experiment: &str, penalty: PenaltyKind, variance: f64, condition: String, h: f64) -> ExperimentRow {
    ExperimentRow {
        experiment: experiment.to_string(),
        penalty,
        variance,
        condition,
        h,
        lambda: None,
        psnr: None,
        iterations: None,
        seconds: 0.0,
        max_abs_error: None,
        max_error_location: None,
        noisy_psnr: None,
        error: None,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Image denoising study.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStudy {
    /// Used in the experiment id and export file names.
    pub name: String,
    pub image: Image,
    pub variance: f64,
    pub densities: Vec<f64>,
    pub seed: u64,
}

/// For each penalty and density: corrupt, detect impulses, select `λ`,
/// solve, and score against the clean image with peak value 1.
pub fn run_image_study(study: &ImageStudy, config: &StudyConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let grid = study.image.grid()?;
    let clean = study.image.pixels();
    let corrupted: Vec<(Vec<f64>, Vec<bool>)> = study
        .densities
        .iter()
        .map(|&d| {
            let noisy = NoiseSpec::new(study.variance, d, study.seed)?.apply(clean)?;
            let mask = detect_impulses(&noisy);
            Ok((noisy, mask))
        })
        .collect::<Result<_>>()?;

    let experiment = format!("image-{}", study.name);
    let cells: Vec<(PenaltyKind, usize)> = config
        .kinds
        .iter()
        .flat_map(|&k| (0..study.densities.len()).map(move |d| (k, d)))
        .collect();
    let rows = run_ordered(&cells, config.jobs, |&(kind, di)| {
        let (noisy, mask) = &corrupted[di];
        let density = study.densities[di];
        let mut row = blank_row(&experiment, kind, study.variance, density.to_string(), grid.hx());
        row.noisy_psnr = psnr(clean, noisy, 1.0).ok();
        let data = DataSet::with_mask(grid.node_points(), noisy.clone(), mask.clone());
        let problem = data.and_then(|d| SplineProblem::new(&grid, &d, kind));
        match timed_fit(problem, config, study.seed) {
            Ok(cell) => {
                let recovered = Image::from_clipped(study.image.rows(), study.image.cols(), cell.solution.coefficients.clone())
                    .expect("solution has one value per pixel");
                row.lambda = Some(cell.solution.lambda);
                row.iterations = Some(cell.solution.iterations);
                row.seconds = cell.seconds;
                row.psnr = psnr(clean, recovered.pixels(), 1.0).ok();
                row.max_abs_error = crate::metrics::max_abs_error(clean, recovered.pixels()).ok();
                if let Some(dir) = &config.export_dir {
                    let path = dir.join(format!("{}_{}_v{}_d{}.pgm", study.name, kind.label(), study.variance, density));
                    if let Err(e) = ensure_dir(dir).and_then(|_| write_image(&recovered, &path)) {
                        return failed_row(row, &e);
                    }
                }
                row
            }
            Err(e) => failed_row(row, &e),
        }
    });
    Ok(ExperimentReport {
        rows,
        timing: config.timing,
    })
}

/// Function recovery under mesh refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionStudy {
    pub function: TestFunction,
    pub variance: f64,
    /// Refinement levels; level `L` has `2^L (n₀ − 1) + 1` nodes per axis.
    pub levels: Vec<usize>,
    pub seed: u64,
    pub placement: DataPlacement,
    /// Nodes per axis of the level-0 grid.
    pub base_nodes: usize,
}

impl FunctionStudy {
    pub fn new(function: TestFunction, seed: u64) -> Self {
        Self {
            function,
            variance: 0.05,
            levels: (0..=5).collect(),
            seed,
            placement: DataPlacement::Fixed,
            base_nodes: FUNCTION_BASE_NODES,
        }
    }
}

/// Noisy samples of `function` at every node of `grid`.
pub fn sample_function(function: TestFunction, grid: &Grid, variance: f64, seed: u64) -> Result<DataSet> {
    let clean = grid.sample(|x, y| function.eval(x, y));
    DataSet::on_nodes(grid, add_gaussian(&clean, variance, seed)?)
}

/// PSNR of nodal values against `function`, with peak `max |function|` over the nodes.
pub fn function_psnr(function: TestFunction, grid: &Grid, values: &[f64]) -> Result<Psnr> {
    let reference = grid.sample(|x, y| function.eval(x, y));
    let peak = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    psnr(&reference, values, peak)
}

fn function_cells(
    experiment: &str,
    function: TestFunction,
    variance: f64,
    seed: u64,
    config: &StudyConfig,
    meshes: &[(String, Grid, DataSet)],
) -> Vec<ExperimentRow> {
    let cells: Vec<(PenaltyKind, usize)> = config
        .kinds
        .iter()
        .flat_map(|&k| (0..meshes.len()).map(move |m| (k, m)))
        .collect();
    run_ordered(&cells, config.jobs, |&(kind, mi)| {
        let (condition, grid, data) = &meshes[mi];
        let mut row = blank_row(experiment, kind, variance, condition.clone(), grid.hx());
        log::info!("{experiment} {kind} {condition}: {} unknowns", grid.node_count());
        match timed_fit(SplineProblem::new(grid, data, kind), config, seed) {
            Ok(cell) => {
                let sol = &cell.solution;
                row.lambda = Some(sol.lambda);
                row.iterations = Some(sol.iterations);
                row.seconds = cell.seconds;
                row.psnr = function_psnr(function, grid, &sol.coefficients).ok();
                let spike = spike_diagnostic(sol, |x, y| function.eval(x, y));
                row.max_abs_error = Some(spike.max_abs_error);
                row.max_error_location = Some(spike.location);
                if let Some(dir) = &config.export_dir {
                    let safe = condition.replace('/', "_");
                    let path = dir.join(format!("{experiment}_{}_{safe}.csv", kind.label()));
                    if let Err(e) = ensure_dir(dir).and_then(|_| write_grid_csv_file(grid, &sol.coefficients, &path)) {
                        return failed_row(row, &e);
                    }
                }
                row
            }
            Err(e) => failed_row(row, &e),
        }
    })
}

/// Fits every penalty on each refinement level of the base grid over `[-1, 1]²`.
/// Rows are ordered by penalty, then level.
pub fn run_function_study(study: &FunctionStudy, config: &StudyConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if study.levels.is_empty() {
        return Err(Error::InvalidArgument("no refinement levels selected".into()));
    }
    let base = make_symmetric_grid(study.base_nodes)?;
    let fixed = sample_function(study.function, &base, study.variance, study.seed)?;
    let meshes: Vec<(String, Grid, DataSet)> = study
        .levels
        .iter()
        .map(|&level| {
            let grid = base.refined(level);
            let data = match study.placement {
                DataPlacement::Fixed => fixed.clone(),
                DataPlacement::Resample => sample_function(study.function, &grid, study.variance, study.seed)?,
            };
            Ok((level.to_string(), grid, data))
        })
        .collect::<Result<_>>()?;
    let experiment = format!("function-{}", study.function);
    Ok(ExperimentReport {
        rows: function_cells(&experiment, study.function, study.variance, study.seed, config, &meshes),
        timing: config.timing,
    })
}

/// Mesh-size study of pointwise spikes on `[-1, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeStudy {
    pub function: TestFunction,
    pub variance: f64,
    /// Nodes per axis of each mesh; `h = 2 / (n − 1)`.
    pub mesh_nodes: Vec<usize>,
    pub seed: u64,
    pub base_nodes: usize,
}

impl SpikeStudy {
    /// Meshes `h = 2/19, 1/19, 1/38, 1/76, 1/152, 1/304`.
    pub fn new(function: TestFunction, seed: u64) -> Self {
        Self {
            function,
            variance: 0.05,
            mesh_nodes: vec![20, 39, 77, 153, 305, 609],
            seed,
            base_nodes: FUNCTION_BASE_NODES,
        }
    }
}

/// `h = 2 / (n − 1)` as a reduced fraction, e.g. `1/76` or `2/19`.
pub fn mesh_label(nodes: usize) -> String {
    let intervals = nodes - 1;
    if intervals.is_multiple_of(2) {
        format!("1/{}", intervals / 2)
    } else {
        format!("2/{intervals}")
    }
}

/// Fits at each mesh size with data fixed at the base-grid nodes and records
/// the spike diagnostic.
pub fn run_spike_study(study: &SpikeStudy, config: &StudyConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if study.mesh_nodes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument("every mesh needs at least 2 nodes per axis".into()));
    }
    let base = make_symmetric_grid(study.base_nodes)?;
    let data = sample_function(study.function, &base, study.variance, study.seed)?;
    let meshes: Vec<(String, Grid, DataSet)> = study
        .mesh_nodes
        .iter()
        .map(|&n| Ok((mesh_label(n), make_symmetric_grid(n)?, data.clone())))
        .collect::<Result<_>>()?;
    let experiment = format!("spike-{}", study.function);
    Ok(ExperimentReport {
        rows: function_cells(&experiment, study.function, study.variance, study.seed, config, &meshes),
        timing: config.timing,
    })
}

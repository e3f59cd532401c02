//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid arguments or input data, 3 file or
//! decoding errors, 4 solver or λ-selection failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiments::{
    run_function_study, run_image_study, run_spike_study, DataPlacement, ExperimentReport, FunctionStudy,
    ImageStudy, LambdaPolicy, SpikeStudy, StudyConfig, TestFunction,
};
use crate::gcv::{select_lambda_for, GcvConfig, LambdaGrid};
use crate::grid::{make_symmetric_grid, Domain2, Grid, Point, FUNCTION_BASE_NODES};
use crate::imageio::{read_image, read_points_csv, write_grid_csv, write_image, Image};
use crate::metrics::psnr;
use crate::noise::{detect_impulses, NoiseSpec};
use crate::penalty::PenaltyKind;
use crate::system::{DataSet, SolverConfig, SplineProblem};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

/// Maps a library error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_solver_failure() {
        EXIT_SOLVER
    } else if err.is_io() {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

#[derive(Debug, Parser)]
#[command(name = "lspline", version, about = "Penalized bilinear-spline smoothing and image denoising")]
pub struct Cli {
    /// Print the effective defaults and progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise a grayscale image.
    Denoise(DenoiseArgs),
    /// Fit a spline to scattered points from a CSV file.
    Smooth(SmoothArgs),
    /// Tabulate the GCV function over a λ grid.
    GcvScan(GcvScanArgs),
    /// Run one of the built-in studies and write its report.
    Reproduce(ReproduceArgs),
}

/// `auto` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Auto,
    Value(f64),
}

impl FromStr for LambdaArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(LambdaArg::Value(v)),
            _ => Err(format!("expected 'auto' or a positive number, got '{s}'")),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => LambdaArg::from_str(&v.to_string()),
            Raw::Text(s) => LambdaArg::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

impl LambdaArg {
    fn policy(self) -> LambdaPolicy {
        match self {
            LambdaArg::Auto => LambdaPolicy::Gcv,
            LambdaArg::Value(v) => LambdaPolicy::Fixed(v),
        }
    }
}

fn parse_penalty(s: &str) -> std::result::Result<PenaltyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_function(s: &str) -> std::result::Result<TestFunction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

/// `var,density` for `--add-noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseArg {
    pub variance: f64,
    pub density: f64,
}

impl FromStr for NoiseArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let [variance, density] = parse_floats::<2>(s)?;
        if !(variance >= 0.0) || !(0.0..=1.0).contains(&density) {
            return Err(format!("need variance >= 0 and density in [0, 1], got {s}"));
        }
        Ok(Self { variance, density })
    }
}

/// `nx,ny` for `--grid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArg {
    pub nx: usize,
    pub ny: usize,
}

impl FromStr for GridArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a node count")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [nx, ny] if nx >= 2 && ny >= 2 => Ok(Self { nx, ny }),
            _ => Err(format!("expected nx,ny with at least 2 nodes each, got '{s}'")),
        }
    }
}

/// `x0,x1,y0,y1` for `--domain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainArg(pub [f64; 4]);

impl FromStr for DomainArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_floats::<4>(s).map(DomainArg)
    }
}

/// Level list: `0-5` or `0,2,4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Levels(pub Vec<usize>);

impl FromStr for Levels {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("expected a range like 0-5 or a list like 0,2,4, got '{s}'");
        if let Some((a, b)) = s.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            return Ok(Levels((a..=b).collect()));
        }
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()
            .map(Levels)
    }
}

/// λ-grid and solver flags shared by the subcommands.
#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Smallest λ of the GCV grid.
    #[arg(long)]
    pub lambda_min: Option<f64>,
    /// Largest λ of the GCV grid.
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Number of log-spaced GCV grid points.
    #[arg(long)]
    pub lambda_count: Option<usize>,
    /// Hutchinson probe vectors per λ.
    #[arg(long)]
    pub probes: Option<usize>,
    /// Golden-section evaluations after the grid scan; 0 keeps the grid minimizer.
    #[arg(long)]
    pub refine_evaluations: Option<usize>,
    /// Relative residual tolerance of the solver.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap of the solver.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuningFile {
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    lambda_count: Option<usize>,
    probes: Option<usize>,
    refine_evaluations: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

impl TuningArgs {
    fn merged(&self, file: &TuningFile) -> TuningFile {
        TuningFile {
            lambda_min: self.lambda_min.or(file.lambda_min),
            lambda_max: self.lambda_max.or(file.lambda_max),
            lambda_count: self.lambda_count.or(file.lambda_count),
            probes: self.probes.or(file.probes),
            refine_evaluations: self.refine_evaluations.or(file.refine_evaluations),
            tol: self.tol.or(file.tol),
            max_iter: self.max_iter.or(file.max_iter),
        }
    }

    fn gcv_config(&self, seed: u64) -> Result<GcvConfig> {
        self.merged(&TuningFile::default()).gcv_config(seed)
    }
}

impl TuningFile {
    fn gcv_config(&self, seed: u64) -> Result<GcvConfig> {
        let defaults = GcvConfig::default();
        let lambdas = if self.lambda_min.is_none() && self.lambda_max.is_none() && self.lambda_count.is_none() {
            defaults.lambdas
        } else {
            let d = defaults.lambdas.values();
            LambdaGrid::log_spaced(
                self.lambda_min.unwrap_or(d[0]),
                self.lambda_max.unwrap_or(d[d.len() - 1]),
                self.lambda_count.unwrap_or(d.len()),
            )?
        };
        let mut solver = SolverConfig::default();
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
            }
            solver.tol = tol;
        }
        solver.max_iter = self.max_iter.or(solver.max_iter);
        Ok(GcvConfig {
            lambdas,
            probes: self.probes.unwrap_or(defaults.probes),
            refine_evaluations: self.refine_evaluations.unwrap_or(defaults.refine_evaluations),
            seed,
            solver,
            ..defaults
        })
    }
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_parser = parse_penalty, default_value = "mixed")]
    pub penalty: PenaltyKind,
    /// `auto` selects λ by GCV.
    #[arg(long, default_value = "auto")]
    pub lambda: LambdaArg,
    /// Corrupt the input first with `variance,density` Gaussian and salt-and-pepper noise.
    #[arg(long)]
    pub add_noise: Option<NoiseArg>,
    #[arg(long, env = "LSPLINE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Clean image to score against; defaults to the input when noise is added.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Also write the corrupted image.
    #[arg(long)]
    pub noisy_output: Option<PathBuf>,
    /// Keep extreme-valued pixels in the data term.
    #[arg(long)]
    pub no_detect: bool,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    /// CSV with header `x,y,z`.
    #[arg(long)]
    pub points: PathBuf,
    /// Nodes per axis, `nx,ny`.
    #[arg(long)]
    pub grid: GridArg,
    /// `x0,x1,y0,y1`; defaults to the bounding box of the points.
    #[arg(long)]
    pub domain: Option<DomainArg>,
    #[arg(long, value_parser = parse_penalty, default_value = "mixed")]
    pub penalty: PenaltyKind,
    #[arg(long, default_value = "auto")]
    pub lambda: LambdaArg,
    /// Node-value grid CSV (`x,y,value`); stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// CSV with columns `x,y` at which to evaluate the fitted spline.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Destination for the `--eval` values (`x,y,value`); stdout when omitted.
    #[arg(long)]
    pub eval_output: Option<PathBuf>,
    #[arg(long, env = "LSPLINE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct GcvScanArgs {
    /// Scattered data CSV (`x,y,z`); requires `--grid`.
    #[arg(long, conflicts_with_all = ["image", "function"])]
    pub points: Option<PathBuf>,
    #[arg(long, requires = "points")]
    pub grid: Option<GridArg>,
    #[arg(long, requires = "points")]
    pub domain: Option<DomainArg>,
    /// Grayscale image; pixels are the data.
    #[arg(long, conflicts_with = "function")]
    pub image: Option<PathBuf>,
    /// Noise added to `--image` before scanning.
    #[arg(long, requires = "image")]
    pub add_noise: Option<NoiseArg>,
    /// Noisy samples of a test function at the base-grid nodes.
    #[arg(long = "fn", value_parser = parse_function)]
    pub function: Option<TestFunction>,
    /// Refinement level of the spline grid for `--fn`.
    #[arg(long, default_value_t = 0, requires = "function")]
    pub level: usize,
    /// Gaussian noise variance for `--fn`.
    #[arg(long, default_value_t = 0.05, requires = "function")]
    pub variance: f64,
    #[arg(long, value_parser = parse_penalty, default_value = "mixed")]
    pub penalty: PenaltyKind,
    #[arg(long, env = "LSPLINE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Add a `psnr_db` column scored against the clean source (`--fn` or noised `--image`).
    #[arg(long)]
    pub psnr: bool,
    /// Curve CSV; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Image,
    Function,
    Spike,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub study: Option<StudyKind>,
    /// TOML file with study settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "fn", value_parser = parse_function)]
    pub function: Option<TestFunction>,
    #[arg(long, env = "LSPLINE_SEED")]
    pub seed: Option<u64>,
    /// Refinement levels for the function study, e.g. `0-5` or `0,2`.
    #[arg(long)]
    pub levels: Option<Levels>,
    /// Penalties to fit, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_penalty)]
    pub penalties: Option<Vec<PenaltyKind>>,
    #[arg(long)]
    pub lambda: Option<LambdaArg>,
    #[arg(long)]
    pub variance: Option<f64>,
    /// Image for the image study.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Label used in the image-study experiment id; defaults to the file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Impulse densities for the image study, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub densities: Option<Vec<f64>>,
    /// Nodes per axis of each spike-study mesh, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mesh_nodes: Option<Vec<usize>>,
    #[arg(long)]
    pub placement: Option<DataPlacement>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Fill the `seconds` column (makes the report run-dependent).
    #[arg(long)]
    pub timing: bool,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-cell max-error and timing CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Directory for recovered images or node-value grids.
    #[arg(long)]
    pub export_dir: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

impl clap::ValueEnum for DataPlacement {
    fn value_variants<'a>() -> &'a [Self] {
        &[DataPlacement::Fixed, DataPlacement::Resample]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            DataPlacement::Fixed => "fixed",
            DataPlacement::Resample => "resample",
        }))
    }
}

/// Settings accepted in a `reproduce --config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReproduceFile {
    study: Option<StudyKind>,
    #[serde(rename = "fn")]
    function: Option<TestFunction>,
    seed: Option<u64>,
    levels: Option<Vec<usize>>,
    penalties: Option<Vec<PenaltyKind>>,
    lambda: Option<LambdaArg>,
    variance: Option<f64>,
    image: Option<PathBuf>,
    name: Option<String>,
    densities: Option<Vec<f64>>,
    mesh_nodes: Option<Vec<usize>>,
    placement: Option<DataPlacement>,
    jobs: Option<usize>,
    export_dir: Option<PathBuf>,
    #[serde(default)]
    tuning: TuningFile,
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_defaults(gcv: &GcvConfig) {
    let l = gcv.lambdas.values();
    eprintln!(
        "settings: tol={:e} max_iter={} lambda_grid=[{:e}, {:e}] x {} (log-spaced) probes={} refine_evaluations={} probe_seed={}",
        gcv.solver.tol,
        gcv.solver
            .max_iter
            .map(|m| m.to_string())
            .unwrap_or_else(|| "10*sqrt(n)+1000".into()),
        l[0],
        l[l.len() - 1],
        l.len(),
        gcv.probes,
        gcv.refine_evaluations,
        gcv.seed,
    );
}

pub fn run(cli: Cli) -> Result<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Denoise(a) => denoise(a, verbose),
        Command::Smooth(a) => smooth(a, verbose),
        Command::GcvScan(a) => gcv_scan(a, verbose),
        Command::Reproduce(a) => reproduce(a, verbose),
    }
}

fn choose_lambda(problem: &SplineProblem, lambda: LambdaArg, gcv: &GcvConfig) -> Result<f64> {
    match lambda {
        LambdaArg::Value(v) => Ok(v),
        LambdaArg::Auto => Ok(select_lambda_for(problem, gcv)?.lambda),
    }
}

fn denoise(a: DenoiseArgs, verbose: bool) -> Result<()> {
    let gcv = a.tuning.gcv_config(a.seed)?;
    if verbose {
        print_defaults(&gcv);
    }
    let input = read_image(&a.input)?;
    let (observed, clean) = match a.add_noise {
        Some(n) => {
            let noisy = NoiseSpec::new(n.variance, n.density, a.seed)?.apply(input.pixels())?;
            (Image::new(input.rows(), input.cols(), noisy)?, Some(input.clone()))
        }
        None => (input.clone(), None),
    };
    let reference = match &a.reference {
        Some(p) => Some(read_image(p)?),
        None => clean,
    };
    if let Some(r) = &reference {
        if (r.rows(), r.cols()) != (observed.rows(), observed.cols()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} reference", observed.rows(), observed.cols()),
                found: format!("{}x{}", r.rows(), r.cols()),
            });
        }
    }
    if let Some(p) = &a.noisy_output {
        write_image(&observed, p)?;
    }

    let grid = observed.grid()?;
    let mask = if a.no_detect {
        vec![true; observed.pixels().len()]
    } else {
        detect_impulses(observed.pixels())
    };
    let data = DataSet::with_mask(grid.node_points(), observed.pixels().to_vec(), mask)?;
    let problem = SplineProblem::new(&grid, &data, a.penalty)?;
    let lambda = choose_lambda(&problem, a.lambda, &gcv)?;
    let solution = problem.solve(lambda, gcv.solver)?;
    let recovered = Image::from_clipped(observed.rows(), observed.cols(), solution.coefficients)?;
    write_image(&recovered, &a.output)?;

    println!("lambda={lambda:e}");
    println!("iterations={}", solution.iterations);
    if let Some(r) = reference {
        println!("psnr_db={}", psnr(r.pixels(), recovered.pixels(), 1.0)?);
    }
    Ok(())
}

fn bounding_domain(points: &[Point]) -> Result<Domain2> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    Domain2::new(x0, x1, y0, y1)
}

fn scattered_grid(data: &DataSet, grid: GridArg, domain: Option<DomainArg>) -> Result<Grid> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let domain = match domain {
        Some(DomainArg([x0, x1, y0, y1])) => Domain2::new(x0, x1, y0, y1)?,
        None => bounding_domain(data.points())?,
    };
    Grid::new(domain, grid.nx, grid.ny)
}

fn read_eval_points(path: &Path) -> Result<Vec<Point>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let (xi, yi) = (col("x")?, col("y")?);
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |k: usize| -> Result<f64> {
            let raw = rec.get(k).unwrap_or("");
            raw.parse().map_err(|_| Error::Csv {
                line,
                message: format!("'{raw}' is not a number"),
            })
        };
        points.push(Point::new(num(xi)?, num(yi)?));
    }
    Ok(points)
}

fn smooth(a: SmoothArgs, verbose: bool) -> Result<()> {
    let gcv = a.tuning.gcv_config(a.seed)?;
    if verbose {
        print_defaults(&gcv);
    }
    let data = read_points_csv(&a.points)?;
    let grid = scattered_grid(&data, a.grid, a.domain)?;
    let problem = SplineProblem::new(&grid, &data, a.penalty)?;
    let lambda = choose_lambda(&problem, a.lambda, &gcv)?;
    let solution = problem.solve(lambda, gcv.solver)?;
    eprintln!("lambda={lambda:e} iterations={}", solution.iterations);

    let out = output_writer(a.output.as_deref())?;
    write_grid_csv(&grid, &solution.coefficients, out)?;

    if let Some(eval) = &a.eval {
        let points = read_eval_points(eval)?;
        let values = solution.evaluate(&points)?;
        let mut w = csv::Writer::from_writer(output_writer(a.eval_output.as_deref())?);
        let io = |e: csv::Error| Error::Stream(io::Error::other(e));
        w.write_record(["x", "y", "value"]).map_err(io)?;
        for (p, v) in points.iter().zip(values) {
            w.write_record([p.x.to_string(), p.y.to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn gcv_scan(a: GcvScanArgs, verbose: bool) -> Result<()> {
    let gcv = a.tuning.gcv_config(a.seed)?;
    if verbose {
        print_defaults(&gcv);
    }
    // (grid, data, clean reference at the nodes, peak value)
    let (grid, data, reference): (Grid, DataSet, Option<(Vec<f64>, f64)>) = if let Some(points) = &a.points {
        let grid_arg = a
            .grid
            .ok_or_else(|| Error::InvalidArgument("--points requires --grid nx,ny".into()))?;
        let data = read_points_csv(points)?;
        let grid = scattered_grid(&data, grid_arg, a.domain)?;
        (grid, data, None)
    } else if let Some(path) = &a.image {
        let image = read_image(path)?;
        let grid = image.grid()?;
        let (values, reference) = match a.add_noise {
            Some(n) => (
                NoiseSpec::new(n.variance, n.density, a.seed)?.apply(image.pixels())?,
                Some((image.pixels().to_vec(), 1.0)),
            ),
            None => (image.pixels().to_vec(), None),
        };
        let mask = detect_impulses(&values);
        (grid.clone(), DataSet::with_mask(grid.node_points(), values, mask)?, reference)
    } else if let Some(f) = a.function {
        let base = make_symmetric_grid(FUNCTION_BASE_NODES)?;
        let data = crate::experiments::sample_function(f, &base, a.variance, a.seed)?;
        let grid = base.refined(a.level);
        let clean = grid.sample(|x, y| f.eval(x, y));
        let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (grid, data, Some((clean, peak)))
    } else {
        return Err(Error::InvalidArgument("gcv-scan needs one of --points, --image or --fn".into()));
    };
    if a.psnr && reference.is_none() {
        return Err(Error::InvalidArgument(
            "--psnr needs a clean reference (--fn, or --image with --add-noise)".into(),
        ));
    }

    let problem = SplineProblem::new(&grid, &data, a.penalty)?;
    let selection = select_lambda_for(&problem, &gcv)?;
    let curve = &selection.curve;
    let best = curve.argmin().ok_or(Error::SelectionFailed)?;
    eprintln!("lambda={:e}", selection.lambda);

    let mut header = vec!["lambda", "residual_sq", "trace_est", "gcv", "selected"];
    if a.psnr {
        header.push("psnr_db");
    }
    let mut w = csv::Writer::from_writer(output_writer(a.output.as_deref())?);
    let io = |e: csv::Error| Error::Stream(io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for (i, r) in curve.records.iter().enumerate() {
        let mut rec = vec![
            format!("{:e}", r.lambda),
            format!("{:e}", r.residual_sq),
            format!("{:e}", r.trace_est),
            r.gcv.map(|g| format!("{g:e}")).unwrap_or_default(),
            u8::from(i == best).to_string(),
        ];
        if a.psnr {
            let (clean, peak) = reference.as_ref().expect("checked above");
            let sol = problem.solve(r.lambda, gcv.solver)?;
            let est: Vec<f64> = if a.image.is_some() {
                sol.coefficients.iter().map(|v| v.clamp(0.0, 1.0)).collect()
            } else {
                sol.coefficients
            };
            rec.push(psnr(clean, &est, *peak)?.to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn reproduce(a: ReproduceArgs, verbose: bool) -> Result<()> {
    let file: ReproduceFile = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        }
        None => ReproduceFile::default(),
    };
    let study = a
        .study
        .or(file.study)
        .ok_or_else(|| Error::InvalidArgument("--study is required (image, function or spike)".into()))?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let function = a.function.or(file.function).unwrap_or(TestFunction::F);
    let tuning = a.tuning.merged(&file.tuning);
    let gcv = tuning.gcv_config(seed)?;
    let default_kinds = match study {
        StudyKind::Spike => vec![PenaltyKind::Gradient, PenaltyKind::Mixed],
        _ => PenaltyKind::ALL.to_vec(),
    };
    let config = StudyConfig {
        kinds: a.penalties.or(file.penalties).unwrap_or(default_kinds),
        lambda: a.lambda.or(file.lambda).unwrap_or(LambdaArg::Auto).policy(),
        gcv,
        jobs: a.jobs.or(file.jobs).unwrap_or(1),
        timing: a.timing,
        export_dir: a.export_dir.or(file.export_dir),
    };
    if verbose {
        print_defaults(&config.gcv);
        eprintln!("study={study:?} fn={function} seed={seed} jobs={} penalties={:?}", config.jobs, config.kinds);
    }

    let report: ExperimentReport = match study {
        StudyKind::Function => {
            let mut s = FunctionStudy::new(function, seed);
            if let Some(l) = a.levels.map(|l| l.0).or(file.levels) {
                s.levels = l;
            }
            if let Some(v) = a.variance.or(file.variance) {
                s.variance = v;
            }
            if let Some(p) = a.placement.or(file.placement) {
                s.placement = p;
            }
            run_function_study(&s, &config)?
        }
        StudyKind::Spike => {
            let mut s = SpikeStudy::new(function, seed);
            if let Some(m) = a.mesh_nodes.or(file.mesh_nodes) {
                s.mesh_nodes = m;
            }
            if let Some(v) = a.variance.or(file.variance) {
                s.variance = v;
            }
            run_spike_study(&s, &config)?
        }
        StudyKind::Image => {
            let path = a
                .image
                .or(file.image)
                .ok_or_else(|| Error::InvalidArgument("the image study needs --image".into()))?;
            let name = a.name.or(file.name).unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "image".into())
            });
            let s = ImageStudy {
                name,
                image: read_image(&path)?,
                variance: a.variance.or(file.variance).unwrap_or(0.05),
                densities: a
                    .densities
                    .or(file.densities)
                    .unwrap_or_else(|| vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
                seed,
            };
            run_image_study(&s, &config)?
        }
    };

    report.write_csv(output_writer(a.output.as_deref())?)?;
    if let Some(path) = &a.diagnostics {
        report.write_diagnostics_file(path)?;
    }
    let failed = report.rows.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed", report.rows.len());
        if failed == report.rows.len() {
            return Err(Error::SelectionFailed);
        }
    }
    Ok(())
}

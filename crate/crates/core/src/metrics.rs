//! Reconstruction quality: MSE, PSNR and the pointwise spike diagnostic.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::system::SplineSolution;

/// Peak signal-to-noise ratio. A perfect reconstruction has no finite PSNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn check_shapes(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", reference.len()),
            found: format!("{} values", estimate.len()),
        });
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("cannot compare empty signals".into()));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let sum: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e).powi(2)).sum();
    Ok(sum / reference.len() as f64)
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Db(20.0 * (max_value / mse.sqrt()).log10())
    }
}

/// `20 log10(MAX / √MSE)`.
pub fn psnr(reference: &[f64], estimate: &[f64], max_value: f64) -> Result<Psnr> {
    if !(max_value > 0.0) {
        return Err(Error::InvalidArgument(format!("peak value must be positive, got {max_value}")));
    }
    Ok(psnr_from_mse(mse(reference, estimate)?, max_value))
}

pub fn max_abs_error(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_shapes(reference, estimate)?;
    Ok(reference.iter().zip(estimate).map(|(r, e)| (r - e).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr: Psnr,
    pub max_abs_error: f64,
}

impl QualityReport {
    pub fn compute(reference: &[f64], estimate: &[f64], max_value: f64) -> Result<Self> {
        Ok(Self {
            mse: mse(reference, estimate)?,
            psnr: psnr(reference, estimate, max_value)?,
            max_abs_error: max_abs_error(reference, estimate)?,
        })
    }
}

/// Largest nodal deviation from a reference function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub max_abs_error: f64,
    pub node: usize,
    pub location: Point,
}

/// `max_i |u_i − f(node_i)|` over the solution's grid nodes; ties keep the
/// lowest node index.
pub fn spike_diagnostic<F: Fn(f64, f64) -> f64>(solution: &SplineSolution, reference: F) -> Spike {
    let grid = &solution.grid;
    let mut best = Spike {
        max_abs_error: 0.0,
        node: 0,
        location: grid.node_point(0),
    };
    for (node, &u) in solution.coefficients.iter().enumerate() {
        let p = grid.node_point(node);
        let err = (u - reference(p.x, p.y)).abs();
        if err > best.max_abs_error {
            best = Spike {
                max_abs_error: err,
                node,
                location: p,
            };
        }
    }
    best
}

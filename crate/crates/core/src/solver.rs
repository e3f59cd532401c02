//! Preconditioned conjugate gradients for symmetric positive definite
//! operators given as closures.

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2};

/// Result of a converged conjugate-gradient run.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖b − Hx‖ / ‖b‖`, recomputed from the returned `x`.
    pub residual: f64,
    /// Smallest Rayleigh quotient `pᵀHp / pᵀp` over the search directions.
    pub min_curvature: f64,
}

/// Default iteration cap for `n` unknowns.
pub fn default_max_iter(n: usize) -> usize {
    10 * (n as f64).sqrt().ceil() as usize + 1000
}

/// Solves `H x = b` from `x = 0`.
///
/// `apply(x, y)` must overwrite `y` with `H x`; `precond(r, z)` must overwrite
/// `z` with `M⁻¹ r` for a symmetric positive definite `M`. Convergence is
/// declared on the true residual, never on the recursively updated one.
pub fn pcg<A, P>(b: &[f64], apply: A, precond: P, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    A: FnMut(&[f64], &mut [f64]),
    P: FnMut(&[f64], &mut [f64]),
{
    pcg_with_floor(b, apply, precond, |_| 0.0, tol, max_iter)
}

/// [`pcg`] that also stops once the true residual reaches `floor(x)`, the
/// relative residual that rounding in `H x` alone can produce. Large `λ`
/// pushes that floor above tight tolerances.
pub fn pcg_with_floor<A, P, F>(
    b: &[f64],
    mut apply: A,
    mut precond: P,
    mut floor: F,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    A: FnMut(&[f64], &mut [f64]),
    P: FnMut(&[f64], &mut [f64]),
    F: FnMut(&[f64]) -> f64,
{
    let n = b.len();
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: 0.0,
            min_curvature: f64::INFINITY,
        });
    }

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut hp = vec![0.0; n];
    let mut iterations = 0;
    let mut min_curvature = f64::INFINITY;
    let mut residual = 1.0;

    // Outer loop restarts from the true residual when the recursive one drifts.
    while iterations < max_iter {
        precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            apply(&p, &mut hp);
            let php = dot(&p, &hp);
            let pp = dot(&p, &p);
            if pp == 0.0 {
                break;
            }
            let curvature = php / pp;
            min_curvature = min_curvature.min(curvature);
            if !(curvature > 0.0) {
                return Err(Error::NotPositiveDefinite { curvature });
            }
            let alpha = rz / php;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * hp[i];
            }
            iterations += 1;
            if norm2(&r) / b_norm <= tol {
                break;
            }
            precond(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }

        apply(&x, &mut hp);
        for i in 0..n {
            r[i] = b[i] - hp[i];
        }
        residual = norm2(&r) / b_norm;
        let attainable = if residual <= tol { tol } else { floor(&x) };
        if residual <= tol.max(attainable) {
            if residual > tol {
                log::info!("pcg stopped at rounding floor: residual {residual:.3e} > tol {tol:.3e}");
            }
            log::debug!("pcg converged: {iterations} iterations, residual {residual:.3e}, min curvature {min_curvature:.3e}");
            return Ok(CgOutcome {
                x,
                iterations,
                residual,
                min_curvature,
            });
        }
    }
    Err(Error::IterationLimit { iterations, residual })
}

/// Identity preconditioner.
pub fn no_precond(r: &[f64], z: &mut [f64]) {
    z.copy_from_slice(r);
}

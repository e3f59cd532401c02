//! Synthetic corruption of pixel data and detection of impulsive pixels.
//!
//! Corruption always runs in the order Gaussian → clip to `[0, 1]` →
//! salt-and-pepper, and detection runs on the result.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixels at most this far from 0 or 1 count as impulses: half an 8-bit grey level.
pub const IMPULSE_EPSILON: f64 = 1.0 / 510.0;

// Separate key spaces so the two injectors never share random streams.
const GAUSSIAN_KEY: u64 = 0x6761_7573_7369_616e;
const IMPULSE_KEY: u64 = 0x7361_6c74_7065_7070;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub gaussian_variance: f64,
    pub impulse_density: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(gaussian_variance: f64, impulse_density: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            gaussian_variance,
            impulse_density,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_variance >= 0.0 && self.gaussian_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian variance must be finite and nonnegative, got {}",
                self.gaussian_variance
            )));
        }
        if !(0.0..=1.0).contains(&self.impulse_density) {
            return Err(Error::InvalidArgument(format!(
                "impulse density must lie in [0, 1], got {}",
                self.impulse_density
            )));
        }
        Ok(())
    }

    /// Gaussian noise, clipping, then salt-and-pepper.
    pub fn apply(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let mut out = add_gaussian(pixels, self.gaussian_variance, self.seed)?;
        clip_unit(&mut out);
        add_salt_pepper(&out, self.impulse_density, self.seed)
    }
}

/// Adds an independent `N(0, σ²)` draw to each value. The draw for value `i`
/// depends only on `(seed, i)`.
pub fn add_gaussian(values: &[f64], variance: f64, seed: u64) -> Result<Vec<f64>> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance must be nonnegative, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(values.to_vec());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let base = ChaCha8Rng::seed_from_u64(seed ^ GAUSSIAN_KEY);
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            v + normal.sample(&mut rng)
        })
        .collect())
}

pub fn clip_unit(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Sets `round(d · n)` distinct pixels, chosen uniformly, to 0 or 1 with equal
/// probability.
pub fn add_salt_pepper(pixels: &[f64], density: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("impulse density must lie in [0, 1], got {density}")));
    }
    let mut out = pixels.to_vec();
    let count = (density * pixels.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ IMPULSE_KEY);
    let mut chosen = index::sample(&mut rng, pixels.len(), count).into_vec();
    // Fix the salt/pepper draw order independently of the sampler's output order.
    chosen.sort_unstable();
    for i in chosen {
        out[i] = if rng.random::<bool>() { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Inclusion mask: `false` for pixels within [`IMPULSE_EPSILON`] of 0 or 1.
pub fn detect_impulses(pixels: &[f64]) -> Vec<bool> {
    pixels
        .iter()
        .map(|&v| v > IMPULSE_EPSILON && v < 1.0 - IMPULSE_EPSILON)
        .collect()
}

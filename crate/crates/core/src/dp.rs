//! Per-bidder clipping and Gaussian noising of regret gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::l2_norm;

fn default_clip_norm() -> f64 {
    1.0
}

fn default_enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Noise multiplier: per-coordinate noise std is `sigma * clip_norm`.
    pub sigma: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    /// When false the regret gradients pass through untouched.
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

impl DpConfig {
    pub fn new(sigma: f64, clip_norm: f64) -> Self {
        Self {
            sigma,
            clip_norm,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        Self {
            sigma: 0.0,
            clip_norm: f64::INFINITY,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("sigma", "must be finite and >= 0"));
        }
        if self.enabled && !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be > 0"));
        }
        Ok(())
    }

    /// Clip then noise. Identity when disabled.
    pub fn privatize<R: Rng + ?Sized>(&self, g: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if !self.enabled {
            return Ok(g.to_vec());
        }
        let clipped = clip_gradient(g, self.clip_norm)?;
        Ok(noise_gradient(&clipped, self.sigma, self.clip_norm, rng))
    }
}

/// `g / max(1, ||g||_2 / clip_norm)`.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(
            "cannot clip a non-finite gradient".into(),
        ));
    }
    let scale = (l2_norm(g) / clip_norm).max(1.0);
    if scale == 1.0 {
        return Ok(g.to_vec());
    }
    Ok(g.iter().map(|x| x / scale).collect())
}

/// Adds i.i.d. `N(0, (sigma * clip_norm)^2)` to every coordinate.
pub fn noise_gradient<R: Rng + ?Sized>(
    g_clipped: &[f64],
    sigma: f64,
    clip_norm: f64,
    rng: &mut R,
) -> Vec<f64> {
    if sigma == 0.0 {
        return g_clipped.to_vec();
    }
    let std = sigma * clip_norm;
    g_clipped
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            x + std * z
        })
        .collect()
}

//! Post-hoc (epsilon, delta) accounting for repeated Gaussian releases.
//!
//! Every training step releases one noised regret gradient per bidder, each
//! a Gaussian mechanism with sensitivity `C` and noise `sigma * C`. The
//! Renyi bound of such a release at order `alpha` is `alpha / (2 sigma^2)`;
//! these add up across releases and convert to `(epsilon, delta)` through
//! `epsilon = rdp + ln(1/delta) / (alpha - 1)`, minimized over a fixed
//! order grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `{1.5, 2, 3, ..., 256}`.
pub fn alpha_grid() -> Vec<f64> {
    std::iter::once(1.5)
        .chain((2..=256).map(f64::from))
        .collect()
}

/// Gaussian-mechanism tail bound `(4/5) exp(-(sigma * epsilon)^2 / 2)`.
pub fn single_step_delta(sigma: f64, epsilon: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidValue(format!(
            "sigma must be > 0 (got {sigma})"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidValue(format!(
            "epsilon must be > 0 (got {epsilon})"
        )));
    }
    Ok(0.8 * (-(sigma * epsilon).powi(2) / 2.0).exp())
}

/// Variant with exponent `-sigma * epsilon^2 / 2` instead of `-(sigma * epsilon)^2 / 2`.
/// Kept for side-by-side reporting only.
pub fn single_step_delta_linear_sigma(sigma: f64, epsilon: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidValue("sigma and epsilon must be > 0".into()));
    }
    Ok(0.8 * (-sigma * epsilon * epsilon / 2.0).exp())
}

/// Epsilon after composing `total_steps` Gaussian releases, with the
/// minimizing Renyi order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdpEpsilon {
    pub epsilon: f64,
    pub alpha: f64,
}

pub fn compose_rdp(sigma: f64, total_steps: u64, target_delta: f64) -> Result<RdpEpsilon> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidValue(format!(
            "sigma must be finite and > 0 (got {sigma})"
        )));
    }
    if total_steps == 0 {
        return Err(Error::InvalidValue("total_steps must be >= 1".into()));
    }
    if !(target_delta > 0.0 && target_delta < 1.0) {
        return Err(Error::InvalidValue(format!(
            "target delta must lie in (0, 1) (got {target_delta})"
        )));
    }
    let steps = total_steps as f64;
    let log_inv_delta = (1.0 / target_delta).ln();
    let best = alpha_grid()
        .into_iter()
        .map(|alpha| RdpEpsilon {
            epsilon: steps * alpha / (2.0 * sigma * sigma) + log_inv_delta / (alpha - 1.0),
            alpha,
        })
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .expect("alpha grid is nonempty");
    Ok(best)
}

/// Naive composition: `(T * epsilon, T * delta)`.
pub fn basic_compose(per_step_epsilon: f64, per_step_delta: f64, total_steps: u64) -> (f64, f64) {
    let t = total_steps as f64;
    (t * per_step_epsilon, t * per_step_delta)
}

/// Count of noised releases during one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub steps: u64,
    pub sigma: f64,
    pub mechanisms_per_step: u64,
}

impl PrivacyLedger {
    pub fn new(sigma: f64, mechanisms_per_step: u64) -> Self {
        Self {
            steps: 0,
            sigma,
            mechanisms_per_step,
        }
    }

    /// Records one training step (one release per bidder).
    pub fn record_step(&mut self) {
        self.steps += self.mechanisms_per_step;
    }

    /// `None` when no finite epsilon exists (zero noise or no releases).
    pub fn report(&self, target_delta: f64) -> Result<Option<AccountantReport>> {
        if self.sigma <= 0.0 || self.steps == 0 {
            return Ok(None);
        }
        let r = compose_rdp(self.sigma, self.steps, target_delta)?;
        Ok(Some(AccountantReport {
            sigma: self.sigma,
            steps: self.steps,
            delta: target_delta,
            epsilon: r.epsilon,
            alpha_star: r.alpha,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantReport {
    pub sigma: f64,
    pub steps: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub alpha_star: f64,
}

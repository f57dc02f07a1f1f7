//! One-shot regret-constrained training on a single bid profile.
//!
//! Each outer step:
//! 1. every bidder's misreport is drawn uniformly from the valuation box and
//!    improved by projected gradient ascent on its own utility,
//! 2. the parameter gradient of each bidder's utility gap (misreport minus
//!    truthful, both valued at the reported row) is clipped and noised,
//! 3. the parameters take a descent step on the augmented Lagrangian
//!    `-revenue + sum_i lambda_i rgt_i + rho/2 sum_i rgt_i^2`,
//! 4. every `Q` steps the multipliers move by `rho * rgt_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyLedger;
use crate::dp::{clip_gradient, noise_gradient, DpConfig};
use crate::error::{Error, Result};
use crate::net::{
    self, evaluate_with_gradients, init_params, l2_norm, AuctionParams, NetworkConfig, Objective,
};
use crate::rng;
use crate::valuations::BidProfile;

/// Which per-bidder regret gradient enters the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegretGradientSource {
    /// Clipped and noised.
    #[default]
    Privatized,
    /// Unmodified; the privatized copy is still computed for the trace.
    Raw,
}

fn default_eta() -> f64 {
    1e-3
}
fn default_gamma() -> f64 {
    0.1
}
fn default_gamma_steps() -> usize {
    25
}
fn default_total_steps() -> usize {
    1000
}
fn default_q() -> usize {
    10
}
fn default_rho() -> f64 {
    1.0
}
fn default_upper() -> f64 {
    1.0
}
fn default_divergence_norm() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_gamma_steps")]
    pub gamma_steps: usize,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "default_q")]
    pub lagrange_update_every: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Added to rho after every multiplier update.
    #[serde(default)]
    pub rho_increment: f64,
    pub dp: DpConfig,
    #[serde(default)]
    pub seed: u64,
    /// Upper edge of the bid box `[0, upper]^m` misreports are clamped to.
    #[serde(default = "default_upper")]
    pub valuation_upper: f64,
    #[serde(default)]
    pub regret_gradient: RegretGradientSource,
    #[serde(default = "default_divergence_norm")]
    pub divergence_norm: f64,
}

impl TrainConfig {
    pub fn new(dp: DpConfig) -> Self {
        Self {
            eta: default_eta(),
            gamma: default_gamma(),
            gamma_steps: default_gamma_steps(),
            total_steps: default_total_steps(),
            lagrange_update_every: default_q(),
            rho: default_rho(),
            rho_increment: 0.0,
            dp,
            seed: 0,
            valuation_upper: default_upper(),
            regret_gradient: RegretGradientSource::default(),
            divergence_norm: default_divergence_norm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta", "must be finite and > 0"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config("gamma", "must be finite and > 0"));
        }
        if self.lagrange_update_every == 0 {
            return Err(Error::config("lagrange_update_every", "must be at least 1"));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::config("rho", "must be finite and >= 0"));
        }
        if !(self.rho_increment >= 0.0) || !self.rho_increment.is_finite() {
            return Err(Error::config("rho_increment", "must be finite and >= 0"));
        }
        if !(self.valuation_upper > 0.0) || !self.valuation_upper.is_finite() {
            return Err(Error::config("valuation_upper", "must be finite and > 0"));
        }
        if !(self.divergence_norm > 0.0) {
            return Err(Error::config("divergence_norm", "must be > 0"));
        }
        self.dp.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeState {
    pub lambda: Vec<f64>,
    pub rho: f64,
}

impl LagrangeState {
    pub fn new(n: usize, rho: f64) -> Self {
        Self {
            lambda: vec![0.0; n],
            rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderStep {
    pub regret: f64,
    /// Multiplier after this step's update.
    pub lambda: f64,
    pub grad_norm_pre: f64,
    /// Norm after clipping, before noise.
    pub grad_norm_post: f64,
    pub misreport_utility_init: f64,
    pub misreport_utility_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Revenue on the training profile before the update.
    pub revenue: f64,
    pub bidders: Vec<BidderStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub steps: Vec<StepRecord>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAuction {
    pub params: AuctionParams,
    pub trace: TrainingTrace,
    pub ledger: PrivacyLedger,
    pub lagrange: LagrangeState,
}

/// Result of misreport ascent for one bidder.
#[derive(Debug, Clone, PartialEq)]
pub struct Misreport {
    pub bid: Vec<f64>,
    pub initial_utility: f64,
    pub final_utility: f64,
}

/// Projected gradient ascent on bidder `i`'s utility (valued at its true
/// row `b_i`) over its own report, starting from a uniform draw on
/// `[0, upper]^m`.
pub fn optimize_misreport<R: Rng + ?Sized>(
    w: &AuctionParams,
    b: &BidProfile,
    i: usize,
    gamma: f64,
    gamma_steps: usize,
    upper: f64,
    rng: &mut R,
) -> Result<Misreport> {
    if i >= b.n() {
        return Err(Error::Index {
            what: "bidder",
            index: i,
            len: b.n(),
        });
    }
    let m = b.m();
    let truth = b.row(i).to_vec();
    let objective = Objective::Utility {
        bidder: i,
        valuation: truth,
    };
    let mut bid: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=upper)).collect();
    let mut initial_utility = None;
    for _ in 0..gamma_steps {
        let report = b.replace_bidder(i, &bid)?;
        let (u, db, _) = evaluate_with_gradients(w, &report, &objective, false)?;
        initial_utility.get_or_insert(u);
        for (x, g) in bid.iter_mut().zip(&db[i * m..(i + 1) * m]) {
            *x = (*x + gamma * g).clamp(0.0, upper);
        }
    }
    let final_utility = net::utility(w, b.row(i), &b.replace_bidder(i, &bid)?, i)?;
    if !final_utility.is_finite() {
        return Err(Error::InvalidValue("non-finite misreport utility".into()));
    }
    Ok(Misreport {
        bid,
        initial_utility: initial_utility.unwrap_or(final_utility),
        final_utility,
    })
}

fn truthful_utility(b: &BidProfile, i: usize) -> Objective {
    Objective::Utility {
        bidder: i,
        valuation: b.row(i).to_vec(),
    }
}

/// `u_i(b_i; (v'_i, b_-i)) - u_i(b_i; b)` and its parameter gradient.
pub fn regret_gap_and_gradient(
    w: &AuctionParams,
    b: &BidProfile,
    i: usize,
    misreport: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let objective = truthful_utility(b, i);
    let report = b.replace_bidder(i, misreport)?;
    let (u_mis, _, g_mis) = evaluate_with_gradients(w, &report, &objective, true)?;
    let (u_true, _, g_true) = evaluate_with_gradients(w, b, &objective, true)?;
    let grad = g_mis
        .expect("requested")
        .iter()
        .zip(g_true.expect("requested"))
        .map(|(a, t)| a - t)
        .collect();
    Ok((u_mis - u_true, grad))
}

pub fn regret_gradient(
    w: &AuctionParams,
    b: &BidProfile,
    i: usize,
    misreport: &[f64],
) -> Result<Vec<f64>> {
    Ok(regret_gap_and_gradient(w, b, i, misreport)?.1)
}

/// Utility gain of the misreport over truthful reporting, floored at zero.
pub fn empirical_regret(
    w: &AuctionParams,
    b: &BidProfile,
    i: usize,
    misreport: &[f64],
) -> Result<f64> {
    let report = b.replace_bidder(i, misreport)?;
    let gap = net::utility(w, b.row(i), &report, i)? - net::utility(w, b.row(i), b, i)?;
    Ok(gap.max(0.0))
}

/// `-grad(revenue) + sum_i (lambda_i + rho * regret_i) * g_i`.
pub fn combine_lagrangian(
    revenue_grad: &[f64],
    lambda: &[f64],
    rho: f64,
    regret_grads: &[Vec<f64>],
    regrets: &[f64],
) -> Result<Vec<f64>> {
    let n = lambda.len();
    for (what, len) in [
        ("regret gradients", regret_grads.len()),
        ("regrets", regrets.len()),
    ] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let mut out: Vec<f64> = revenue_grad.iter().map(|g| -g).collect();
    for ((g, l), r) in regret_grads.iter().zip(lambda).zip(regrets) {
        if g.len() != out.len() {
            return Err(Error::Dimension {
                what: "regret gradient length",
                expected: out.len(),
                got: g.len(),
            });
        }
        let weight = l + rho * r;
        if weight == 0.0 {
            continue;
        }
        for (o, gi) in out.iter_mut().zip(g) {
            *o += weight * gi;
        }
    }
    Ok(out)
}

/// Lagrangian gradient at `(w, b)` given the per-bidder regret gradients
/// that should enter it.
pub fn lagrangian_gradient(
    w: &AuctionParams,
    b: &BidProfile,
    lambda: &[f64],
    rho: f64,
    regret_grads: &[Vec<f64>],
    regrets: &[f64],
) -> Result<Vec<f64>> {
    let revenue_grad = net::grad_params(w, b, &Objective::Revenue)?;
    combine_lagrangian(&revenue_grad, lambda, rho, regret_grads, regrets)
}

fn diverged(step: usize, reason: String, trace: &TrainingTrace) -> Error {
    Error::Diverged {
        step,
        reason,
        trace: Box::new(trace.clone()),
    }
}

/// Trains one auction on the single profile `b`.
pub fn train_one_shot(
    b: &BidProfile,
    net_config: &NetworkConfig,
    config: &TrainConfig,
) -> Result<TrainedAuction> {
    config.validate()?;
    net_config.validate()?;
    if b.n() != net_config.n || b.m() != net_config.m {
        return Err(Error::Dimension {
            what: "training profile size (n*m)",
            expected: net_config.n * net_config.m,
            got: b.n() * b.m(),
        });
    }
    train_from(init_params(net_config, config.seed)?, b, config)
}

/// Runs the training loop from the given initial parameters.
pub fn train_from(
    mut w: AuctionParams,
    b: &BidProfile,
    config: &TrainConfig,
) -> Result<TrainedAuction> {
    config.validate()?;
    let n = b.n();
    let dp = &config.dp;
    let mut lagrange = LagrangeState::new(n, config.rho);
    let ledger_sigma = if dp.enabled { dp.sigma } else { 0.0 };
    let mut ledger = PrivacyLedger::new(ledger_sigma, n as u64);
    let mut trace = TrainingTrace {
        steps: Vec::with_capacity(config.total_steps),
    };

    for t in 0..config.total_steps {
        let wrap = |e: Error, trace: &TrainingTrace| match e {
            Error::NonFinite { .. } => diverged(t, e.to_string(), trace),
            other => other,
        };

        let mut misreports = Vec::with_capacity(n);
        let mut regrets = Vec::with_capacity(n);
        let mut used_grads = Vec::with_capacity(n);
        let mut bidder_records = Vec::with_capacity(n);
        for i in 0..n {
            let mut mis_rng = rng::stream(config.seed, &[rng::TAG_MISREPORT, t as u64, i as u64]);
            let mis = optimize_misreport(
                &w,
                b,
                i,
                config.gamma,
                config.gamma_steps,
                config.valuation_upper,
                &mut mis_rng,
            )
            .map_err(|e| wrap(e, &trace))?;
            let (gap, raw) =
                regret_gap_and_gradient(&w, b, i, &mis.bid).map_err(|e| wrap(e, &trace))?;
            let grad_norm_pre = l2_norm(&raw);

            let (privatized, grad_norm_post) = if dp.enabled {
                let clipped = clip_gradient(&raw, dp.clip_norm).map_err(|e| wrap(e, &trace))?;
                let post = l2_norm(&clipped);
                let mut noise_rng = rng::stream(config.seed, &[rng::TAG_NOISE, t as u64, i as u64]);
                (
                    noise_gradient(&clipped, dp.sigma, dp.clip_norm, &mut noise_rng),
                    post,
                )
            } else {
                (raw.clone(), grad_norm_pre)
            };
            used_grads.push(match config.regret_gradient {
                RegretGradientSource::Privatized => privatized,
                RegretGradientSource::Raw => raw,
            });
            regrets.push(gap.max(0.0));
            bidder_records.push(BidderStep {
                regret: gap.max(0.0),
                lambda: 0.0,
                grad_norm_pre,
                grad_norm_post,
                misreport_utility_init: mis.initial_utility,
                misreport_utility_final: mis.final_utility,
            });
            misreports.push(mis.bid);
        }
        ledger.record_step();

        let (revenue, _, rev_grad) = evaluate_with_gradients(&w, b, &Objective::Revenue, true)
            .map_err(|e| wrap(e, &trace))?;
        let direction = combine_lagrangian(
            &rev_grad.expect("requested"),
            &lagrange.lambda,
            lagrange.rho,
            &used_grads,
            &regrets,
        )?;
        w.add_scaled(-config.eta, &direction)?;

        let norm = w.norm();
        if !norm.is_finite() || norm > config.divergence_norm {
            return Err(diverged(
                t,
                format!(
                    "parameter norm {norm:.4e} exceeds {:.1e}",
                    config.divergence_norm
                ),
                &trace,
            ));
        }

        if t % config.lagrange_update_every == 0 {
            for (i, mis) in misreports.iter().enumerate() {
                let r = empirical_regret(&w, b, i, mis).map_err(|e| wrap(e, &trace))?;
                lagrange.lambda[i] += lagrange.rho * r;
            }
            lagrange.rho += config.rho_increment;
        }
        for (rec, l) in bidder_records.iter_mut().zip(&lagrange.lambda) {
            rec.lambda = *l;
        }
        trace.steps.push(StepRecord {
            step: t,
            revenue,
            bidders: bidder_records,
        });
    }

    Ok(TrainedAuction {
        params: w,
        trace,
        ledger,
        lagrange,
    })
}

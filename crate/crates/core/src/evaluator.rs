//! Regret measurement for the one-shot learner by misreport enumeration.
//!
//! For a valuation profile `v`, one auction `A_0` is trained on `v` and one
//! auction `A_j` on every profile where the first bidder's row is replaced
//! by the `j`-th grid misreport. The first bidder's regret is the best
//! utility it obtains across the `A_j` (always valued with its true row)
//! minus its utility under `A_0`. Training noise makes the learner itself
//! the mechanism under test, so each report retrains from scratch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{self, NetworkConfig, Outcome};
use crate::rng;
use crate::trainer::{train_one_shot, TrainConfig};
use crate::valuations::{
    enumerate_misreports, sample_profile, BidProfile, ValuationGrid, DEFAULT_MISREPORT_CAP,
};

/// The bidder whose misreports are enumerated.
pub const MISREPORTER: usize = 0;

/// A misreport outperforms truthful reporting when its utility exceeds the
/// truthful one by more than this.
pub const OUTPERFORM_TOL: f64 = 1e-9;

/// How training randomness is assigned to the auctions of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedScheme {
    /// Every auction of a sample shares one seed; auctions differ only by
    /// their training profile. With zero noise the truthful misreport then
    /// reproduces `A_0` exactly.
    Common,
    /// Each auction gets its own seed derived from `(master, sample, j)`.
    #[default]
    PerMisreport,
}

fn default_cap() -> usize {
    DEFAULT_MISREPORT_CAP
}
fn default_benchmark() -> f64 {
    2.10
}
fn default_true() -> bool {
    true
}
fn default_samples() -> usize {
    1
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default)]
    pub grid: ValuationGrid,
    #[serde(default = "default_cap")]
    pub misreport_cap: usize,
    /// Reference revenue for the beta ratio.
    #[serde(default = "default_benchmark")]
    pub benchmark: f64,
    /// Also measure the regret of bidder 1, who always reports truthfully.
    #[serde(default = "default_true")]
    pub measure_truthful_agent: bool,
    #[serde(default)]
    pub seed_scheme: SeedScheme,
    /// Valuation samples per seed.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: ValuationGrid::default(),
            misreport_cap: default_cap(),
            benchmark: default_benchmark(),
            measure_truthful_agent: true,
            seed_scheme: SeedScheme::default(),
            samples: default_samples(),
            seeds: default_seeds(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.misreport_cap == 0 {
            return Err(Error::config("misreport_cap", "must be at least 1"));
        }
        if !(self.benchmark > 0.0) || !self.benchmark.is_finite() {
            return Err(Error::config("benchmark", "must be finite and > 0"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        Ok(())
    }
}

/// Metrics of one trained auction evaluated on the profile it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionMetrics {
    /// Misreporter's utility, valued with its true row.
    pub u1: f64,
    pub revenue: f64,
    /// Utility of the truthful observer bidder, if measured.
    pub u_truthful: Option<f64>,
}

/// One trained auction within a sample: `j = 0` is `A_0` on the true
/// profile, `j >= 1` the enumerated misreports in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub j: usize,
    pub misreport: Vec<f64>,
    pub result: std::result::Result<AuctionMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: u64,
    pub profile: BidProfile,
    /// `A_0` followed by one record per misreport.
    pub records: Vec<AuctionRecord>,
    /// First training failure, if any.
    pub failure: Option<String>,
    pub truthful_utility: Option<f64>,
    pub regret: Option<f64>,
    pub truthful_agent_regret: Option<f64>,
    pub min_revenue: Option<f64>,
    pub beta: Option<Beta>,
    pub outperforming_count: usize,
}

impl SampleReport {
    pub fn truthful(&self) -> Option<&AuctionMetrics> {
        self.records.first().and_then(|r| r.result.as_ref().ok())
    }

    pub fn misreports(&self) -> impl Iterator<Item = (&AuctionRecord, &AuctionMetrics)> {
        self.records
            .iter()
            .skip(1)
            .filter_map(|r| r.result.as_ref().ok().map(|m| (r, m)))
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// `benchmark / performance`, flagged when performance is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub value: f64,
    /// True when performance was nonpositive and `value` is infinite.
    pub degenerate: bool,
}

pub fn beta_approximation(performance: f64, benchmark: f64) -> Result<Beta> {
    if !(benchmark > 0.0) {
        return Err(Error::InvalidValue(format!(
            "benchmark must be > 0 (got {benchmark})"
        )));
    }
    if performance > 0.0 {
        Ok(Beta {
            value: benchmark / performance,
            degenerate: false,
        })
    } else {
        Ok(Beta {
            value: f64::INFINITY,
            degenerate: true,
        })
    }
}

/// Best misreport utility minus truthful utility. Not floored.
pub fn agent1_regret(truthful_utility: f64, misreport_utilities: &[f64]) -> Result<f64> {
    let best = misreport_utilities
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::InvalidValue("regret needs at least one misreport utility".into()))?;
    Ok(best - truthful_utility)
}

/// Minimum revenue over every successfully trained auction of the sample.
pub fn min_revenue(report: &SampleReport) -> Option<f64> {
    report
        .records
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .map(|m| m.revenue)
        .reduce(f64::min)
}

fn auction_seed(master: u64, sample_id: u64, j: usize, scheme: SeedScheme) -> u64 {
    let base = rng::derive_seed(master, &[rng::TAG_AUCTION, sample_id]);
    match scheme {
        SeedScheme::Common => base,
        SeedScheme::PerMisreport => rng::derive_seed(base, &[j as u64]),
    }
}

fn truthful_observer(n: usize, eval: &EvalConfig) -> Option<usize> {
    (eval.measure_truthful_agent && n > 1).then_some(MISREPORTER + 1)
}

fn train_and_measure(
    v: &BidProfile,
    report: &BidProfile,
    net_config: &NetworkConfig,
    train: &TrainConfig,
    observer: Option<usize>,
) -> Result<AuctionMetrics> {
    let trained = train_one_shot(report, net_config, train)?;
    let w = &trained.params;
    let outcome: Outcome = net::outcome(w, report)?;
    let value = |i: usize| -> f64 {
        v.row(i)
            .iter()
            .zip(outcome.allocation.row(i))
            .map(|(a, z)| a * z)
            .sum()
    };
    Ok(AuctionMetrics {
        u1: value(MISREPORTER) - outcome.payments[MISREPORTER],
        revenue: outcome.revenue(),
        u_truthful: observer.map(|k| value(k) - outcome.payments[k]),
    })
}

/// Trains `A_0` and every misreport auction for one valuation profile.
/// `train.seed` is the master seed. Training failures are recorded in the
/// report rather than returned.
pub fn evaluate_sample(
    v: &BidProfile,
    sample_id: u64,
    net_config: &NetworkConfig,
    train: &TrainConfig,
    eval: &EvalConfig,
) -> Result<SampleReport> {
    let misreports = enumerate_misreports(&eval.grid, v.m(), eval.misreport_cap)?;
    let observer = truthful_observer(v.n(), eval);

    let jobs: Vec<(usize, Vec<f64>)> = std::iter::once(v.row(MISREPORTER).to_vec())
        .chain(misreports)
        .enumerate()
        .collect();
    let records: Vec<AuctionRecord> = jobs
        .into_par_iter()
        .map(|(j, misreport)| {
            let result = (|| {
                let report = v.replace_bidder(MISREPORTER, &misreport)?;
                let mut cfg = train.clone();
                cfg.seed = auction_seed(train.seed, sample_id, j, eval.seed_scheme);
                train_and_measure(v, &report, net_config, &cfg, observer)
            })();
            AuctionRecord {
                j,
                misreport,
                result: result.map_err(|e| e.to_string()),
            }
        })
        .collect();

    Ok(assemble_report(
        sample_id,
        v.clone(),
        records,
        eval.benchmark,
    ))
}

/// Builds the aggregates of a report from its per-auction records.
pub fn assemble_report(
    sample_id: u64,
    profile: BidProfile,
    records: Vec<AuctionRecord>,
    benchmark: f64,
) -> SampleReport {
    let failure = records.iter().find_map(|r| {
        r.result
            .as_ref()
            .err()
            .map(|e| format!("auction {}: {e}", r.j))
    });
    let truthful = records
        .first()
        .and_then(|r| r.result.as_ref().ok())
        .cloned();
    let successes: Vec<&AuctionMetrics> = records
        .iter()
        .skip(1)
        .filter_map(|r| r.result.as_ref().ok())
        .collect();

    let truthful_utility = truthful.as_ref().map(|t| t.u1);
    let utilities: Vec<f64> = successes.iter().map(|m| m.u1).collect();
    let regret = truthful_utility.and_then(|u0| agent1_regret(u0, &utilities).ok());
    let truthful_agent_regret = truthful.as_ref().and_then(|t| {
        let u0 = t.u_truthful?;
        let us: Vec<f64> = successes.iter().filter_map(|m| m.u_truthful).collect();
        agent1_regret(u0, &us).ok()
    });
    let outperforming_count = truthful_utility.map_or(0, |u0| {
        utilities
            .iter()
            .filter(|u| **u > u0 + OUTPERFORM_TOL)
            .count()
    });

    let mut report = SampleReport {
        sample_id,
        profile,
        records,
        failure,
        truthful_utility,
        regret,
        truthful_agent_regret,
        min_revenue: None,
        beta: None,
        outperforming_count,
    };
    report.min_revenue = min_revenue(&report);
    report.beta = report
        .min_revenue
        .and_then(|r| beta_approximation(r, benchmark).ok());
    report
}

/// Aggregates over every sample and seed run at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `None` for the run with differential privacy disabled.
    pub sigma: Option<f64>,
    pub max_regret_misreporter: Option<f64>,
    pub max_regret_truthful: Option<f64>,
    pub min_revenue: Option<f64>,
    /// Mean over seeds of the per-seed minimum revenue.
    pub mean_min_revenue: Option<f64>,
    pub mean_regret_misreporter: Option<f64>,
    pub beta: Option<Beta>,
    pub outperforming_count: usize,
    pub samples: usize,
    pub failed_samples: usize,
}

impl SweepRow {
    pub fn sigma_label(&self) -> String {
        match self.sigma {
            Some(s) => s.to_string(),
            None => "no-dp".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Per-row sample reports, ordered by `(seed, sample)`.
    pub reports: Vec<Vec<SampleReport>>,
}

fn max_opt(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.reduce(f64::max)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregates reports grouped by seed (`by_seed[k]` are seed `k`'s samples).
pub fn aggregate_row(
    sigma: Option<f64>,
    by_seed: &[Vec<SampleReport>],
    benchmark: f64,
) -> SweepRow {
    let all: Vec<&SampleReport> = by_seed.iter().flatten().collect();
    let min_revenue = all.iter().filter_map(|r| r.min_revenue).reduce(f64::min);
    let per_seed_min: Vec<f64> = by_seed
        .iter()
        .filter_map(|reports| {
            reports
                .iter()
                .filter_map(|r| r.min_revenue)
                .reduce(f64::min)
        })
        .collect();
    let regrets: Vec<f64> = all.iter().filter_map(|r| r.regret).collect();
    SweepRow {
        sigma,
        max_regret_misreporter: max_opt(regrets.iter().copied()),
        max_regret_truthful: max_opt(all.iter().filter_map(|r| r.truthful_agent_regret)),
        min_revenue,
        mean_min_revenue: mean(&per_seed_min),
        mean_regret_misreporter: mean(&regrets),
        beta: min_revenue.and_then(|r| beta_approximation(r, benchmark).ok()),
        outperforming_count: all.iter().map(|r| r.outperforming_count).sum(),
        samples: all.len(),
        failed_samples: all.iter().filter(|r| r.is_failed()).count(),
    }
}

/// Profile for `(seed, sample)`; shared across noise levels so rows of a
/// sweep are paired comparisons.
pub fn sweep_profile(
    eval: &EvalConfig,
    n: usize,
    m: usize,
    seed: u64,
    sample: usize,
) -> Result<BidProfile> {
    sample_profile(
        &eval.grid,
        n,
        m,
        rng::derive_seed(seed, &[rng::TAG_SAMPLE, sample as u64]),
    )
}

/// Runs the full evaluation for every noise level (`None` disables
/// differential privacy), seed and sample.
pub fn sweep_sigma(
    net_config: &NetworkConfig,
    base_train: &TrainConfig,
    eval: &EvalConfig,
    sigmas: &[Option<f64>],
) -> Result<SweepReport> {
    if sigmas.is_empty() {
        return Err(Error::config(
            "sigmas",
            "must list at least one noise level",
        ));
    }
    eval.validate()?;
    let (n, m) = (net_config.n, net_config.m);
    // Fail fast on the cap before any training.
    enumerate_misreports(&eval.grid, m, eval.misreport_cap)?;

    let mut rows = Vec::with_capacity(sigmas.len());
    let mut reports = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut train = base_train.clone();
        match sigma {
            Some(s) => {
                train.dp.sigma = s;
                train.dp.enabled = true;
            }
            None => train.dp = crate::dp::DpConfig::disabled(),
        }
        let jobs: Vec<(usize, u64, usize)> = eval
            .seeds
            .iter()
            .enumerate()
            .flat_map(|(k, &seed)| (0..eval.samples).map(move |s| (k, seed, s)))
            .collect();
        let results: Vec<Result<(usize, SampleReport)>> = jobs
            .into_par_iter()
            .map(|(k, seed, s)| {
                let v = sweep_profile(eval, n, m, seed, s)?;
                let mut cfg = train.clone();
                cfg.seed = seed;
                let sample_id = (k * eval.samples + s) as u64;
                Ok((k, evaluate_sample(&v, sample_id, net_config, &cfg, eval)?))
            })
            .collect();
        let mut by_seed: Vec<Vec<SampleReport>> = vec![Vec::new(); eval.seeds.len()];
        for r in results {
            let (k, report) = r?;
            by_seed[k].push(report);
        }
        rows.push(aggregate_row(sigma, &by_seed, eval.benchmark));
        reports.push(by_seed.into_iter().flatten().collect());
    }
    Ok(SweepReport { rows, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::DpConfig;

    fn frozen_setup(n: usize, m: usize) -> (NetworkConfig, TrainConfig) {
        let mut net = NetworkConfig::new(n, m).with_hidden(1, 4);
        net.init_gain = 0.0;
        let mut train = TrainConfig::new(DpConfig::disabled());
        train.total_steps = 0;
        (net, train)
    }

    #[test]
    fn agent1_regret_examples() {
        assert_eq!(agent1_regret(0.5, &[0.2, 0.5]).unwrap(), 0.0);
        assert!((agent1_regret(0.4, &[0.1]).unwrap() + 0.3).abs() < 1e-15);
        assert!(agent1_regret(0.4, &[]).is_err());
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_approximation(2.0, 2.0).unwrap().value, 1.0);
        assert!((beta_approximation(1.71, 2.10).unwrap().value - 1.228).abs() < 1e-3);
        assert!((beta_approximation(1.191, 2.10).unwrap().value - 1.763).abs() < 1e-3);
        let b = beta_approximation(0.0, 2.10).unwrap();
        assert!(b.degenerate && b.value.is_infinite());
        assert!(beta_approximation(1.0, 0.0).is_err());
    }

    #[test]
    fn frozen_net_regret_is_nonnegative_and_rescans() {
        let (net, train) = frozen_setup(2, 2);
        let v = BidProfile::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let eval = EvalConfig {
            seed_scheme: SeedScheme::Common,
            ..EvalConfig::default()
        };
        let report = evaluate_sample(&v, 0, &net, &train, &eval).unwrap();
        assert_eq!(report.records.len(), 5);
        assert!(report.failure.is_none());
        let regret = report.regret.unwrap();
        assert!(regret >= 0.0);

        let u0 = report.truthful().unwrap().u1;
        let rescan = report
            .misreports()
            .map(|(_, m)| m.u1 - u0)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(regret, rescan);
        let min_rev = report
            .records
            .iter()
            .map(|r| r.result.as_ref().unwrap().revenue)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.min_revenue.unwrap(), min_rev);
    }

    #[test]
    fn misreport_count_matches_grid() {
        let (net, train) = frozen_setup(5, 3);
        let v = BidProfile::new(5, 3, vec![1.0; 15]).unwrap();
        let report = evaluate_sample(&v, 0, &net, &train, &EvalConfig::default()).unwrap();
        assert_eq!(report.records.len(), 9);
        assert_eq!(report.records[1].misreport, vec![0.0, 0.0, 0.0]);
        assert_eq!(report.records[8].misreport, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn cap_violation_is_an_error() {
        let (net, train) = frozen_setup(1, 3);
        let v = BidProfile::new(1, 3, vec![1.0; 3]).unwrap();
        let eval = EvalConfig {
            misreport_cap: 4,
            ..EvalConfig::default()
        };
        assert!(matches!(
            evaluate_sample(&v, 0, &net, &train, &eval),
            Err(Error::MisreportCap { .. })
        ));
    }

    #[test]
    fn training_failures_are_recorded() {
        let net = NetworkConfig::new(2, 1).with_hidden(1, 4);
        let mut train = TrainConfig::new(DpConfig::disabled());
        train.eta = 1e12;
        train.total_steps = 20;
        train.gamma_steps = 1;
        let v = BidProfile::from_rows(&[[1.0], [1.0]]).unwrap();
        let report = evaluate_sample(&v, 3, &net, &train, &EvalConfig::default()).unwrap();
        assert!(report.is_failed());
        assert_eq!(report.records.len(), 3);
        assert!(report.failure.as_ref().unwrap().contains("diverged"));
    }

    #[test]
    fn single_sample_sweep_row_matches_report() {
        let (net, train) = frozen_setup(2, 1);
        let eval = EvalConfig::default();
        let sweep = sweep_sigma(&net, &train, &eval, &[Some(0.0)]).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        let row = &sweep.rows[0];
        let report = &sweep.reports[0][0];
        assert_eq!(row.max_regret_misreporter, report.regret);
        assert_eq!(row.max_regret_truthful, report.truthful_agent_regret);
        assert_eq!(row.min_revenue, report.min_revenue);
        assert_eq!(row.mean_min_revenue, report.min_revenue);
        assert_eq!(row.outperforming_count, report.outperforming_count);
        assert_eq!(row.samples, 1);
    }

    #[test]
    fn sweep_rejects_empty_sigma_list() {
        let (net, train) = frozen_setup(2, 1);
        assert!(sweep_sigma(&net, &train, &EvalConfig::default(), &[]).is_err());
    }

    #[test]
    fn seed_schemes() {
        assert_eq!(
            auction_seed(1, 2, 0, SeedScheme::Common),
            auction_seed(1, 2, 5, SeedScheme::Common)
        );
        assert_ne!(
            auction_seed(1, 2, 0, SeedScheme::PerMisreport),
            auction_seed(1, 2, 5, SeedScheme::PerMisreport)
        );
        assert_ne!(
            auction_seed(1, 2, 0, SeedScheme::Common),
            auction_seed(1, 3, 0, SeedScheme::Common)
        );
    }
}

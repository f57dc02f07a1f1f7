//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use oneshot_auction::net::{self, AuctionParams, NetworkConfig, Objective};
use oneshot_auction::BidProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;

/// Objective value computed from a plain forward evaluation only.
pub fn objective_value(w: &AuctionParams, b: &BidProfile, objective: &Objective) -> f64 {
    match objective {
        Objective::Constant(c) => *c,
        Objective::Revenue => net::revenue(w, b).unwrap(),
        Objective::Payment(i) => net::outcome(w, b).unwrap().payments[*i],
        Objective::Utility { bidder, valuation } => net::utility(w, valuation, b, *bidder).unwrap(),
        Objective::Combination(parts) => parts
            .iter()
            .map(|(c, o)| c * objective_value(w, b, o))
            .sum(),
    }
}

/// Central differences over every flat parameter.
pub fn fd_params(w: &AuctionParams, f: impl Fn(&AuctionParams) -> f64) -> Vec<f64> {
    let base = w.flat().to_vec();
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            plus[k] += FD_STEP;
            let mut minus = base.clone();
            minus[k] -= FD_STEP;
            let fp = f(&AuctionParams::from_flat(w.config().clone(), plus).unwrap());
            let fm = f(&AuctionParams::from_flat(w.config().clone(), minus).unwrap());
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences over one vector argument.
pub fn fd_vector(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut plus = x.to_vec();
            plus[k] += FD_STEP;
            let mut minus = x.to_vec();
            minus[k] -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = net::l2_norm(a).max(net::l2_norm(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// A random small setting: n, m <= 3, width <= 16, tanh, random params
/// and bids strictly inside the unit box.
pub fn random_setting(seed: u64) -> (AuctionParams, BidProfile, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=3);
    let mut cfg =
        NetworkConfig::new(n, m).with_hidden(rng.random_range(1..=2), rng.random_range(2..=16));
    cfg.init_gain = rng.random_range(0.5..2.0);
    let mut flat = net::init_params(&cfg, seed).unwrap().into_flat();
    for x in flat.iter_mut() {
        // Nonzero biases too.
        *x += rng.random_range(-0.1..0.1);
    }
    let w = AuctionParams::from_flat(cfg, flat).unwrap();
    let b = BidProfile::new(
        n,
        m,
        (0..n * m).map(|_| rng.random_range(0.05..0.95)).collect(),
    )
    .unwrap();
    (w, b, rng)
}

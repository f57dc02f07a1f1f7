//! Run configuration file shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::EvalConfig;
use crate::net::NetworkConfig;
use crate::trainer::TrainConfig;
use crate::valuations::{sample_profile, BidProfile};

fn default_target_delta() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Training profile for single runs; sampled from the grid when absent.
    #[serde(default)]
    pub profile: Option<BidProfile>,
    /// Delta at which the accountant reports epsilon.
    #[serde(default = "default_target_delta")]
    pub target_delta: f64,
}

impl RunConfig {
    pub fn new(network: NetworkConfig, train: TrainConfig) -> Self {
        Self {
            network,
            train,
            eval: EvalConfig::default(),
            profile: None,
            target_delta: default_target_delta(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if !(self.target_delta > 0.0 && self.target_delta < 1.0) {
            return Err(Error::config("target_delta", "must lie in (0, 1)"));
        }
        if let Some(p) = &self.profile {
            if p.n() != self.network.n || p.m() != self.network.m {
                return Err(Error::config(
                    "profile",
                    format!(
                        "is {}x{} but the network expects {}x{}",
                        p.n(),
                        p.m(),
                        self.network.n,
                        self.network.m
                    ),
                ));
            }
        }
        Ok(())
    }

    /// The explicit profile, or one sampled from the grid with the training seed.
    pub fn training_profile(&self) -> Result<BidProfile> {
        match &self.profile {
            Some(p) => Ok(p.clone()),
            None => sample_profile(
                &self.eval.grid,
                self.network.n,
                self.network.m,
                self.train.seed,
            ),
        }
    }
}

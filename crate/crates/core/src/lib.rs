//! One-shot auction learning under differentially private training.
//!
//! A single bid profile is treated as the valuation profile and an auction
//! (a softmax allocation network paired with a sigmoid-fraction payment
//! network) is trained on it with a regret-constrained augmented Lagrangian
//! whose per-bidder regret gradients are clipped and noised. The evaluator
//! retrains one auction per enumerated misreport of the first bidder and
//! measures how much misreporting pays off.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod config;
pub mod dp;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod net;
pub mod rng;
pub mod trainer;
pub mod valuations;

pub use accountant::{AccountantReport, PrivacyLedger};
pub use config::RunConfig;
pub use dp::DpConfig;
pub use error::{Error, Result};
pub use evaluator::{EvalConfig, SampleReport, SweepReport, SweepRow};
pub use net::{Activation, Allocation, AuctionParams, NetworkConfig, Objective, Outcome};
pub use trainer::{LagrangeState, TrainConfig, TrainedAuction, TrainingTrace};
pub use valuations::{BidProfile, ValuationGrid};

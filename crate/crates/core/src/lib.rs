//! Optimal transmit spectra for downstream multi-carrier MIMO broadcast
//! channels (vectored xDSL) under a total power budget or per-modem
//! power budgets.
//!
//! The per-tone weighted sum-rate problem is solved on the dual MAC, where
//! it is concave, and mapped back to BC covariances through MAC-BC
//! duality. Per-modem budgets are handled with a diagonal multiplier
//! precoder that turns them into a unit-priced total-power problem on a
//! rescaled channel; an outer search adjusts the multipliers.

pub mod channel;
pub mod config;
pub mod duality;
pub mod error;
pub mod linalg;
pub mod rates;
pub mod report;
pub mod solver;
pub mod units;
pub mod validate;

pub use channel::{ChannelTensor, Mode, NoiseSpec, ScenarioSpec};
pub use config::{parse_config, RunConfig};
pub use duality::{DualityReport, MultiplierVector};
pub use error::{Error, Result};
pub use linalg::CMat;
pub use rates::{BcCovariances, MacCovariances, WeightVector};
pub use units::{BandPlan, PowerBudget, ToneGrid};
pub use solver::{
    per_tone_lagrangian_max, solve_per_modem, solve_total_power, svd_waterfilling_single_user, sweep_rate_region,
    RateRegionPoint, SolveOptions, SolveResult, SolverParams, ToneSolution, WaterfillResult,
};

//! Rate region sweeps over a list of weight vectors.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTensor, NoiseSpec};
use crate::error::Result;
use crate::rates::WeightVector;
use crate::units::{BandPlan, PowerBudget, ToneGrid};

use super::per_modem::solve_per_modem_with;
use super::total::solve_total_power_with;
use super::{SolveOptions, SolveResult, SolverParams};

/// One boundary point of the rate region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRegionPoint {
    pub weights: Vec<f64>,
    pub rates_mbps: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub converged: bool,
    /// Started from the previous point's multipliers.
    pub warm_started: bool,
}

impl From<&SolveResult> for RateRegionPoint {
    fn from(r: &SolveResult) -> Self {
        Self {
            weights: r.weights.as_slice().to_vec(),
            rates_mbps: r.rates_mbps.clone(),
            multipliers: r.multipliers.as_slice().to_vec(),
            converged: r.converged,
            warm_started: false,
        }
    }
}

/// Solves every weight vector in order. With `warm_start` each solve
/// starts from the multipliers of the previous one; `decode_order` fixes
/// the SIC order for every point.
#[allow(clippy::too_many_arguments)]
pub fn sweep_rate_region_full(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    weights: &[WeightVector],
    budget: &PowerBudget,
    params: &SolverParams,
    warm_start: bool,
    decode_order: Option<&[usize]>,
) -> Result<Vec<(SolveResult, bool)>> {
    let mut out: Vec<(SolveResult, bool)> = Vec::with_capacity(weights.len());
    for w in weights {
        let init = if warm_start { out.last().map(|(r, _)| r.multipliers.clone()) } else { None };
        let warm = init.is_some();
        let opts = SolveOptions { init, decode_order: decode_order.map(<[usize]>::to_vec) };
        let result = match budget {
            PowerBudget::Total { .. } => solve_total_power_with(channel, noise, grid, plan, w, budget, params, &opts)?,
            PowerBudget::PerModem { .. } => solve_per_modem_with(channel, noise, grid, plan, w, budget, params, &opts)?,
        };
        log::debug!("weights {:?}: rates {:?} Mbps", w.as_slice(), result.rates_mbps);
        out.push((result, warm));
    }
    Ok(out)
}

/// Boundary points of the rate region, one per weight vector.
#[allow(clippy::too_many_arguments)]
pub fn sweep_rate_region(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    weights: &[WeightVector],
    budget: &PowerBudget,
    params: &SolverParams,
    warm_start: bool,
) -> Result<Vec<RateRegionPoint>> {
    let full = sweep_rate_region_full(channel, noise, grid, plan, weights, budget, params, warm_start, None)?;
    Ok(full
        .iter()
        .map(|(r, warm)| RateRegionPoint { warm_started: *warm, ..RateRegionPoint::from(r) })
        .collect())
}

/// `n` weight pairs `(w1, 1 - w1)` with `w1` evenly spaced from 0 to 1.
pub fn weight_pairs(n: usize) -> Result<Vec<WeightVector>> {
    (0..n)
        .map(|k| {
            let w1 = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            WeightVector::pair(w1)
        })
        .collect()
}

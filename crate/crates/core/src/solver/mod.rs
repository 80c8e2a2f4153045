//! Dual-decomposition solvers: total power budget, per-modem budgets, rate
//! region sweeps, and a single-user SVD water-filling baseline.

mod per_modem;
mod region;
pub mod tone;
mod total;
mod waterfill;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use per_modem::{solve_per_modem, solve_per_modem_with};
pub use region::{sweep_rate_region, sweep_rate_region_full, weight_pairs, RateRegionPoint};
pub use tone::{per_tone_lagrangian_max, per_tone_lagrangian_max_with_order, ToneSolution};
pub use total::{solve_total_power, solve_total_power_with};
pub use waterfill::{svd_waterfilling_single_user, WaterfillResult};

use crate::channel::{whiten, ChannelTensor, NoiseSpec};
use crate::duality::{self, DualityReport, MultiplierVector, LAMBDA_MAX, LAMBDA_MIN};
use crate::error::{invalid, Error, Result};
use crate::linalg::CMat;
use crate::rates::{self, BcCovariances, MacCovariances, WeightVector};
use crate::units::{active_tones, psd_to_tone_power, BandPlan, ToneGrid};

/// Number of non-zero levels in the default per-user tone-power grid.
pub const DEFAULT_GRID_LEVELS: usize = 40;

/// Outer-loop and per-tone search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    /// Candidate per-user tone powers in mW, ascending, starting at 0.
    pub psd_grid: Vec<f64>,
    /// Coordinate ascent after the grid search.
    pub refine: bool,
    pub eps_power_rel: f64,
    pub lambda_init: f64,
    pub step_init: f64,
    pub step_floor: f64,
    /// Budget on per-tone evaluations of the outer search.
    pub max_outer_iters: usize,
    pub lambda_bounds: (f64, f64),
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            psd_grid: default_psd_grid(crate::units::VDSL_SPACING_HZ),
            refine: true,
            eps_power_rel: 1e-3,
            lambda_init: 1.0,
            step_init: 2.0,
            step_floor: 1.0 + 1e-6,
            max_outer_iters: 2000,
            lambda_bounds: (LAMBDA_MIN, LAMBDA_MAX),
        }
    }
}

/// `{0}` plus [`DEFAULT_GRID_LEVELS`] log-spaced tone powers between
/// -120 and -40 dBm/Hz.
pub fn default_psd_grid(spacing_hz: f64) -> Vec<f64> {
    log_psd_grid(spacing_hz, -120.0, -40.0, DEFAULT_GRID_LEVELS)
}

/// `{0}` plus `levels` tone powers log-spaced between two PSD levels.
pub fn log_psd_grid(spacing_hz: f64, lo_dbm_hz: f64, hi_dbm_hz: f64, levels: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    for k in 0..levels {
        let frac = if levels > 1 { k as f64 / (levels - 1) as f64 } else { 0.0 };
        let psd = lo_dbm_hz + frac * (hi_dbm_hz - lo_dbm_hz);
        grid.push(psd_to_tone_power(psd, spacing_hz).unwrap_or(0.0));
    }
    grid
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.psd_grid.is_empty() {
            return cfg("power grid is empty".into());
        }
        if self.psd_grid[0] != 0.0 {
            return cfg("power grid must start at 0".into());
        }
        if self.psd_grid.windows(2).any(|p| !(p[1] > p[0])) || self.psd_grid.iter().any(|p| !p.is_finite()) {
            return cfg("power grid must be finite and strictly ascending".into());
        }
        if !(self.eps_power_rel > 0.0 && self.eps_power_rel < 0.1) {
            return cfg(format!("eps_power_rel {} outside (0, 0.1)", self.eps_power_rel));
        }
        if !(self.step_init > 1.0 && self.step_init.is_finite()) {
            return cfg(format!("step_init {} must exceed 1", self.step_init));
        }
        if !(self.step_floor > 1.0 && self.step_floor < self.step_init) {
            return cfg(format!("step_floor {} must lie in (1, step_init)", self.step_floor));
        }
        let (lo, hi) = self.lambda_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return cfg(format!("invalid multiplier bounds ({lo}, {hi})"));
        }
        if !(self.lambda_init >= lo && self.lambda_init <= hi) {
            return cfg(format!("lambda_init {} outside bounds", self.lambda_init));
        }
        if self.max_outer_iters == 0 {
            return cfg("max_outer_iters must be positive".into());
        }
        Ok(())
    }

    fn clamp_lambda(&self, l: f64) -> f64 {
        l.clamp(self.lambda_bounds.0, self.lambda_bounds.1)
    }

    fn at_lower_bound(&self, l: f64) -> bool {
        l <= self.lambda_bounds.0 * (1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Total,
    PerModem,
}

/// One outer iterate of a multiplier search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub multipliers: Vec<f64>,
    /// Power per constraint (one entry for a total budget).
    pub power_mw: Vec<f64>,
    pub dual_value: f64,
    /// Weighted MAC rate sum at this iterate.
    pub objective: f64,
}

/// Optional starting point and ordering for a solve.
#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Initial multipliers (one entry per transmit line). Defaults to
    /// `lambda_init` everywhere.
    pub init: Option<MultiplierVector>,
    /// Fixed MAC decode order. Defaults to ascending weight, the order that
    /// makes the per-tone problem concave; any other order is only
    /// searched, not certified.
    pub decode_order: Option<Vec<usize>>,
}

impl SolveOptions {
    pub(crate) fn order(&self, w: &WeightVector) -> Result<Vec<usize>> {
        match &self.decode_order {
            Some(o) => {
                rates::check_order(o, w.len())?;
                Ok(o.clone())
            }
            None => Ok(rates::order_from_weights(w)),
        }
    }

    pub(crate) fn init(&self, n_tx: usize, params: &SolverParams) -> Result<MultiplierVector> {
        match &self.init {
            Some(m) if m.len() != n_tx => Err(invalid(format!("{} initial multipliers for {n_tx} lines", m.len()))),
            Some(m) => MultiplierVector::new(m.as_slice().iter().map(|&l| params.clamp_lambda(l)).collect()),
            None => MultiplierVector::uniform(n_tx, params.lambda_init),
        }
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub kind: ConstraintKind,
    pub weights: WeightVector,
    /// MAC decode order (BC encodes in reverse).
    pub order: Vec<usize>,
    /// Active tone indices (1-based).
    pub active_tones: Vec<usize>,
    /// MAC covariances on the precoded channel `H Lambda^{-1/2}`.
    pub mac: MacCovariances,
    /// BC covariances on the whitened channel.
    pub bc: BcCovariances,
    /// `Lambda`. For a total budget every entry is the scalar price.
    pub multipliers: MultiplierVector,
    /// Per-user DPC rates summed over tones, bits/symbol.
    pub rates_bits: Vec<f64>,
    pub rates_mbps: Vec<f64>,
    pub modem_power_mw: Vec<f64>,
    /// Weighted BC rate sum.
    pub objective: f64,
    /// Weighted MAC rate sum.
    pub objective_mac: f64,
    pub dual_value: f64,
    /// Budget residual per constraint (power - budget), mW.
    pub residuals: Vec<f64>,
    /// `max_t |lambda_t (power_t - P_t)|`.
    pub cs_residual: f64,
    pub iterations: usize,
    pub duality: DualityReport,
    pub converged: bool,
    pub history: Vec<IterateRecord>,
}

impl SolveResult {
    /// `(dual - primal) / primal` using the weighted MAC rate sum.
    pub fn relative_gap(&self) -> f64 {
        (self.dual_value - self.objective_mac) / self.objective_mac.abs().max(f64::MIN_POSITIVE)
    }
}

/// Whitened channel plus the active tone list, validated against the
/// weights.
pub(crate) struct Prepared {
    pub channel: ChannelTensor,
    pub active: Vec<usize>,
    pub symbol_rate_hz: f64,
}

pub(crate) fn prepare(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    w: &WeightVector,
    params: &SolverParams,
) -> Result<Prepared> {
    params.validate()?;
    grid.validate()?;
    if channel.n_tones() != grid.n_tones {
        return Err(invalid(format!("channel has {} tones, grid has {}", channel.n_tones(), grid.n_tones)));
    }
    if w.len() != channel.n_users() {
        return Err(invalid(format!("{} weights for {} users", w.len(), channel.n_users())));
    }
    Ok(Prepared {
        channel: whiten(channel, noise, grid)?,
        active: active_tones(grid, plan),
        symbol_rate_hz: grid.symbol_rate_hz,
    })
}

/// Per-tone maximization over all active tones of `channel` (already
/// precoded). Results are in ascending tone order regardless of the
/// thread schedule.
pub(crate) fn solve_tones(
    channel: &ChannelTensor,
    active: &[usize],
    w: &WeightVector,
    price: f64,
    order: &[usize],
    params: &SolverParams,
) -> Result<Vec<ToneSolution>> {
    active
        .par_iter()
        .map(|&i| {
            let blocks = channel.user_blocks(i - 1);
            tone::per_tone_lagrangian_max_with_order(&blocks, w, price, order, params).map_err(|e| duality::with_tone(e, i))
        })
        .collect()
}

/// Full-length MAC covariance set from per-active-tone solutions, scaled
/// by `factor`.
pub(crate) fn assemble_mac(channel: &ChannelTensor, active: &[usize], sols: &[ToneSolution], factor: f64) -> MacCovariances {
    let mut out: Vec<Vec<CMat>> = (0..channel.n_tones())
        .map(|_| (0..channel.n_users()).map(|j| CMat::zeros(channel.user_rows(j), channel.user_rows(j))).collect())
        .collect();
    for (&i, sol) in active.iter().zip(sols) {
        out[i - 1] = sol.s.iter().map(|m| crate::linalg::scale(m, factor)).collect();
    }
    MacCovariances(out)
}

/// BC covariances for `sols` computed on `channel` (precoded by
/// `lambda`), brought back to the unprecoded channel.
pub(crate) fn bc_from_mac(
    channel: &ChannelTensor,
    active: &[usize],
    sols: &[ToneSolution],
    order: &[usize],
    lambda: &MultiplierVector,
) -> Result<BcCovariances> {
    let n_tx = channel.n_tx();
    let per_tone: Vec<Result<Vec<CMat>>> = active
        .par_iter()
        .zip(sols.par_iter())
        .map(|(&i, sol)| {
            duality::mac_to_bc_tone(&channel.user_blocks(i - 1), &sol.s, order).map_err(|e| duality::with_tone(e, i))
        })
        .collect();
    let mut q: Vec<Vec<CMat>> = vec![vec![CMat::zeros(n_tx, n_tx); channel.n_users()]; channel.n_tones()];
    for (&i, tone) in active.iter().zip(per_tone) {
        q[i - 1] = tone?;
    }
    duality::untransform_bc(&q, lambda)
}

/// Per-user DPC rates summed over active tones.
pub(crate) fn bc_rates(channel: &ChannelTensor, active: &[usize], bc: &BcCovariances, order: &[usize]) -> Result<Vec<f64>> {
    let encode = rates::encode_order(order);
    let mut total = vec![0.0; channel.n_users()];
    for &i in active {
        let r = rates::bc_dpc_rates(&channel.user_blocks(i - 1), &bc.0[i - 1], &encode).map_err(|e| duality::with_tone(e, i))?;
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    Ok(total)
}

pub(crate) fn sum_rates(sols: &[ToneSolution], n_users: usize) -> Vec<f64> {
    let mut total = vec![0.0; n_users];
    for sol in sols {
        for (t, v) in total.iter_mut().zip(&sol.rates) {
            *t += v;
        }
    }
    total
}

/// Multiplicative search state for one multiplier.
#[derive(Debug, Clone)]
pub(crate) struct StepSearch {
    pub step: f64,
    last_up: Option<bool>,
    run: usize,
    expand: bool,
}

impl StepSearch {
    pub fn new(params: &SolverParams) -> Self {
        Self { step: params.step_init, last_up: None, run: 0, expand: false }
    }

    /// Search starting from `step` that squares the step (up to
    /// `step_init`) after two consecutive moves in the same direction.
    pub fn expanding(step: f64) -> Self {
        Self { step, last_up: None, run: 0, expand: true }
    }

    /// Moves `lambda` up when power exceeds the budget and down otherwise;
    /// the step shrinks to its square root on every direction reversal.
    /// Returns `None` once the step reaches the floor.
    pub fn next(&mut self, lambda: f64, residual: f64, params: &SolverParams) -> Option<f64> {
        let up = residual > 0.0;
        match self.last_up {
            Some(prev) if prev != up => {
                self.step = self.step.sqrt();
                self.run = 0;
            }
            Some(_) => {
                self.run += 1;
                if self.expand && self.run >= 2 {
                    self.step = (self.step * self.step).min(params.step_init);
                }
            }
            None => {}
        }
        self.last_up = Some(up);
        if self.step <= params.step_floor {
            return None;
        }
        let next = if up { lambda * self.step } else { lambda / self.step };
        Some(params.clamp_lambda(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_search_reversal_and_floor() {
        let params = SolverParams { step_floor: 1.1, ..SolverParams::default() };
        let mut s = StepSearch::new(&params);
        assert_eq!(s.next(1.0, 1.0, &params), Some(2.0));
        assert_eq!(s.next(2.0, 1.0, &params), Some(4.0));
        let down = s.next(4.0, -1.0, &params).unwrap();
        assert!((down - 4.0 / 2f64.sqrt()).abs() < 1e-12);
        // 2^(1/4) = 1.189, 2^(1/8) = 1.09 < floor
        assert!(s.next(down, 1.0, &params).is_some());
        assert!(s.next(down, -1.0, &params).is_none());
    }

    #[test]
    fn expanding_search_grows_step() {
        let params = SolverParams::default();
        let mut s = StepSearch::expanding(1.01);
        let mut l = 1.0;
        for _ in 0..10 {
            l = s.next(l, -1.0, &params).unwrap();
        }
        assert_eq!(s.step, params.step_init);
        assert!(l < 0.1);
    }

    #[test]
    fn psd_grid_shape() {
        let g = default_psd_grid(4312.5);
        assert_eq!(g.len(), DEFAULT_GRID_LEVELS + 1);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 4.3125e-9).abs() < 1e-21);
        assert!((g[DEFAULT_GRID_LEVELS] - 4.3125e-1).abs() < 1e-13);
        assert!(SolverParams::default().validate().is_ok());
    }
}

//! Invariant checks: a battery of random small instances, a negative
//! control, and the water-filling and enumeration oracles.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{whiten, ChannelTensor, NoiseSpec};
use crate::config::RunConfig;
use crate::duality;
use crate::error::Result;
use crate::linalg::{self, CMat};
use crate::rates::{self, BcCovariances, WeightVector};
use crate::solver::{self, tone::ToneProblem, SolveResult, SolverParams};
use crate::units::{BandPlan, PowerBudget, ToneGrid};

/// Largest accepted `(dual - primal) / primal` on the battery.
pub const GAP_TOL: f64 = 1e-4;
/// Largest accepted per-tone MAC vs BC rate delta (relative to
/// `max(1, b)`).
pub const RATE_DELTA_TOL: f64 = 1e-8;
/// Largest accepted relative error of the trace identities.
pub const TRACE_TOL: f64 = 1e-9;
/// Largest accepted relative rate error against water-filling.
pub const WATERFILL_TOL: f64 = 1e-6;
/// Complementary slackness bound as a fraction of `max_t lambda_t P_t`.
pub const CS_TOL_REL: f64 = 1e-3;
/// Most negative accepted covariance eigenvalue, relative to its trace.
pub const PSD_TOL_REL: f64 = 1e-10;

/// Shape of the random battery.
#[derive(Debug, Clone, Serialize)]
pub struct BatteryConfig {
    pub instances: usize,
    pub seed: u64,
    pub max_users: usize,
    pub max_tx: usize,
    pub max_tones: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self { instances: 200, seed: 0, max_users: 3, max_tx: 4, max_tones: 8 }
    }
}

/// Solver settings used on battery instances: a coarse grid with
/// refinement and a tight power tolerance.
pub fn battery_params() -> SolverParams {
    let mut grid = vec![0.0];
    grid.extend((0..5).map(|k| 10f64.powf(-2.0 + k as f64 * 0.75)));
    SolverParams {
        psd_grid: grid,
        refine: true,
        eps_power_rel: 1e-6,
        step_floor: 1.0 + 1e-12,
        max_outer_iters: 5000,
        ..SolverParams::default()
    }
}

/// One random problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub channel: ChannelTensor,
    pub noise: NoiseSpec,
    pub grid: ToneGrid,
    pub plan: BandPlan,
    pub weights: WeightVector,
    pub budget: PowerBudget,
}

impl Instance {
    pub fn solve(&self, params: &SolverParams) -> Result<SolveResult> {
        let Self { channel, noise, grid, plan, weights, budget } = self;
        match budget {
            PowerBudget::Total { .. } => solver::solve_total_power(channel, noise, grid, plan, weights, budget, params),
            PowerBudget::PerModem { .. } => solver::solve_per_modem(channel, noise, grid, plan, weights, budget, params),
        }
    }
}

fn cn(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

/// Noise PSD that makes the per-tone noise power exactly `1` mW on `grid`.
fn unit_noise(grid: &ToneGrid) -> NoiseSpec {
    NoiseSpec::Flat(-10.0 * grid.spacing_hz.log10())
}

/// Random instance `k` of the battery: 2 to `max_users` users with one or
/// two receive rows each, `n_tx` up to `max_tx`, and alternating total and
/// per-modem budgets.
pub fn random_instance(cfg: &BatteryConfig, k: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
    let n_users = rng.gen_range(2..=cfg.max_users.max(2));
    let n_tx = rng.gen_range(1..=cfg.max_tx.max(1));
    let n_tones = rng.gen_range(1..=cfg.max_tones.max(1));
    let rows: Vec<usize> = (0..n_users).map(|_| if rng.gen_bool(0.25) { 2 } else { 1 }).collect();
    let mut users = Vec::new();
    let mut next = 0;
    for &r in &rows {
        users.push((next..next + r).collect::<Vec<_>>());
        next += r;
    }
    let gains: Vec<f64> = (0..next).map(|_| 10f64.powf(rng.gen_range(-0.5..1.5))).collect();
    let tones = (0..n_tones).map(|_| CMat::from_fn(next, n_tx, |r, _| cn(&mut rng, gains[r]))).collect();
    let channel = ChannelTensor::new(tones, users)?;
    let grid = ToneGrid::vdsl(n_tones);
    let weights = WeightVector::new((0..n_users).map(|_| rng.gen_range(0.05..1.0)).collect())?;
    let budget = if k.is_multiple_of(2) {
        PowerBudget::total(n_tones as f64 * rng.gen_range(0.5..5.0))?
    } else {
        PowerBudget::per_modem((0..n_tx).map(|_| n_tones as f64 * rng.gen_range(0.3..3.0)).collect())?
    };
    Ok(Instance { noise: unit_noise(&grid), plan: BandPlan::full(&grid), grid, channel, weights, budget })
}

/// Per-instance measurements.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceOutcome {
    pub index: usize,
    pub per_modem: bool,
    pub n_users: usize,
    pub n_tx: usize,
    pub n_tones: usize,
    /// `(dual - weighted BC rate) / weighted BC rate`.
    pub gap: f64,
    pub rate_delta: f64,
    /// `sum Tr Q~` vs `sum Tr S`, worst tone.
    pub trace_mac: f64,
    /// `sum_t lambda_t Q_tt` vs `sum Tr Q~`, worst tone.
    pub trace_lambda: f64,
    pub min_eig_rel: f64,
    pub feasible: bool,
    pub cs_ok: bool,
    pub converged: bool,
}

impl InstanceOutcome {
    pub fn passed(&self) -> bool {
        self.gap.abs() <= GAP_TOL
            && self.rate_delta <= RATE_DELTA_TOL
            && self.trace_mac <= TRACE_TOL
            && self.trace_lambda <= TRACE_TOL
            && self.min_eig_rel >= -PSD_TOL_REL
            && self.feasible
            && self.cs_ok
            && self.converged
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Worst relative errors of the two trace identities over all tones.
pub fn trace_identities(whitened: &ChannelTensor, r: &SolveResult) -> Result<(f64, f64)> {
    let scaled = duality::effective_channel(whitened, &r.multipliers)?;
    let q_tilde = duality::mac_to_bc(&scaled, &r.mac, &r.order)?;
    let q = duality::untransform_bc(&q_tilde, &r.multipliers)?;
    let l = r.multipliers.as_slice();
    let (mut worst_mac, mut worst_lambda) = (0.0f64, 0.0f64);
    for i in 0..whitened.n_tones() {
        let tr_s: f64 = r.mac.0[i].iter().map(linalg::real_trace).sum();
        let tr_qt: f64 = q_tilde[i].iter().map(linalg::real_trace).sum();
        let weighted: f64 = q.0[i].iter().map(|m| (0..l.len()).map(|t| l[t] * m[(t, t)].re).sum::<f64>()).sum();
        worst_mac = worst_mac.max(rel(tr_qt, tr_s));
        worst_lambda = worst_lambda.max(rel(weighted, tr_qt));
    }
    Ok((worst_mac, worst_lambda))
}

/// Smallest eigenvalue of any BC covariance relative to its trace.
pub fn min_eig_rel(bc: &BcCovariances) -> f64 {
    let mut worst = 0.0f64;
    for m in bc.0.iter().flatten() {
        let tr = linalg::real_trace(m);
        if tr > 0.0 {
            worst = worst.min(linalg::min_eigenvalue(m) / tr);
        }
    }
    worst
}

/// Feasibility and complementary slackness of a solve against its budget.
pub fn kkt(r: &SolveResult, budget: &PowerBudget, eps_power_rel: f64) -> (bool, bool) {
    let budgets: Vec<f64> = match budget {
        PowerBudget::Total { total_mw } => vec![*total_mw],
        PowerBudget::PerModem { per_modem_mw } => per_modem_mw.clone(),
    };
    let powers: Vec<f64> = match budget {
        PowerBudget::Total { .. } => vec![r.modem_power_mw.iter().sum()],
        PowerBudget::PerModem { .. } => r.modem_power_mw.clone(),
    };
    let feasible = powers.iter().zip(&budgets).all(|(p, b)| *p <= (1.0 + eps_power_rel) * b);
    let l = r.multipliers.as_slice();
    let scale = budgets.iter().zip(l).map(|(b, l)| b * l).fold(0.0, f64::max);
    (feasible, r.cs_residual <= CS_TOL_REL * scale)
}

/// Solves instance `k` and measures every invariant.
pub fn check_instance(cfg: &BatteryConfig, k: usize, params: &SolverParams) -> Result<InstanceOutcome> {
    let inst = random_instance(cfg, k)?;
    let r = inst.solve(params)?;
    let whitened = whiten(&inst.channel, &inst.noise, &inst.grid)?;
    let (trace_mac, trace_lambda) = trace_identities(&whitened, &r)?;
    let (feasible, cs_ok) = kkt(&r, &inst.budget, params.eps_power_rel);
    let gap = if r.objective > 0.0 { (r.dual_value - r.objective) / r.objective } else { r.dual_value - r.objective };
    Ok(InstanceOutcome {
        index: k,
        per_modem: matches!(inst.budget, PowerBudget::PerModem { .. }),
        n_users: inst.channel.n_users(),
        n_tx: inst.channel.n_tx(),
        n_tones: inst.channel.n_tones(),
        gap,
        rate_delta: r.duality.max_rel_rate_delta,
        trace_mac,
        trace_lambda,
        min_eig_rel: min_eig_rel(&r.bc),
        feasible,
        cs_ok,
        converged: r.converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub config: BatteryConfig,
    pub outcomes: Vec<InstanceOutcome>,
    pub worst_gap: f64,
    pub worst_rate_delta: f64,
    pub worst_trace_mac: f64,
    pub worst_trace_lambda: f64,
    pub failures: Vec<usize>,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_battery(cfg: &BatteryConfig) -> Result<BatteryReport> {
    let params = battery_params();
    let outcomes = (0..cfg.instances).map(|k| check_instance(cfg, k, &params)).collect::<Result<Vec<_>>>()?;
    let worst = |f: fn(&InstanceOutcome) -> f64| outcomes.iter().map(f).fold(0.0, f64::max);
    Ok(BatteryReport {
        config: cfg.clone(),
        worst_gap: worst(|o| o.gap.abs()),
        worst_rate_delta: worst(|o| o.rate_delta),
        worst_trace_mac: worst(|o| o.trace_mac),
        worst_trace_lambda: worst(|o| o.trace_lambda),
        failures: outcomes.iter().filter(|o| !o.passed()).map(|o| o.index).collect(),
        outcomes,
    })
}

/// Scales every BC covariance of user 1 by `1 + fraction` and reports
/// whether the duality check still passes (it must not).
pub fn perturbed_duality_passes(inst: &Instance, params: &SolverParams, fraction: f64) -> Result<bool> {
    let r = inst.solve(params)?;
    let whitened = whiten(&inst.channel, &inst.noise, &inst.grid)?;
    let mut bc = r.bc.clone();
    for tone in &mut bc.0 {
        tone[0] = linalg::scale(&tone[0], 1.0 + fraction);
    }
    Ok(duality::verify_duality(&whitened, &r.multipliers, &r.mac, &bc, &r.order)?.passed)
}

/// Single-user instance: solver rate and water-filling rate at the
/// solver's power, plus their relative difference.
pub fn waterfill_agreement(seed: u64, rows: usize, n_tx: usize, n_tones: usize) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tones = (0..n_tones).map(|_| CMat::from_fn(rows, n_tx, |_, _| cn(&mut rng, 3.0))).collect();
    let channel = ChannelTensor::new(tones, vec![(0..rows).collect()])?;
    let grid = ToneGrid::vdsl(n_tones);
    let plan = BandPlan::full(&grid);
    let noise = unit_noise(&grid);
    let budget = PowerBudget::total(n_tones as f64 * rng.gen_range(0.5..4.0))?;
    let w = WeightVector::new(vec![1.0])?;
    let params = battery_params();
    let r = solver::solve_total_power(&channel, &noise, &grid, &plan, &w, &budget, &params)?;
    let power: f64 = r.modem_power_mw.iter().sum();
    let whitened = whiten(&channel, &noise, &grid)?;
    let wf = solver::svd_waterfilling_single_user(&whitened, &PowerBudget::total(power)?, &grid, &plan)?;
    Ok((r.rates_bits[0], wf.rates_bits, rel(r.rates_bits[0], wf.rates_bits)))
}

/// Exhaustive enumeration of the per-tone grid in user-lexicographic order
/// using only the public rate routines. Ties keep the lower total power,
/// then the lexicographically smaller index.
pub fn enumerate_grid(blocks: &[CMat], w: &WeightVector, price: f64, levels: &[f64]) -> Result<(Vec<usize>, f64)> {
    let n = blocks.len();
    let order = rates::order_from_weights(w);
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    let mut idx = vec![0usize; n];
    loop {
        let s: Vec<CMat> = blocks
            .iter()
            .zip(&idx)
            .map(|(b, &k)| linalg::scale(&linalg::identity(b.nrows()), levels[k] / b.nrows() as f64))
            .collect();
        let power: f64 = idx.iter().map(|&k| levels[k]).sum();
        let b = rates::mac_sic_rates(blocks, &s, &order)?;
        let value = rates::weighted_sum(&b, w)? - price * power;
        let better = match &best {
            None => true,
            Some((bi, bv, bp)) => value > *bv || (value == *bv && (power < *bp || (power == *bp && idx < *bi))),
        };
        if better {
            best = Some((idx.clone(), value, power));
        }
        let mut u = n;
        loop {
            if u == 0 {
                let (i, v, _) = best.expect("at least one point");
                return Ok((i, v));
            }
            u -= 1;
            idx[u] += 1;
            if idx[u] < levels.len() {
                break;
            }
            idx[u] = 0;
        }
    }
}

/// Compares the solver's grid search with [`enumerate_grid`] on `trials`
/// random tones; returns the number of mismatches.
pub fn grid_oracle_mismatches(seed: u64, trials: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<f64> = std::iter::once(0.0).chain((0..7).map(|k| 0.05 * 2f64.powi(k))).collect();
    let mut mismatches = 0;
    for _ in 0..trials {
        let n_users = rng.gen_range(2..=3);
        let n_tx = rng.gen_range(1..=3);
        let blocks: Vec<CMat> = (0..n_users)
            .map(|_| {
                let r = if rng.gen_bool(0.3) { 2 } else { 1 };
                CMat::from_fn(r, n_tx, |_, _| cn(&mut rng, 2.0))
            })
            .collect();
        let w = WeightVector::new((0..n_users).map(|_| (rng.gen_range(0..4) as f64) / 4.0 + 0.25).collect())?;
        let price = 10f64.powf(rng.gen_range(-1.0..0.5));
        let (oracle_idx, oracle_value) = enumerate_grid(&blocks, &w, price, &levels)?;
        let problem = ToneProblem::new(&blocks, &w, price)?;
        let (idx, _) = problem.grid_search(&levels);
        let params = SolverParams { psd_grid: levels.clone(), refine: false, ..SolverParams::default() };
        let sol = solver::per_tone_lagrangian_max(&blocks, &w, price, &params)?;
        if idx != oracle_idx || sol.grid_index != oracle_idx || sol.value != oracle_value {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs every check on the configured instance and on the default battery
/// (seeded with the config seed).
pub fn validate(config: &RunConfig) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| checks.push(Check { name: name.into(), passed, detail });

    let inputs = config.inputs()?;
    let r = match &inputs.budget {
        PowerBudget::Total { .. } => solver::solve_total_power(
            &inputs.channel,
            &inputs.noise,
            &config.grid,
            &config.bands,
            &config.point,
            &inputs.budget,
            &config.solver,
        )?,
        PowerBudget::PerModem { .. } => solver::solve_per_modem(
            &inputs.channel,
            &inputs.noise,
            &config.grid,
            &config.bands,
            &config.point,
            &inputs.budget,
            &config.solver,
        )?,
    };
    push(
        "instance duality",
        r.duality.passed,
        format!("rate delta {:.3e}, power delta {:.3e}", r.duality.max_rel_rate_delta, r.duality.max_rel_power_delta),
    );
    let eig = min_eig_rel(&r.bc);
    push("instance psd", eig >= -PSD_TOL_REL, format!("min eigenvalue / trace {eig:.3e}"));
    let (feasible, cs_ok) = kkt(&r, &inputs.budget, config.solver.eps_power_rel);
    push("instance feasibility", feasible && r.converged, format!("residuals {:?} mW, converged {}", r.residuals, r.converged));
    push("instance slackness", cs_ok, format!("residual {:.3e}", r.cs_residual));

    let battery = run_battery(&BatteryConfig { seed: config.seed, ..BatteryConfig::default() })?;
    push(
        "battery",
        battery.passed(),
        format!(
            "{} instances, worst gap {:.3e}, rate delta {:.3e}, traces {:.3e}/{:.3e}, failures {:?}",
            battery.outcomes.len(),
            battery.worst_gap,
            battery.worst_rate_delta,
            battery.worst_trace_mac,
            battery.worst_trace_lambda,
            battery.failures
        ),
    );

    let inst = random_instance(&BatteryConfig { seed: config.seed, ..BatteryConfig::default() }, 0)?;
    let still_passes = perturbed_duality_passes(&inst, &battery_params(), 0.01)?;
    push("negative control", !still_passes, "1% covariance perturbation must fail the duality check".into());

    let (solver_bits, wf_bits, err) = waterfill_agreement(config.seed, 2, 3, 4)?;
    push("waterfill oracle", err <= WATERFILL_TOL, format!("{solver_bits:.9} vs {wf_bits:.9} bits, rel {err:.3e}"));

    let mismatches = grid_oracle_mismatches(config.seed, 50)?;
    push("grid oracle", mismatches == 0, format!("{mismatches} mismatches in 50 tones"));

    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_tie_break_prefers_low_power() {
        // a zero channel makes every point tie at value - price * power
        let blocks = vec![CMat::zeros(1, 2), CMat::zeros(1, 2)];
        let w = WeightVector::new(vec![1.0, 1.0]).unwrap();
        let (idx, v) = enumerate_grid(&blocks, &w, 1.0, &[0.0, 1.0]).unwrap();
        assert_eq!(idx, vec![0, 0]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn random_instances_are_reproducible() {
        let cfg = BatteryConfig::default();
        let a = random_instance(&cfg, 5).unwrap();
        let b = random_instance(&cfg, 5).unwrap();
        assert_eq!(a.channel, b.channel);
        assert_eq!(a.budget, b.budget);
        assert!(matches!(a.budget, PowerBudget::PerModem { .. }));
    }

    #[test]
    fn unit_noise_whitens_to_identity() {
        let grid = ToneGrid::vdsl(1);
        let h = ChannelTensor::with_row_users(vec![CMat::identity(2, 2)]).unwrap();
        let w = whiten(&h, &unit_noise(&grid), &grid).unwrap();
        assert!((w.tone(0) - CMat::identity(2, 2)).norm() < 1e-12);
    }
}

//! BC optimal spectrum balancing under per-modem budgets.
//!
//! For multipliers `Lambda` the BC Lagrangian equals a unit-priced MAC
//! problem on `H Lambda^{-1/2}`. Each evaluation solves that MAC problem
//! tone by tone, maps it to BC covariances and reads off per-modem powers.
//! Multipliers are adjusted one modem at a time (highest index first) with
//! the multiplicative step search until every budget is met or slack at
//! the lower multiplier bound. Each modem resumes from its last step size
//! (grown again after repeated moves in one direction), and early passes
//! only balance powers to a coarse tolerance, so a pass costs a handful of
//! evaluations once the multipliers are close.
//!
//! The per-tone problems are solved with the multipliers normalized by
//! their geometric mean `g`: unit price on `H Lambda^{-1/2}` is the same
//! problem as price `g` on `H (Lambda/g)^{-1/2}` with covariances scaled
//! by `1/g`, which keeps the power grid in physical units.

use crate::channel::{ChannelTensor, NoiseSpec};
use crate::duality::{self, MultiplierVector};
use crate::error::{invalid, Result};
use crate::rates::{self, BcCovariances, WeightVector};
use crate::units::{BandPlan, PowerBudget, ToneGrid};

use super::{
    assemble_mac, bc_from_mac, bc_rates, prepare, solve_tones, sum_rates, ConstraintKind, IterateRecord, Prepared,
    SolveOptions, SolveResult, SolverParams, StepSearch, ToneSolution,
};

/// Relative multiplier change below which a pass counts as idle.
const IDLE_CHANGE_REL: f64 = 1e-12;
/// Relative power tolerance of the first pass; later passes tighten it by
/// [`TOL_SHRINK`] down to `eps_power_rel`.
const COARSE_TOL: f64 = 0.05;
const TOL_SHRINK: f64 = 0.1;

#[derive(Clone)]
struct Evaluation {
    sols: Vec<ToneSolution>,
    bc: BcCovariances,
    powers: Vec<f64>,
    dual_value: f64,
    mean: f64,
}

fn evaluate(
    prep: &Prepared,
    w: &WeightVector,
    order: &[usize],
    lambda: &MultiplierVector,
    budgets: &[f64],
    params: &SolverParams,
) -> Result<Evaluation> {
    let l = lambda.as_slice();
    let mean = (l.iter().map(|x| x.ln()).sum::<f64>() / l.len() as f64).exp();
    let normalized = MultiplierVector::new(l.iter().map(|x| x / mean).collect())?;
    let precoded = duality::effective_channel(&prep.channel, &normalized)?;
    let sols = solve_tones(&precoded, &prep.active, w, mean, order, params)?;
    let bc = bc_from_mac(&precoded, &prep.active, &sols, order, &normalized)?;
    let powers = duality::per_modem_power(&bc);
    let lagrangian: f64 = sols.iter().map(|s| s.value).sum();
    let priced_budget: f64 = l.iter().zip(budgets).map(|(a, b)| a * b).sum();
    Ok(Evaluation { sols, bc, powers, dual_value: lagrangian + priced_budget, mean })
}

/// Weighted sum-rate optimum of the BC under `sum_i sum_j (Q_ij)_tt <= P_t`
/// for every transmit line `t`.
pub fn solve_per_modem(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    w: &WeightVector,
    budget: &PowerBudget,
    params: &SolverParams,
) -> Result<SolveResult> {
    solve_per_modem_with(channel, noise, grid, plan, w, budget, params, &SolveOptions::default())
}

/// [`solve_per_modem`] with starting multipliers or a fixed order.
#[allow(clippy::too_many_arguments)]
pub fn solve_per_modem_with(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    w: &WeightVector,
    budget: &PowerBudget,
    params: &SolverParams,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let PowerBudget::PerModem { per_modem_mw } = budget else {
        return Err(invalid("per-modem solver needs a per-modem budget"));
    };
    budget.validate()?;
    if per_modem_mw.len() != channel.n_tx() {
        return Err(invalid(format!("{} budgets for {} transmit lines", per_modem_mw.len(), channel.n_tx())));
    }
    let budgets = per_modem_mw.as_slice();
    let prep = prepare(channel, noise, grid, plan, w, params)?;
    let order = opts.order(w)?;
    let n_tx = channel.n_tx();

    let mut lambda = opts.init(n_tx, params)?;
    let mut history = Vec::new();
    let mut record = |lambda: &MultiplierVector, ev: &Evaluation| {
        let lagrangian_part: f64 = ev.sols.iter().map(|s| s.value + ev.mean * s.power).sum();
        history.push(IterateRecord {
            multipliers: lambda.as_slice().to_vec(),
            power_mw: ev.powers.clone(),
            dual_value: ev.dual_value,
            objective: lagrangian_part,
        });
    };

    let violation = |lambda: &MultiplierVector, ev: &Evaluation| {
        (0..n_tx)
            .map(|t| {
                let res = ev.powers[t] - budgets[t];
                if res < 0.0 && params.at_lower_bound(lambda.as_slice()[t]) {
                    0.0
                } else {
                    res.abs() / budgets[t]
                }
            })
            .fold(0.0, f64::max)
    };

    let mut current = evaluate(&prep, w, &order, &lambda, budgets, params)?;
    record(&lambda, &current);
    let mut evaluations = 1;
    let mut steps = vec![params.step_init; n_tx];
    let mut tol = params.eps_power_rel.max(COARSE_TOL);
    let mut best: Option<(f64, MultiplierVector, Evaluation)> = None;
    'passes: loop {
        if violation(&lambda, &current) <= params.eps_power_rel {
            break;
        }
        let mut changed = false;
        for t in (0..n_tx).rev() {
            let start = steps[t].powi(4).clamp(params.step_floor * params.step_floor, params.step_init);
            let mut search = StepSearch::expanding(start);
            loop {
                let res = current.powers[t] - budgets[t];
                let lt = lambda.as_slice()[t];
                if res.abs() <= tol * budgets[t] || (res < 0.0 && params.at_lower_bound(lt)) {
                    break;
                }
                if evaluations >= params.max_outer_iters {
                    steps[t] = search.step;
                    break 'passes;
                }
                let Some(next) = search.next(lt, res, params) else {
                    break;
                };
                if (next - lt).abs() <= IDLE_CHANGE_REL * lt {
                    break;
                }
                changed = true;
                lambda.set(t, next);
                current = evaluate(&prep, w, &order, &lambda, budgets, params)?;
                record(&lambda, &current);
                evaluations += 1;
            }
            steps[t] = search.step;
        }
        let v = violation(&lambda, &current);
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, lambda.clone(), current.clone()));
        }
        if !changed && tol <= params.eps_power_rel {
            break;
        }
        tol = (tol * TOL_SHRINK).max(params.eps_power_rel);
    }
    let mut final_violation = violation(&lambda, &current);
    if let Some((v, l, ev)) = best {
        if v < final_violation {
            lambda = l;
            current = ev;
            final_violation = v;
        }
    }
    let converged = final_violation <= params.eps_power_rel;

    let Evaluation { sols, bc, powers, dual_value, mean } = current;
    let mac = assemble_mac(&prep.channel, &prep.active, &sols, mean);
    let report = duality::verify_duality(&prep.channel, &lambda, &mac, &bc, &order)?;
    let rates_bits = bc_rates(&prep.channel, &prep.active, &bc, &order)?;
    let mac_bits = sum_rates(&sols, w.len());
    let residuals: Vec<f64> = powers.iter().zip(budgets).map(|(p, b)| p - b).collect();
    let cs_residual = residuals
        .iter()
        .zip(lambda.as_slice())
        .map(|(r, l)| (r * l).abs())
        .fold(0.0, f64::max);
    Ok(SolveResult {
        kind: ConstraintKind::PerModem,
        weights: w.clone(),
        order,
        active_tones: prep.active.clone(),
        rates_mbps: rates::rates_to_mbps(&rates_bits, prep.symbol_rate_hz),
        objective: rates::weighted_sum(&rates_bits, w)?,
        objective_mac: rates::weighted_sum(&mac_bits, w)?,
        rates_bits,
        modem_power_mw: powers,
        mac,
        bc,
        multipliers: lambda,
        dual_value,
        residuals,
        cs_residual,
        iterations: history.len(),
        duality: report,
        converged,
        history,
    })
}

//! Scalar multiplier search under one total power budget.

use crate::channel::{ChannelTensor, NoiseSpec};
use crate::duality::{self, MultiplierVector};
use crate::error::{invalid, Result};
use crate::rates::{self, WeightVector};
use crate::units::{BandPlan, PowerBudget, ToneGrid};

use super::{
    assemble_mac, bc_from_mac, bc_rates, prepare, solve_tones, sum_rates, ConstraintKind, IterateRecord, SolveOptions,
    SolveResult, SolverParams, StepSearch, ToneSolution,
};

/// Weighted sum-rate optimum of the BC under `sum_i sum_j Tr Q_ij <= P`.
pub fn solve_total_power(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    w: &WeightVector,
    budget: &PowerBudget,
    params: &SolverParams,
) -> Result<SolveResult> {
    solve_total_power_with(channel, noise, grid, plan, w, budget, params, &SolveOptions::default())
}

/// [`solve_total_power`] with a starting multiplier or a fixed order. Only
/// the first entry of `opts.init` is used.
#[allow(clippy::too_many_arguments)]
pub fn solve_total_power_with(
    channel: &ChannelTensor,
    noise: &NoiseSpec,
    grid: &ToneGrid,
    plan: &BandPlan,
    w: &WeightVector,
    budget: &PowerBudget,
    params: &SolverParams,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let PowerBudget::Total { total_mw } = *budget else {
        return Err(invalid("total-power solver needs a total budget"));
    };
    budget.validate()?;
    let prep = prepare(channel, noise, grid, plan, w, params)?;
    let order = opts.order(w)?;
    let eps = params.eps_power_rel * total_mw;

    let mut lambda = match &opts.init {
        Some(m) => params.clamp_lambda(m.as_slice().first().copied().unwrap_or(params.lambda_init)),
        None => params.lambda_init,
    };
    let mut search = StepSearch::new(params);
    let mut history = Vec::new();
    let mut feasible: Option<(f64, Vec<ToneSolution>, f64, f64)> = None;
    let mut converged = false;
    let (sols, power, dual_value) = loop {
        let sols = solve_tones(&prep.channel, &prep.active, w, lambda, &order, params)?;
        let power: f64 = sols.iter().map(|s| s.power).sum();
        let lagrangian: f64 = sols.iter().map(|s| s.value).sum();
        let dual_value = lagrangian + lambda * total_mw;
        history.push(IterateRecord {
            multipliers: vec![lambda],
            power_mw: vec![power],
            dual_value,
            objective: lagrangian + lambda * power,
        });
        let residual = power - total_mw;
        if residual.abs() <= eps || (residual < 0.0 && params.at_lower_bound(lambda)) {
            converged = true;
            break (sols, power, dual_value);
        }
        if residual <= eps && feasible.as_ref().is_none_or(|f| power > f.2) {
            feasible = Some((lambda, sols.clone(), power, dual_value));
        }
        if history.len() >= params.max_outer_iters {
            break (sols, power, dual_value);
        }
        match search.next(lambda, residual, params) {
            Some(next) if next != lambda => lambda = next,
            _ => break (sols, power, dual_value),
        }
    };

    // a grid-only search can end on the infeasible side of a power jump
    let (sols, power, dual_value) = match feasible {
        Some((l, s, p, d)) if !converged && power > total_mw + eps => {
            lambda = l;
            (s, p, d)
        }
        _ => (sols, power, dual_value),
    };

    let multipliers = MultiplierVector::uniform(prep.channel.n_tx(), lambda)?;
    let ones = MultiplierVector::uniform(prep.channel.n_tx(), 1.0)?;
    let bc = bc_from_mac(&prep.channel, &prep.active, &sols, &order, &ones)?;
    let mac = assemble_mac(&prep.channel, &prep.active, &sols, lambda);
    let report = duality::verify_duality(&prep.channel, &multipliers, &mac, &bc, &order)?;
    let rates_bits = bc_rates(&prep.channel, &prep.active, &bc, &order)?;
    let mac_bits = sum_rates(&sols, w.len());
    let residual = power - total_mw;
    Ok(SolveResult {
        kind: ConstraintKind::Total,
        weights: w.clone(),
        order,
        active_tones: prep.active.clone(),
        rates_mbps: rates::rates_to_mbps(&rates_bits, prep.symbol_rate_hz),
        objective: rates::weighted_sum(&rates_bits, w)?,
        objective_mac: rates::weighted_sum(&mac_bits, w)?,
        rates_bits,
        modem_power_mw: duality::per_modem_power(&bc),
        mac,
        bc,
        multipliers,
        dual_value,
        residuals: vec![residual],
        cs_residual: (lambda * residual).abs(),
        iterations: history.len(),
        duality: report,
        converged,
        history,
    })
}

//! Single-user SVD water-filling, the reference the solvers must reproduce
//! when only one user is active.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::channel::ChannelTensor;
use crate::error::{invalid, Result};
use crate::linalg::CMat;
use crate::units::{active_tones, BandPlan, PowerBudget, ToneGrid};

const WATER_TOL_REL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WaterfillResult {
    /// Transmit covariance per tone (zero on inactive tones).
    pub covariances: Vec<CMat>,
    pub rates_bits: f64,
    /// Bits per tone, indexed like `covariances`.
    pub per_tone_bits: Vec<f64>,
    pub water_level: f64,
    pub power_mw: f64,
}

/// Water-fills a total budget over the singular modes of every active
/// tone. `channel` must be noise-whitened and hold a single user.
pub fn svd_waterfilling_single_user(
    channel: &ChannelTensor,
    budget: &PowerBudget,
    grid: &ToneGrid,
    plan: &BandPlan,
) -> Result<WaterfillResult> {
    let PowerBudget::Total { total_mw } = *budget else {
        return Err(invalid("water-filling needs a total budget"));
    };
    budget.validate()?;
    if channel.n_users() != 1 {
        return Err(invalid(format!("water-filling needs one user, got {}", channel.n_users())));
    }
    if channel.n_tones() != grid.n_tones {
        return Err(invalid("channel and grid disagree on tone count"));
    }
    let n_tx = channel.n_tx();
    let active = active_tones(grid, plan);

    // (tone, right singular vectors, gains)
    let modes: Vec<(usize, CMat, Vec<f64>)> = active
        .iter()
        .map(|&i| {
            let svd = channel.tone(i - 1).clone().svd(false, true);
            let v_t = svd.v_t.expect("requested");
            let gains = svd.singular_values.iter().map(|s| s * s).collect();
            (i - 1, v_t.adjoint(), gains)
        })
        .collect();
    let inverse: Vec<f64> = modes.iter().flat_map(|m| m.2.iter()).filter(|&&g| g > 0.0).map(|g| 1.0 / g).collect();
    let fill = |mu: f64| inverse.iter().map(|&x| (mu - x).max(0.0)).sum::<f64>();

    let mut covariances = vec![CMat::zeros(n_tx, n_tx); channel.n_tones()];
    let mut per_tone_bits = vec![0.0; channel.n_tones()];
    if inverse.is_empty() {
        return Ok(WaterfillResult { covariances, rates_bits: 0.0, per_tone_bits, water_level: 0.0, power_mw: 0.0 });
    }
    let mut lo = 0.0;
    let mut hi = total_mw + inverse.iter().cloned().fold(f64::INFINITY, f64::min);
    while hi - lo > WATER_TOL_REL * hi {
        let mid = 0.5 * (lo + hi);
        if fill(mid) > total_mw {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mu = 0.5 * (lo + hi);

    let mut rates_bits = 0.0;
    let mut power_mw = 0.0;
    for (tone, v, gains) in &modes {
        let p: Vec<f64> = gains.iter().map(|&g| if g > 0.0 { (mu - 1.0 / g).max(0.0) } else { 0.0 }).collect();
        let bits: f64 = p.iter().zip(gains).map(|(p, g)| (1.0 + p * g).log2()).sum();
        let d = DVector::from_iterator(p.len(), p.iter().map(|&x| Complex64::new(x, 0.0)));
        let cols = v.columns(0, p.len());
        let adj = cols.adjoint();
        covariances[*tone] = cols * CMat::from_diagonal(&d) * adj;
        per_tone_bits[*tone] = bits;
        rates_bits += bits;
        power_mw += p.iter().sum::<f64>();
    }
    Ok(WaterfillResult { covariances, rates_bits, per_tone_bits, water_level: mu, power_mw })
}

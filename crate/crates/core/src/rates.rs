//! Achievable per-tone rates for the dual MAC (successive interference
//! cancellation) and the BC (dirty-paper encoding), with unit-power white
//! noise assumed throughout.
//!
//! Ordering convention: a *decode order* lists users from first decoded to
//! last decoded at the MAC receiver. The user decoded last sees no
//! interference. The BC encode order is the reverse: the user encoded
//! first treats every later-encoded user as interference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMat};

/// Largest negative rate silently clamped to zero.
pub const NEG_RATE_CLAMP: f64 = 1e-9;

/// Non-negative per-user weights with at least one positive entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(invalid("weight vector is empty"));
        }
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid(format!("weights must be finite and non-negative: {w:?}")));
        }
        if !w.iter().any(|&x| x > 0.0) {
            return Err(invalid("at least one weight must be positive"));
        }
        Ok(Self(w))
    }

    /// Two-user weight pair `(w1, 1 - w1)`.
    pub fn pair(w1: f64) -> Result<Self> {
        Self::new(vec![w1, 1.0 - w1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Per-tone, per-user MAC covariances (`r_j x r_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct MacCovariances(pub Vec<Vec<CMat>>);

/// Per-tone, per-user BC transmit covariances (`n_tx x n_tx`).
#[derive(Debug, Clone, PartialEq)]
pub struct BcCovariances(pub Vec<Vec<CMat>>);

/// Tolerances for numerical Hermitian PSD checks.
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

fn check_psd_set(set: &[Vec<CMat>]) -> Result<()> {
    for (i, tone) in set.iter().enumerate() {
        for (j, m) in tone.iter().enumerate() {
            let scale = m.norm().max(1.0);
            if linalg::hermitian_defect(m) > HERMITIAN_TOL * scale {
                return Err(Error::Numerical { tone: i + 1, msg: format!("covariance of user {} is not Hermitian", j + 1) });
            }
            if linalg::min_eigenvalue(m) < -PSD_TOL * scale {
                return Err(Error::Numerical { tone: i + 1, msg: format!("covariance of user {} is not PSD", j + 1) });
            }
        }
    }
    Ok(())
}

impl MacCovariances {
    pub fn validate(&self) -> Result<()> {
        check_psd_set(&self.0)
    }

    pub fn total_power(&self) -> f64 {
        self.0.iter().flatten().map(linalg::real_trace).sum()
    }
}

impl BcCovariances {
    pub fn validate(&self) -> Result<()> {
        check_psd_set(&self.0)
    }

    pub fn total_power(&self) -> f64 {
        self.0.iter().flatten().map(linalg::real_trace).sum()
    }
}

/// MAC decode order: ascending weight, ties by ascending user index. The
/// heaviest user is decoded last.
pub fn order_from_weights(w: &WeightVector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w.0[a].total_cmp(&w.0[b]).then(a.cmp(&b)));
    order
}

/// BC encode order matching a MAC decode order.
pub fn encode_order(decode: &[usize]) -> Vec<usize> {
    decode.iter().rev().copied().collect()
}

pub(crate) fn check_order(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(invalid(format!("order has {} entries for {n} users", order.len())));
    }
    for &u in order {
        if u >= n || seen[u] {
            return Err(invalid(format!("order {order:?} is not a permutation of 0..{n}")));
        }
        seen[u] = true;
    }
    Ok(())
}

pub(crate) fn clamp_rate(r: f64) -> Result<f64> {
    if r < -NEG_RATE_CLAMP || !r.is_finite() {
        Err(Error::Numerical { tone: 0, msg: format!("rate {r} below clamp threshold") })
    } else {
        Ok(r.max(0.0))
    }
}

fn logdet(m: &CMat) -> Result<f64> {
    linalg::log2_det_hpd(m).ok_or_else(|| Error::Numerical { tone: 0, msg: "interference matrix is not positive definite".into() })
}

/// Per-user SIC rates (bits/symbol) on one tone.
///
/// `blocks[j]` is user `j`'s `r_j x n_tx` channel, `s[j]` its `r_j x r_j`
/// covariance, `order` the decode order.
pub fn mac_sic_rates(blocks: &[CMat], s: &[CMat], order: &[usize]) -> Result<Vec<f64>> {
    let n_users = blocks.len();
    if s.len() != n_users {
        return Err(invalid(format!("{} covariances for {n_users} users", s.len())));
    }
    check_order(order, n_users)?;
    let n_tx = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    for (j, (h, c)) in blocks.iter().zip(s).enumerate() {
        if h.ncols() != n_tx || c.shape() != (h.nrows(), h.nrows()) {
            return Err(invalid(format!("user {} channel/covariance shapes disagree", j + 1)));
        }
    }
    let mut acc = linalg::identity(n_tx);
    let mut prev = 0.0;
    let mut rates = vec![0.0; n_users];
    for &u in order.iter().rev() {
        acc += blocks[u].adjoint() * &s[u] * &blocks[u];
        let cur = logdet(&acc)?;
        rates[u] = clamp_rate(cur - prev)?;
        prev = cur;
    }
    Ok(rates)
}

/// Per-user DPC rates (bits/symbol) on one tone for BC covariances `q`
/// encoded in `encode` order.
pub fn bc_dpc_rates(blocks: &[CMat], q: &[CMat], encode: &[usize]) -> Result<Vec<f64>> {
    let n_users = blocks.len();
    if q.len() != n_users {
        return Err(invalid(format!("{} covariances for {n_users} users", q.len())));
    }
    check_order(encode, n_users)?;
    let n_tx = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    for (j, (h, c)) in blocks.iter().zip(q).enumerate() {
        if h.ncols() != n_tx || c.shape() != (n_tx, n_tx) {
            return Err(invalid(format!("user {} channel/covariance shapes disagree", j + 1)));
        }
    }
    let mut later = linalg::zeros(n_tx, n_tx);
    let mut rates = vec![0.0; n_users];
    for &u in encode.iter().rev() {
        let h = &blocks[u];
        let eye = linalg::identity(h.nrows());
        let with = &eye + h * (&q[u] + &later) * h.adjoint();
        let without = &eye + h * &later * h.adjoint();
        rates[u] = clamp_rate(logdet(&linalg::hermitize(&with))? - logdet(&linalg::hermitize(&without))?)?;
        later += &q[u];
    }
    Ok(rates)
}

pub fn weighted_sum(b: &[f64], w: &WeightVector) -> Result<f64> {
    if b.len() != w.len() {
        return Err(invalid(format!("{} rates for {} weights", b.len(), w.len())));
    }
    Ok(b.iter().zip(&w.0).map(|(b, w)| b * w).sum())
}

/// Mbps from bits/symbol summed over tones.
pub fn rates_to_mbps(bits: &[f64], symbol_rate_hz: f64) -> Vec<f64> {
    bits.iter().map(|b| symbol_rate_hz * b / 1e6).collect()
}

/// Linear SNR gap for reporting. The optimizer only supports 0 dB.
pub fn gap_linear(gap_db: f64) -> f64 {
    10f64.powf(gap_db / 10.0)
}

/// SIC rates with every covariance divided by the linear SNR gap.
pub fn mac_sic_rates_with_gap(blocks: &[CMat], s: &[CMat], order: &[usize], gap_db: f64) -> Result<Vec<f64>> {
    let g = gap_linear(gap_db);
    let scaled: Vec<CMat> = s.iter().map(|m| linalg::scale(m, 1.0 / g)).collect();
    mac_sic_rates(blocks, &scaled, order)
}

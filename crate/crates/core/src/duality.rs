//! Multiplier precoder and MAC-to-BC covariance transformation.
//!
//! Per-modem budgets are folded into a unit-priced total-power problem by
//! rescaling the channel columns with `Lambda^{-1/2}`. The MAC solution on
//! the rescaled channel maps to BC covariances that keep every user's rate
//! and the summed trace; undoing the rescaling gives the BC covariances of
//! the original channel.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTensor;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMat};
use crate::rates::{self, BcCovariances, MacCovariances};

/// Relative tolerance above which [`verify_duality`] reports a failure.
pub const DUALITY_FAIL_REL: f64 = 1e-6;
/// Condition number beyond which an interference matrix is rejected.
pub const MAX_CONDITION: f64 = 1e15;
/// Range multipliers are kept in by the solvers.
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;

/// Strictly positive per-modem Lagrange multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MultiplierVector(Vec<f64>);

impl MultiplierVector {
    pub fn new(l: Vec<f64>) -> Result<Self> {
        if l.is_empty() {
            return Err(invalid("multiplier vector is empty"));
        }
        if let Some(bad) = l.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Domain(format!("multiplier {bad} is not strictly positive")));
        }
        Ok(Self(l))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
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

    pub(crate) fn set(&mut self, t: usize, v: f64) {
        debug_assert!(v.is_finite() && v > 0.0);
        self.0[t] = v;
    }
}

impl TryFrom<Vec<f64>> for MultiplierVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MultiplierVector> for Vec<f64> {
    fn from(m: MultiplierVector) -> Self {
        m.0
    }
}

/// Column `t` of `h` multiplied by `lambda_t^{-1/2}`.
pub fn rescale_columns(h: &CMat, lambda: &MultiplierVector) -> CMat {
    let mut out = h.clone();
    for (t, &l) in lambda.0.iter().enumerate() {
        out.column_mut(t).scale_mut(1.0 / l.sqrt());
    }
    out
}

/// Channel seen through the precoder `Lambda^{-1/2}`.
pub fn effective_channel(channel: &ChannelTensor, lambda: &MultiplierVector) -> Result<ChannelTensor> {
    if lambda.len() != channel.n_tx() {
        return Err(invalid(format!("{} multipliers for {} transmit lines", lambda.len(), channel.n_tx())));
    }
    Ok(channel.map_tones(|_, h| rescale_columns(h, lambda)))
}

fn checked_pow(m: &CMat, p: f64, what: &str) -> Result<CMat> {
    let cond = linalg::hpd_condition(m);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::Numerical { tone: 0, msg: format!("{what} is ill-conditioned (cond {cond:e})") });
    }
    Ok(linalg::hermitian_pow(m, p))
}

/// Transforms one tone's MAC covariances `s` (decode order `order`) into
/// BC covariances on the same channel. Users are processed from first
/// decoded to last decoded, which is last encoded to first encoded.
pub fn mac_to_bc_tone(blocks: &[CMat], s: &[CMat], order: &[usize]) -> Result<Vec<CMat>> {
    let n_users = blocks.len();
    if s.len() != n_users || order.len() != n_users {
        return Err(invalid("user count mismatch in MAC-BC transform"));
    }
    let n_tx = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let mut q: Vec<CMat> = vec![linalg::zeros(n_tx, n_tx); n_users];
    let mut encoded_later = linalg::zeros(n_tx, n_tx);

    // uplink interference from users decoded after position m
    let mut uplink = vec![linalg::identity(n_tx); n_users + 1];
    for m in (0..n_users).rev() {
        let u = order[m];
        uplink[m] = &uplink[m + 1] + blocks[u].adjoint() * &s[u] * &blocks[u];
    }

    for (m, &u) in order.iter().enumerate() {
        let h = &blocks[u];
        if s[u].shape() != (h.nrows(), h.nrows()) || h.ncols() != n_tx {
            return Err(invalid(format!("user {} shapes disagree in MAC-BC transform", u + 1)));
        }
        if s[u].iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
            continue;
        }
        let down = linalg::identity(h.nrows()) + h * &encoded_later * h.adjoint();
        let down = linalg::hermitize(&down);
        let b = &uplink[m + 1];
        let b_isqrt = checked_pow(b, -0.5, "uplink interference")?;
        let a_isqrt = checked_pow(&down, -0.5, "downlink interference")?;
        let a_sqrt = linalg::hermitian_pow(&down, 0.5);

        let eff = &b_isqrt * h.adjoint() * &a_isqrt;
        let svd = eff.svd(true, true);
        let (Some(f), Some(gh)) = (svd.u, svd.v_t) else {
            return Err(Error::Numerical { tone: 0, msg: "SVD did not return singular vectors".into() });
        };
        let fg = f * gh;
        let core = &a_sqrt * &s[u] * &a_sqrt;
        let qu = &b_isqrt * &fg * core * fg.adjoint() * &b_isqrt;
        let qu = linalg::hermitize(&qu);
        encoded_later += &qu;
        q[u] = qu;
    }
    Ok(q)
}

/// Tone-by-tone MAC-to-BC transform over a whole tensor. Only `tones`
/// (0-based) are transformed; the rest stay zero.
pub fn mac_to_bc(channel: &ChannelTensor, mac: &MacCovariances, order: &[usize]) -> Result<Vec<Vec<CMat>>> {
    if mac.0.len() != channel.n_tones() {
        return Err(invalid("MAC covariance set and channel disagree on tone count"));
    }
    (0..channel.n_tones())
        .map(|i| {
            mac_to_bc_tone(&channel.user_blocks(i), &mac.0[i], order).map_err(|e| with_tone(e, i + 1))
        })
        .collect()
}

pub(crate) fn with_tone(e: Error, tone: usize) -> Error {
    match e {
        Error::Numerical { msg, .. } => Error::Numerical { tone, msg },
        other => other,
    }
}

/// `Q = Lambda^{-1/2} Q~ Lambda^{-1/2}` for every tone and user.
pub fn untransform_bc(q_tilde: &[Vec<CMat>], lambda: &MultiplierVector) -> Result<BcCovariances> {
    let l = lambda.as_slice();
    let out = q_tilde
        .iter()
        .map(|tone| {
            tone.iter()
                .map(|q| {
                    if q.shape() != (l.len(), l.len()) {
                        return Err(invalid("covariance size does not match multiplier count"));
                    }
                    Ok(CMat::from_fn(l.len(), l.len(), |m, n| q[(m, n)] / (l[m] * l[n]).sqrt()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BcCovariances(out))
}

/// Per-line transmit power summed over tones and users.
pub fn per_modem_power(q: &BcCovariances) -> Vec<f64> {
    let n = q.0.iter().flatten().map(|m| m.nrows()).next().unwrap_or(0);
    let mut p = vec![0.0; n];
    for tone in &q.0 {
        for m in tone {
            for (t, slot) in p.iter_mut().enumerate() {
                *slot += m[(t, t)].re;
            }
        }
    }
    p
}

/// Numerical evidence for rate and power preservation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `|b_MAC - b_BC|` per tone and user.
    #[serde(skip)]
    pub rate_deltas: Vec<Vec<f64>>,
    /// `|sum_t lambda_t Q_tt - sum_j Tr S_j|` per tone.
    #[serde(skip)]
    pub power_deltas: Vec<f64>,
    pub max_rate_delta: f64,
    pub max_power_delta: f64,
    /// Rate delta over `max(1, b_MAC)`.
    pub max_rel_rate_delta: f64,
    /// Power delta over the tone's MAC power.
    pub max_rel_power_delta: f64,
    pub passed: bool,
}

/// Compares MAC rates of `mac` on the rescaled channel against DPC rates
/// of `bc` on the original channel, and the multiplier-weighted BC power
/// against the MAC power, tone by tone.
pub fn verify_duality(
    channel: &ChannelTensor,
    lambda: &MultiplierVector,
    mac: &MacCovariances,
    bc: &BcCovariances,
    order: &[usize],
) -> Result<DualityReport> {
    if lambda.len() != channel.n_tx() {
        return Err(invalid("multiplier count does not match transmit lines"));
    }
    let encode = rates::encode_order(order);
    let mut report = DualityReport {
        rate_deltas: Vec::with_capacity(channel.n_tones()),
        power_deltas: Vec::with_capacity(channel.n_tones()),
        max_rate_delta: 0.0,
        max_power_delta: 0.0,
        max_rel_rate_delta: 0.0,
        max_rel_power_delta: 0.0,
        passed: true,
    };
    let l = lambda.as_slice();
    for i in 0..channel.n_tones() {
        let blocks = channel.user_blocks(i);
        let scaled: Vec<CMat> = blocks.iter().map(|h| rescale_columns(h, lambda)).collect();
        let b_mac = rates::mac_sic_rates(&scaled, &mac.0[i], order).map_err(|e| with_tone(e, i + 1))?;
        let b_bc = rates::bc_dpc_rates(&blocks, &bc.0[i], &encode).map_err(|e| with_tone(e, i + 1))?;
        let deltas: Vec<f64> = b_mac.iter().zip(&b_bc).map(|(a, b)| (a - b).abs()).collect();
        for (d, a) in deltas.iter().zip(&b_mac) {
            report.max_rate_delta = report.max_rate_delta.max(*d);
            report.max_rel_rate_delta = report.max_rel_rate_delta.max(d / a.max(1.0));
        }
        let mac_power: f64 = mac.0[i].iter().map(linalg::real_trace).sum();
        let weighted: f64 = bc.0[i]
            .iter()
            .map(|q| (0..l.len()).map(|t| l[t] * q[(t, t)].re).sum::<f64>())
            .sum();
        let pd = (weighted - mac_power).abs();
        report.max_power_delta = report.max_power_delta.max(pd);
        if pd > 0.0 {
            report.max_rel_power_delta = report.max_rel_power_delta.max(pd / mac_power.abs().max(f64::MIN_POSITIVE));
        }
        report.rate_deltas.push(deltas);
        report.power_deltas.push(pd);
    }
    report.passed = report.max_rel_rate_delta <= DUALITY_FAIL_REL && report.max_rel_power_delta <= DUALITY_FAIL_REL;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, n: usize) -> CMat {
        CMat::from_fn(r, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_psd(rng: &mut ChaCha8Rng, r: usize) -> CMat {
        let a = random_mat(rng, r, r);
        &a * a.adjoint()
    }

    #[test]
    fn multipliers_must_be_positive() {
        assert!(MultiplierVector::new(vec![1.0, 0.0]).is_err());
        assert!(matches!(MultiplierVector::new(vec![-1.0]), Err(Error::Domain(_))));
        assert!(MultiplierVector::new(vec![]).is_err());
    }

    #[test]
    fn effective_channel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tones: Vec<CMat> = (0..3).map(|_| random_mat(&mut rng, 2, 2)).collect();
        let ch = ChannelTensor::with_row_users(tones).unwrap();
        let same = effective_channel(&ch, &MultiplierVector::uniform(2, 1.0).unwrap()).unwrap();
        assert_eq!(same, ch);
        let half = effective_channel(&ch, &MultiplierVector::uniform(2, 4.0).unwrap()).unwrap();
        for (a, b) in half.tones().iter().zip(ch.tones()) {
            assert!((a - linalg::scale(b, 0.5)).norm() < 1e-15);
        }
        let l1 = MultiplierVector::new(vec![0.3, 7.0]).unwrap();
        let l2 = MultiplierVector::new(vec![2.5, 0.01]).unwrap();
        let prod = MultiplierVector::new(vec![0.75, 0.07]).unwrap();
        let twice = effective_channel(&effective_channel(&ch, &l1).unwrap(), &l2).unwrap();
        let once = effective_channel(&ch, &prod).unwrap();
        for (a, b) in twice.tones().iter().zip(once.tones()) {
            assert!((a - b).norm() < 1e-12 * b.norm());
        }
        assert!(effective_channel(&ch, &MultiplierVector::uniform(3, 1.0).unwrap()).is_err());
    }

    #[test]
    fn single_user_matched_filter() {
        let h = CMat::from_row_slice(1, 3, &[c(0.5, 0.1), c(-0.2, 0.7), c(0.05, -0.3)]);
        let s = 2.5;
        let q = mac_to_bc_tone(&[h.clone()], &[CMat::from_element(1, 1, c(s, 0.0))], &[0]).unwrap();
        let expect = linalg::scale(&(h.adjoint() * &h), s / h.norm_squared());
        assert!((&q[0] - &expect).norm() < 1e-12);
        assert!((linalg::real_trace(&q[0]) - s).abs() < 1e-12);
        let mac = rates::mac_sic_rates(&[h.clone()], &[CMat::from_element(1, 1, c(s, 0.0))], &[0]).unwrap();
        let bc = rates::bc_dpc_rates(&[h], &q, &[0]).unwrap();
        assert!((mac[0] - bc[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_mac_gives_zero_bc() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let blocks = vec![random_mat(&mut rng, 1, 2), random_mat(&mut rng, 1, 2)];
        let q = mac_to_bc_tone(&blocks, &[CMat::zeros(1, 1), CMat::zeros(1, 1)], &[0, 1]).unwrap();
        assert!(q.iter().all(|m| m.iter().all(|z| *z == c(0.0, 0.0))));
    }

    fn check_preservation(blocks: &[CMat], s: &[CMat], order: &[usize]) {
        let q = mac_to_bc_tone(blocks, s, order).unwrap();
        let mac = rates::mac_sic_rates(blocks, s, order).unwrap();
        let bc = rates::bc_dpc_rates(blocks, &q, &rates::encode_order(order)).unwrap();
        for (a, b) in mac.iter().zip(&bc) {
            assert!((a - b).abs() <= 1e-8 * a.max(1.0), "mac {mac:?} bc {bc:?}");
        }
        let ps: f64 = s.iter().map(linalg::real_trace).sum();
        let pq: f64 = q.iter().map(linalg::real_trace).sum();
        assert!((ps - pq).abs() <= 1e-9 * ps.max(1e-300), "{ps} vs {pq}");
        for m in &q {
            assert!(linalg::min_eigenvalue(m) >= -1e-10 * m.norm().max(1.0));
        }
    }

    #[test]
    fn random_two_user_preserves_rates_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let blocks = vec![random_mat(&mut rng, 1, 2), random_mat(&mut rng, 1, 2)];
            let s = vec![random_psd(&mut rng, 1), random_psd(&mut rng, 1)];
            check_preservation(&blocks, &s, &[0, 1]);
            check_preservation(&blocks, &s, &[1, 0]);
        }
    }

    #[test]
    fn multi_row_users_preserve_rates_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let blocks = vec![random_mat(&mut rng, 2, 3), random_mat(&mut rng, 1, 3), random_mat(&mut rng, 2, 4 - 1)];
            let s = vec![random_psd(&mut rng, 2), random_psd(&mut rng, 1), random_psd(&mut rng, 2)];
            check_preservation(&blocks, &s, &[2, 0, 1]);
        }
    }

    #[test]
    fn untransform_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let qt = vec![vec![random_psd(&mut rng, 2), random_psd(&mut rng, 2)]];
        let q = untransform_bc(&qt, &MultiplierVector::uniform(2, 1.0).unwrap()).unwrap();
        assert_eq!(q.0, qt);
        let q = untransform_bc(&qt, &MultiplierVector::uniform(2, 4.0).unwrap()).unwrap();
        assert!((&q.0[0][0] - linalg::scale(&qt[0][0], 0.25)).norm() < 1e-15);
        let l = MultiplierVector::new(vec![0.2, 30.0]).unwrap();
        let q = untransform_bc(&qt, &l).unwrap();
        for (a, b) in q.0[0].iter().zip(&qt[0]) {
            let weighted = 0.2 * a[(0, 0)].re + 30.0 * a[(1, 1)].re;
            assert!((weighted - linalg::real_trace(b)).abs() < 1e-10 * linalg::real_trace(b));
            assert!(linalg::hermitian_defect(a) < 1e-15);
        }
        assert!(untransform_bc(&qt, &MultiplierVector::uniform(3, 1.0).unwrap()).is_err());
    }

    #[test]
    fn per_modem_power_examples() {
        let zero = BcCovariances(vec![vec![CMat::zeros(2, 2)]]);
        assert_eq!(per_modem_power(&zero), vec![0.0, 0.0]);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2.0, 0.0), c(3.0, 0.0)]));
        assert_eq!(per_modem_power(&BcCovariances(vec![vec![d]])), vec![2.0, 3.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let set: Vec<Vec<CMat>> = (0..5).map(|_| (0..2).map(|_| random_psd(&mut rng, 3)).collect()).collect();
        let copy = set.clone();
        let mut brute = [0.0; 3];
        for tone in &copy {
            for m in tone {
                for (t, b) in brute.iter_mut().enumerate() {
                    *b += m[(t, t)].re;
                }
            }
        }
        let got = per_modem_power(&BcCovariances(set));
        for t in 0..3 {
            assert!((got[t] - brute[t]).abs() < 1e-12 * brute[t]);
        }
    }

    fn instance(seed: u64) -> (ChannelTensor, MultiplierVector, MacCovariances, BcCovariances, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tones: Vec<CMat> = (0..4).map(|_| random_mat(&mut rng, 2, 3)).collect();
        let ch = ChannelTensor::with_row_users(tones).unwrap();
        let lambda = MultiplierVector::new(vec![0.5, 2.0, 1.3]).unwrap();
        let eff = effective_channel(&ch, &lambda).unwrap();
        let mac = MacCovariances((0..4).map(|_| vec![random_psd(&mut rng, 1), random_psd(&mut rng, 1)]).collect());
        let order = vec![1, 0];
        let qt = mac_to_bc(&eff, &mac, &order).unwrap();
        let bc = untransform_bc(&qt, &lambda).unwrap();
        (ch, lambda, mac, bc, order)
    }

    #[test]
    fn verify_consistent_instance() {
        let (ch, lambda, mac, bc, order) = instance(21);
        let r = verify_duality(&ch, &lambda, &mac, &bc, &order).unwrap();
        assert!(r.passed);
        assert!(r.max_rate_delta <= 1e-8 && r.max_rel_power_delta <= 1e-8, "{r:?}");
    }

    #[test]
    fn verify_flags_perturbation() {
        let (ch, lambda, mac, mut bc, order) = instance(22);
        bc.0[1][0][(0, 0)] *= 1.01;
        let r = verify_duality(&ch, &lambda, &mac, &bc, &order).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn verify_zero_power_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ch = ChannelTensor::with_row_users(vec![random_mat(&mut rng, 2, 2)]).unwrap();
        let mac = MacCovariances(vec![vec![CMat::zeros(1, 1), CMat::zeros(1, 1)]]);
        let bc = BcCovariances(vec![vec![CMat::zeros(2, 2), CMat::zeros(2, 2)]]);
        let r = verify_duality(&ch, &MultiplierVector::uniform(2, 1.0).unwrap(), &mac, &bc, &[0, 1]).unwrap();
        assert_eq!(r.max_rate_delta, 0.0);
        assert_eq!(r.max_power_delta, 0.0);
        assert!(r.passed);
    }
}

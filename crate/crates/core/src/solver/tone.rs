//! Per-tone maximization of `sum_j w_j b_j - price * sum_j Tr S_j` over
//! MAC covariances.
//!
//! With users decoded in ascending weight order the weighted SIC rate sum
//! equals `sum_m c_m D_m`, where `D_m = log2 det(I + sum_{k >= m} H_k^H
//! S_k H_k)` over decode positions and `c_m = w_(m) - w_(m-1) >= 0`. The
//! objective is therefore concave, which is what the refinement relies on.

use std::f64::consts::LN_2;

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMat};
use crate::rates::{self, WeightVector};

use super::SolverParams;

/// Relative stationarity tolerance of the refinement.
pub const REFINE_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 2000;

/// Optimal covariances for one tone.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneSolution {
    /// MAC covariance per user.
    pub s: Vec<CMat>,
    /// Per-user SIC rates, bits/symbol.
    pub rates: Vec<f64>,
    /// `sum_j w_j b_j - price * sum_j Tr S_j`.
    pub value: f64,
    /// `sum_j Tr S_j`.
    pub power: f64,
    /// Grid indices of the starting point (per user).
    pub grid_index: Vec<usize>,
}

impl ToneSolution {
    pub fn zero(blocks: &[CMat]) -> Self {
        Self {
            s: blocks.iter().map(|b| CMat::zeros(b.nrows(), b.nrows())).collect(),
            rates: vec![0.0; blocks.len()],
            value: 0.0,
            power: 0.0,
            grid_index: vec![0; blocks.len()],
        }
    }
}

/// Single-tone problem data shared by the grid search and the refinement.
pub struct ToneProblem<'a> {
    blocks: &'a [CMat],
    grams: Vec<Vec<Complex64>>,
    order: Vec<usize>,
    coeffs: Vec<f64>,
    position: Vec<usize>,
    price: f64,
    n: usize,
}

impl<'a> ToneProblem<'a> {
    pub fn new(blocks: &'a [CMat], w: &WeightVector, price: f64) -> Result<Self> {
        Self::with_order(blocks, w, price, rates::order_from_weights(w))
    }

    /// Problem with a fixed decode order. Away from the ascending-weight
    /// order the objective is no longer concave; the grid search stays
    /// exact but the refinement is only a local improvement.
    pub fn with_order(blocks: &'a [CMat], w: &WeightVector, price: f64, order: Vec<usize>) -> Result<Self> {
        if blocks.len() != w.len() {
            return Err(invalid(format!("{} user blocks for {} weights", blocks.len(), w.len())));
        }
        if !(price.is_finite() && price > 0.0) {
            return Err(invalid(format!("price must be positive, got {price}")));
        }
        let n = blocks.first().map(|b| b.ncols()).unwrap_or(0);
        if blocks.iter().any(|b| b.ncols() != n || b.nrows() == 0) {
            return Err(invalid("user blocks must share the transmit dimension"));
        }
        rates::check_order(&order, w.len())?;
        let ws = w.as_slice();
        let mut coeffs = Vec::with_capacity(order.len());
        let mut prev = 0.0;
        for &u in &order {
            coeffs.push(ws[u] - prev);
            prev = ws[u];
        }
        let mut position = vec![0; order.len()];
        for (m, &u) in order.iter().enumerate() {
            position[u] = m;
        }
        let grams = blocks
            .iter()
            .map(|b| {
                let g = b.adjoint() * b;
                let mut flat = vec![Complex64::new(0.0, 0.0); n * n];
                for i in 0..n {
                    for j in 0..n {
                        flat[i * n + j] = g[(i, j)];
                    }
                }
                flat
            })
            .collect();
        Ok(Self { blocks, grams, order, coeffs, position, price, n })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Lagrangian value of `s`, computed through the public rate routine.
    pub fn lagrangian(&self, s: &[CMat], w: &WeightVector) -> Result<(f64, Vec<f64>, f64)> {
        let r = rates::mac_sic_rates(self.blocks, s, &self.order)?;
        let power: f64 = s.iter().map(linalg::real_trace).sum();
        Ok((rates::weighted_sum(&r, w)? - self.price * power, r, power))
    }

    /// Objective via the concave `sum_m c_m D_m` form.
    fn objective(&self, s: &[CMat]) -> f64 {
        let mut acc = linalg::identity(self.n);
        let mut total = 0.0;
        for m in (0..self.order.len()).rev() {
            let u = self.order[m];
            acc += self.blocks[u].adjoint() * &s[u] * &self.blocks[u];
            if self.coeffs[m] != 0.0 {
                total += self.coeffs[m] * linalg::log2_det_hpd(&acc).unwrap_or(f64::NEG_INFINITY);
            }
        }
        total - self.price * s.iter().map(linalg::real_trace).sum::<f64>()
    }

    /// Exhaustive search over isotropic covariances with per-user trace
    /// drawn from `levels`. Ties go to the lowest total power, then to the
    /// lexicographically smallest index vector.
    pub fn grid_search(&self, levels: &[f64]) -> (Vec<usize>, f64) {
        let n_users = self.order.len();
        let nn = self.n * self.n;
        let mut acc = vec![vec![Complex64::new(0.0, 0.0); nn]; n_users + 1];
        for i in 0..self.n {
            acc[n_users][i * self.n + i] = Complex64::new(1.0, 0.0);
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); nn];
        let mut idx = vec![0usize; n_users];
        let mut best = Best { idx: vec![0; n_users], value: f64::NEG_INFINITY, power: f64::INFINITY };
        self.descend(n_users, 0.0, 0.0, levels, &mut acc, &mut scratch, &mut idx, &mut best);
        (best.idx, best.value)
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        pos: usize,
        partial: f64,
        power: f64,
        levels: &[f64],
        acc: &mut [Vec<Complex64>],
        scratch: &mut [Complex64],
        idx: &mut [usize],
        best: &mut Best,
    ) {
        if pos == 0 {
            let value = partial - self.price * power;
            let better = value > best.value
                || (value == best.value
                    && (power < best.power || (power == best.power && &*idx < best.idx.as_slice())));
            if better {
                best.value = value;
                best.power = power;
                best.idx.copy_from_slice(idx);
            }
            return;
        }
        let m = pos - 1;
        let u = self.order[m];
        let r = self.blocks[u].nrows() as f64;
        let (head, tail) = acc.split_at_mut(pos);
        let prev = &tail[0];
        for (k, &lvl) in levels.iter().enumerate() {
            let cur = &mut head[m];
            let c = lvl / r;
            for ((dst, src), g) in cur.iter_mut().zip(prev.iter()).zip(&self.grams[u]) {
                *dst = src + g * c;
            }
            let d = if self.coeffs[m] != 0.0 {
                scratch.copy_from_slice(cur);
                match linalg::cholesky_logdet(scratch, self.n) {
                    Some(v) => self.coeffs[m] * v / LN_2,
                    None => f64::NEG_INFINITY,
                }
            } else {
                0.0
            };
            idx[u] = k;
            self.descend(m, partial + d, power + lvl, levels, head, scratch, idx, best);
        }
    }

    /// `K_m = I + sum_{k >= m} H_k^H S_k H_k` for every decode position,
    /// optionally leaving out one user.
    fn interference(&self, s: &[CMat], skip: Option<usize>) -> Vec<CMat> {
        let n_users = self.order.len();
        let mut out = vec![linalg::identity(self.n); n_users + 1];
        for m in (0..n_users).rev() {
            let u = self.order[m];
            out[m] = out[m + 1].clone();
            if Some(u) != skip {
                out[m] += self.blocks[u].adjoint() * &s[u] * &self.blocks[u];
            }
        }
        out
    }

    /// Exact coordinate update for a single-row user.
    fn update_scalar(&self, s: &mut [CMat], u: usize) -> f64 {
        let p = self.position[u];
        let h = &self.blocks[u];
        let ks = self.interference(s, Some(u));
        let mut terms: Vec<(f64, f64)> = Vec::with_capacity(p + 1);
        for m in 0..=p {
            if self.coeffs[m] == 0.0 {
                continue;
            }
            let g = match Cholesky::new(ks[m].clone()) {
                Some(ch) => {
                    let x = ch.solve(&h.adjoint());
                    (h * x)[(0, 0)].re.max(0.0)
                }
                None => 0.0,
            };
            if g > 0.0 {
                terms.push((self.coeffs[m] / LN_2, g));
            }
        }
        let old = s[u][(0, 0)].re;
        let new = scalar_root(&terms, self.price);
        s[u][(0, 0)] = Complex64::new(new, 0.0);
        (new - old).abs()
    }

    /// Projected-gradient block update for a multi-row user. Returns the
    /// Frobenius size of the accepted step.
    fn update_block(&self, s: &mut [CMat], u: usize, scale_hint: f64) -> f64 {
        let p = self.position[u];
        let h = &self.blocks[u];
        let r = h.nrows();
        let ks = self.interference(s, None);
        let mut grad = linalg::scale(&linalg::identity(r), -self.price);
        for m in 0..=p {
            if self.coeffs[m] == 0.0 {
                continue;
            }
            if let Some(ch) = Cholesky::new(ks[m].clone()) {
                let x = ch.solve(&h.adjoint());
                grad += linalg::scale(&(h * x), self.coeffs[m] / LN_2);
            }
        }
        let grad = linalg::hermitize(&grad);
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            return 0.0;
        }
        let f0 = self.objective(s);
        let mut t = (linalg::real_trace(&s[u]) + scale_hint) / gnorm;
        let orig = s[u].clone();
        for _ in 0..80 {
            let cand = linalg::project_psd(&(&orig + linalg::scale(&grad, t)));
            let diff = &cand - &orig;
            let ascent: f64 = grad.iter().zip(diff.iter()).map(|(g, d)| (g.conj() * d).re).sum();
            s[u] = cand;
            let f1 = self.objective(s);
            if f1 >= f0 + 1e-4 * ascent && f1 >= f0 {
                return diff.norm();
            }
            t *= 0.5;
        }
        s[u] = orig;
        0.0
    }

    /// Coordinate ascent from `s` until the largest per-sweep change falls
    /// below [`REFINE_TOL`] relative to the largest covariance trace.
    pub fn refine(&self, s: &mut [CMat], scale_hint: f64) {
        for _ in 0..MAX_SWEEPS {
            let mut moved = 0.0f64;
            for &u in self.order.iter().rev() {
                let step = if self.blocks[u].nrows() == 1 {
                    self.update_scalar(s, u)
                } else {
                    self.update_block(s, u, scale_hint)
                };
                moved = moved.max(step);
            }
            let size = s.iter().map(linalg::real_trace).fold(0.0, f64::max);
            if moved <= REFINE_TOL * size.max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
}

struct Best {
    idx: Vec<usize>,
    value: f64,
    power: f64,
}

/// Root in `s >= 0` of `sum_k a_k g_k / (1 + s g_k) - price`, which is
/// strictly decreasing in `s`.
fn scalar_root(terms: &[(f64, f64)], price: f64) -> f64 {
    let deriv = |s: f64| terms.iter().map(|&(a, g)| a * g / (1.0 + s * g)).sum::<f64>() - price;
    let curve = |s: f64| -terms.iter().map(|&(a, g)| a * g * g / ((1.0 + s * g) * (1.0 + s * g))).sum::<f64>();
    if terms.is_empty() || deriv(0.0) <= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = terms.iter().map(|&(a, _)| a).sum::<f64>() / price;
    if deriv(hi) > 0.0 {
        return hi;
    }
    let gmax = terms.iter().map(|&(_, g)| g).fold(0.0, f64::max);
    let mut x = (hi - 1.0 / gmax).clamp(lo, hi);
    for _ in 0..200 {
        let f = deriv(x);
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - f / curve(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * next.abs() || hi - lo <= 1e-15 * hi {
            x = next;
            break;
        }
        x = next;
    }
    x.max(0.0)
}

/// Grid search (and optional refinement) of one tone's Lagrangian.
pub fn per_tone_lagrangian_max(
    blocks: &[CMat],
    w: &WeightVector,
    price: f64,
    params: &SolverParams,
) -> Result<ToneSolution> {
    per_tone_lagrangian_max_with_order(blocks, w, price, &rates::order_from_weights(w), params)
}

/// [`per_tone_lagrangian_max`] under a fixed decode order.
pub fn per_tone_lagrangian_max_with_order(
    blocks: &[CMat],
    w: &WeightVector,
    price: f64,
    order: &[usize],
    params: &SolverParams,
) -> Result<ToneSolution> {
    if params.psd_grid.is_empty() {
        return Err(Error::Config("power grid is empty".into()));
    }
    let problem = ToneProblem::with_order(blocks, w, price, order.to_vec())?;
    let (grid_index, _) = problem.grid_search(&params.psd_grid);
    let mut s: Vec<CMat> = blocks
        .iter()
        .zip(&grid_index)
        .map(|(b, &k)| {
            let r = b.nrows();
            linalg::scale(&linalg::identity(r), params.psd_grid[k] / r as f64)
        })
        .collect();
    let (mut value, mut rates, mut power) = problem.lagrangian(&s, w)?;
    if params.refine {
        let mut refined = s.clone();
        let hint = params.psd_grid.iter().copied().fold(0.0, f64::max) / params.psd_grid.len() as f64;
        problem.refine(&mut refined, hint);
        let (v, r, p) = problem.lagrangian(&refined, w)?;
        if v >= value {
            s = refined;
            value = v;
            rates = r;
            power = p;
        }
    }
    Ok(ToneSolution { s, rates, value, power, grid_index })
}

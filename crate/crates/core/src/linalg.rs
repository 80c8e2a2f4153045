//! Small complex Hermitian helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

/// Relative eigenvalue floor applied before inverting a Hermitian square root.
pub const EIG_FLOOR_REL: f64 = 1e-14;

const STACK_DIM: usize = 8;

/// Natural-log determinant of a Hermitian positive definite matrix stored
/// row-major in `buf`, via in-place Cholesky. Returns `None` when a pivot
/// is not strictly positive.
pub fn cholesky_logdet(buf: &mut [Complex64], n: usize) -> Option<f64> {
    debug_assert!(buf.len() >= n * n);
    let mut acc = 0.0;
    for j in 0..n {
        let mut d = buf[j * n + j].re;
        for k in 0..j {
            d -= buf[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        buf[j * n + j] = Complex64::new(ljj, 0.0);
        acc += d.ln();
        for i in (j + 1)..n {
            let mut s = buf[i * n + j];
            for k in 0..j {
                s -= buf[i * n + k] * buf[j * n + k].conj();
            }
            buf[i * n + j] = s / ljj;
        }
    }
    Some(acc)
}

/// log2 det of a Hermitian positive definite matrix.
pub fn log2_det_hpd(m: &CMat) -> Option<f64> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return Some(0.0);
    }
    let fill = |buf: &mut [Complex64]| {
        for i in 0..n {
            for j in 0..=i {
                buf[i * n + j] = m[(i, j)];
            }
        }
    };
    let ln = if n <= STACK_DIM {
        let mut buf = [Complex64::new(0.0, 0.0); STACK_DIM * STACK_DIM];
        fill(&mut buf);
        cholesky_logdet(&mut buf, n)
    } else {
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        fill(&mut buf);
        cholesky_logdet(&mut buf, n)
    };
    ln.map(|v| v / std::f64::consts::LN_2)
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn real_trace(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn scale(m: &CMat, s: f64) -> CMat {
    m * Complex64::new(s, 0.0)
}

/// Largest entry-wise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = hermitize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// `m^p` for Hermitian positive semidefinite `m`. Eigenvalues below
/// `EIG_FLOOR_REL * max_eig` are floored before a negative power is taken.
pub fn hermitian_pow(m: &CMat, p: f64) -> CMat {
    let n = m.nrows();
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    let eig = hermitize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = EIG_FLOOR_REL * top;
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let l = if p < 0.0 { lam.max(floor) } else { lam.max(0.0) };
        let f = if l > 0.0 { l.powf(p) } else { 0.0 };
        scaled.column_mut(k).scale_mut(f);
    }
    hermitize(&(scaled * eig.eigenvectors.adjoint()))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub fn project_psd(m: &CMat) -> CMat {
    hermitian_pow(m, 1.0)
}

/// Condition number of a Hermitian positive definite matrix.
pub fn hpd_condition(m: &CMat) -> f64 {
    let ev = hermitian_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

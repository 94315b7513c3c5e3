//! Small dense complex linear-algebra helpers built on nalgebra.
//!
//! Everything that needs an inverse goes through a Hermitian positive-definite
//! Cholesky factorization. When the factorization fails a ridge of
//! `1e-12 * trace / n` is added once and the event is logged.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

const RIDGE_SCALE: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `a * a^H`.
pub fn gram(a: &CMat) -> CMat {
    a * a.adjoint()
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn trace(m: &CMat) -> C64 {
    m.trace()
}

/// Real part of the trace; exact for Hermitian arguments.
pub fn trace_re(m: &CMat) -> f64 {
    m.trace().re
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Squared Frobenius norm, i.e. `Tr(A A^H)`.
pub fn frob2(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn diag_matrix(v: &CVec) -> CMat {
    CMat::from_diagonal(v)
}

/// `A^H diag(d) B` computed row-scaled, without building the diagonal matrix.
pub fn adjoint_diag_mul(a: &CMat, d: &CVec, b: &CMat) -> CMat {
    debug_assert_eq!(a.nrows(), d.len());
    debug_assert_eq!(b.nrows(), d.len());
    let mut scaled = b.clone();
    for (l, mut row) in scaled.row_iter_mut().enumerate() {
        row *= d[l];
    }
    a.adjoint() * scaled
}

/// Cholesky factorization of a Hermitian matrix, without any regularization.
pub fn try_cholesky(m: &CMat) -> Option<Cholesky<C64, Dyn>> {
    if !all_finite(m) {
        return None;
    }
    Cholesky::new(hermitian_part(m))
}

/// Cholesky factorization of a Hermitian positive-definite matrix with a
/// one-shot ridge fallback.
pub fn hpd_cholesky(m: &CMat) -> Result<Cholesky<C64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Structural(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !all_finite(m) {
        return Err(Error::Numerical("non-finite entry in Hermitian matrix".into()));
    }
    if let Some(chol) = try_cholesky(m) {
        return Ok(chol);
    }
    let n = m.nrows().max(1) as f64;
    let scale = trace_re(m).abs() / n;
    let ridge = RIDGE_SCALE * if scale > 0.0 { scale } else { 1.0 };
    log::warn!("Cholesky failed on {}x{} matrix, retrying with ridge {ridge:.3e}", m.nrows(), m.ncols());
    let mut reg = hermitian_part(m);
    for i in 0..reg.nrows() {
        reg[(i, i)] += ridge;
    }
    Cholesky::new(reg).ok_or_else(|| {
        Error::Numerical(format!(
            "matrix is not positive definite even after a ridge of {ridge:.3e}"
        ))
    })
}

/// `ln |M|` for a Hermitian positive-definite matrix.
pub fn logdet_hpd(m: &CMat) -> Result<f64> {
    let chol = hpd_cholesky(m)?;
    Ok(logdet_of(&chol))
}

pub fn logdet_of(chol: &Cholesky<C64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum()
}

/// `M^{-1} B` for Hermitian positive-definite `M`.
pub fn solve_hpd(m: &CMat, rhs: &CMat) -> Result<CMat> {
    if m.nrows() != rhs.nrows() {
        return Err(Error::Structural(format!(
            "solve: lhs is {}x{}, rhs has {} rows",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    Ok(hpd_cholesky(m)?.solve(rhs))
}

pub fn inv_hpd(m: &CMat) -> Result<CMat> {
    Ok(hermitian_part(&hpd_cholesky(m)?.inverse()))
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `sqrt(max(x, 0))`.
pub fn sqrt_pos(x: f64) -> f64 {
    x.max(0.0).sqrt()
}

/// Scaled identity columns: the first `cols` columns of `sqrt(power / cols) * I_rows`.
pub fn scaled_identity_columns(rows: usize, cols: usize, power: f64) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    let active = rows.min(cols);
    if active == 0 {
        return m;
    }
    let amp = sqrt_pos(power / active as f64);
    for i in 0..active {
        m[(i, i)] = C64::new(amp, 0.0);
    }
    m
}

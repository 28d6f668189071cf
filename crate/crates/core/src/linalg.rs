//! Small dense linear-algebra helpers on top of nalgebra: jittered Cholesky,
//! triangular solves and the reverse-mode adjoint of the Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter added to every Gram diagonal.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Lower Cholesky factor of `mat + jitter * scale * I`.
///
/// Starts at `start` (relative to `scale`) and multiplies the jitter by ten
/// until the factorization succeeds or [`MAX_JITTER`] is exceeded. A `start`
/// of zero first tries the unmodified matrix.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>, scale: f64, start: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = mat.nrows();
    if n != mat.ncols() {
        return Err(Error::invalid(format!("cholesky of non-square {}x{} matrix", n, mat.ncols())));
    }
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite entry in matrix passed to cholesky"));
    }
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut rel = start;
    loop {
        let mut m = mat.clone();
        if rel > 0.0 {
            for i in 0..n {
                m[(i, i)] += rel * scale;
            }
        }
        if let Some(l) = cholesky_in_place(m) {
            return Ok((l, rel * scale));
        }
        rel = if rel == 0.0 { BASE_JITTER } else { rel * 10.0 };
        if rel > MAX_JITTER * (1.0 + 1e-9) {
            let min_diag = (0..n).map(|i| mat[(i, i)]).fold(f64::INFINITY, f64::min);
            return Err(Error::numerical(format!(
                "{n}x{n} matrix not positive definite after jitter {:.1e} (scale {scale:.3e}, min diagonal {min_diag:.3e})",
                MAX_JITTER * scale
            )));
        }
    }
}

/// Plain lower Cholesky factorization; `None` if a pivot is not positive.
fn cholesky_in_place(mut m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= m[(j, k)] * m[(j, k)];
        }
        if !(d.is_finite() && d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        m[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= m[(i, k)] * m[(j, k)];
            }
            m[(i, j)] = s / d;
        }
    }
    for j in 1..n {
        for i in 0..j {
            m[(i, j)] = 0.0;
        }
    }
    Some(m)
}

/// Solves `L x = b` in place for every column of `b`.
pub fn solve_lower_mut(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Solves `L^T x = b` in place for every column of `b`.
pub fn solve_lower_transpose_mut(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let row = l.row(i);
        let mut s = b[i];
        for k in 0..i {
            s -= row[k] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

pub fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let col = l.column(i);
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= col[k] * b[k];
        }
        b[i] = s / col[i];
    }
}

/// `(L L^T)^{-1} b` for a single right-hand side.
pub fn cholesky_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    solve_lower_vec(l, x.as_mut_slice());
    solve_lower_transpose_vec(l, x.as_mut_slice());
    x
}

pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Reverse-mode adjoint of `L = chol(S)`.
///
/// Given the gradient `l_bar` of a scalar with respect to the lower factor,
/// returns the symmetric gradient with respect to `S`. Only the lower
/// triangle of `l_bar` is read.
pub fn cholesky_adjoint(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut lb = l_bar.clone();
    for j in 1..n {
        for i in 0..j {
            lb[(i, j)] = 0.0;
        }
    }
    // phi(L^T Lbar): lower triangle with halved diagonal
    let mut p = l.transpose() * lb;
    for j in 0..n {
        for i in 0..j {
            p[(i, j)] = 0.0;
        }
        p[(j, j)] *= 0.5;
    }
    // L^{-T} P L^{-1}
    solve_lower_transpose_mut(l, &mut p);
    let mut pt = p.transpose();
    solve_lower_transpose_mut(l, &mut pt);
    let s = pt.transpose();
    (&s + s.transpose()) * 0.5
}

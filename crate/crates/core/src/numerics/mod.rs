//! Dense linear algebra, stable reductions and 2-D PCA.

mod matrix;
mod pca;

pub use matrix::{dot, norm, Matrix};
pub use pca::{pca_2d, symmetric_eigen, Pca2d};

use crate::error::{Error, Result};

/// Rows with norm at or below this are treated as having no direction.
pub const NORM_EPS: f64 = 1e-12;

pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n <= NORM_EPS {
            return Err(Error::ZeroRow { row: i, norm: n });
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "cosine of {}-dim and {}-dim vectors",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    if nu <= NORM_EPS {
        return Err(Error::ZeroRow { row: 0, norm: nu });
    }
    let nv = norm(v);
    if nv <= NORM_EPS {
        return Err(Error::ZeroRow { row: 1, norm: nv });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// All pairwise cosine similarities between the rows of `z`.
pub fn pairwise_sim(z: &Matrix) -> Result<Matrix> {
    let u = l2_normalize_rows(z)?;
    Ok(gram_clamped(&u))
}

/// `u uᵀ` for rows already on the unit sphere, clamped to `[-1, 1]`.
pub(crate) fn gram_clamped(u: &Matrix) -> Matrix {
    let k = u.rows();
    let mut s = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = dot(u.row(i), u.row(j)).clamp(-1.0, 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// `log Σ exp(x)` with max-shift.
pub fn stable_logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("stable_logsumexp"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stable_logsumexp input"));
    }
    Ok(logsumexp_unchecked(xs.iter().copied()))
}

/// Max-shifted log-sum-exp over a nonempty iterator of finite values.
pub(crate) fn logsumexp_unchecked<I>(xs: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.map(|x| (x - m).exp()).sum();
    m + s.ln()
}

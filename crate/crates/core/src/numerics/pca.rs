use serde::{Deserialize, Serialize};

use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the rows of the second matrix. Each eigenvector's
/// largest-magnitude coordinate is made positive so the output is unique
/// for simple eigenvalues.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition of non-square {:?}",
            a.shape()
        )));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.values().iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // m ← Jᵀ m J
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|k| v[(k, i)]).collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.row_mut(r).copy_from_slice(&col);
    }
    Ok((values, vectors))
}

/// A 2-component PCA fit: column means plus the two leading directions of
/// the sample covariance (divisor `n - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2d {
    pub mean: Vec<f64>,
    /// 2 × d, orthonormal rows.
    pub components: Matrix,
    /// Eigenvalues of the two components, descending, clipped at 0.
    pub explained_variance: [f64; 2],
    /// Trace of the covariance.
    pub total_variance: f64,
}

impl Pca2d {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 3 || d < 2 {
            return Err(Error::DegenerateData(format!(
                "pca needs >= 3 rows and >= 2 columns, got {n}x{d}"
            )));
        }
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut centered = x.clone();
        for i in 0..n {
            centered
                .row_mut(i)
                .iter_mut()
                .zip(&mean)
                .for_each(|(v, m)| *v -= m);
        }
        let mut cov = centered.t_matmul(&centered)?;
        cov.scale(1.0 / (n - 1) as f64);
        if cov.values().iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateData(
                "covariance is identically zero".into(),
            ));
        }
        let total_variance = (0..d).map(|i| cov[(i, i)]).sum();

        let (values, vectors) = symmetric_eigen(&cov)?;
        let components = vectors.select_rows(&[0, 1]);
        Ok(Self {
            mean,
            components,
            explained_variance: [values[0].max(0.0), values[1].max(0.0)],
            total_variance,
        })
    }

    /// Projects rows of `x` onto the fitted components.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "pca fitted on {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), 2);
        let mut buf = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            buf.iter_mut()
                .zip(x.row(i))
                .zip(&self.mean)
                .for_each(|((b, v), m)| *b = v - m);
            out[(i, 0)] = dot(&buf, self.components.row(0));
            out[(i, 1)] = dot(&buf, self.components.row(1));
        }
        Ok(out)
    }
}

/// Fits a 2-D PCA on `x` and projects `x` onto it.
///
/// Returns `(projection n×2, components 2×d, explained_variance)`.
pub fn pca_2d(x: &Matrix) -> Result<(Matrix, Matrix, [f64; 2])> {
    let fit = Pca2d::fit(x)?;
    let proj = fit.transform(x)?;
    Ok((proj, fit.components, fit.explained_variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_variance<'a>(col: impl Iterator<Item = &'a [f64]>, k: usize) -> f64 {
        let col: Vec<f64> = col.map(|r| r[k]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn jacobi_matches_nalgebra() {
        let mut rng = Rng::new(5);
        let d = 7;
        let b = Matrix::from_raw(d, d, (0..d * d).map(|_| rng.normal()).collect());
        let a = b.t_matmul(&b).unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        let na = nalgebra::DMatrix::from_row_slice(d, d, a.values());
        let mut oracle: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|x, y| y.total_cmp(x));
        for (v, o) in vals.iter().zip(&oracle) {
            assert!((v - o).abs() < 1e-10 * o.abs().max(1.0));
        }
        // A v = λ v
        for k in 0..d {
            let av = a
                .matmul(&Matrix::from_raw(d, 1, vecs.row(k).to_vec()))
                .unwrap();
            for i in 0..d {
                assert!((av[(i, 0)] - vals[k] * vecs[(k, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_one_data_has_no_second_component() {
        let dir = [1.0, -2.0, 0.5];
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|t| dir.iter().map(|d| d * (t as f64 - 7.3)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let (_, comps, ev) = pca_2d(&x).unwrap();
        assert!(ev[1] <= 1e-9);
        assert!(ev[0] > 1.0);
        let c0 = comps.row(0);
        let cos = dot(c0, &dir) / super::super::norm(&dir);
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_dim_data_keeps_all_variance() {
        let mut rng = Rng::new(3);
        let x = Matrix::from_raw(50, 2, (0..100).map(|_| rng.normal() * 3.0).collect());
        let (proj, comps, ev) = pca_2d(&x).unwrap();
        let total = sample_variance(x.iter_rows(), 0) + sample_variance(x.iter_rows(), 1);
        assert!((ev[0] + ev[1] - total).abs() < 1e-9);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(comps.row(i), comps.row(j)) - want).abs() < 1e-9);
            }
        }
        let pv0 = sample_variance(proj.iter_rows(), 0);
        assert!((pv0 - ev[0]).abs() < 1e-9);
    }

    #[test]
    fn projection_variance_matches_dense_eigensolve() {
        let mut rng = Rng::new(101);
        let (n, d) = (100, 8);
        let x = Matrix::from_raw(
            n,
            d,
            (0..n * d)
                .map(|k| rng.normal() * (1.0 + (k % d) as f64))
                .collect(),
        );
        let (proj, _, ev) = pca_2d(&x).unwrap();

        let nx = nalgebra::DMatrix::from_row_slice(n, d, x.values());
        let mean = nx.row_mean();
        let mut c = nx.clone();
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        let cov = c.transpose() * &c / (n as f64 - 1.0);
        let mut oracle: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));

        for k in 0..2 {
            let pv = sample_variance(proj.iter_rows(), k);
            assert!((pv - oracle[k]).abs() < 1e-8, "{pv} vs {}", oracle[k]);
            assert!((ev[k] - oracle[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_data_is_degenerate() {
        let x = Matrix::from_raw(4, 3, vec![1.5; 12]);
        assert!(matches!(pca_2d(&x), Err(Error::DegenerateData(_))));
        let tiny = Matrix::from_raw(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(pca_2d(&tiny), Err(Error::DegenerateData(_))));
    }
}

//! Two-component PCA via a cyclic Jacobi eigensolver on the covariance
//! matrix.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and matching unit eigenvectors of the symmetric
/// `p x p` matrix `a` (row-major).
pub fn symmetric_eigen(a: &[f64], p: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != p * p {
        return Err(Error::shape("symmetric_eigen", format!("{} entries for p = {p}", a.len())));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        v[i * p + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * p + j] * m[i * p + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                let aij = m[i * p + j];
                if aij == 0.0 {
                    continue;
                }
                let theta = (m[j * p + j] - m[i * p + i]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let (mki, mkj) = (m[k * p + i], m[k * p + j]);
                    m[k * p + i] = c * mki - s * mkj;
                    m[k * p + j] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let (mik, mjk) = (m[i * p + k], m[j * p + k]);
                    m[i * p + k] = c * mik - s * mjk;
                    m[j * p + k] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let (vki, vkj) = (v[k * p + i], v[k * p + j]);
                    v[k * p + i] = c * vki - s * vkj;
                    v[k * p + j] = s * vki + c * vkj;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| m[b * p + b].total_cmp(&m[a * p + a]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| m[k * p + k]).collect();
    let vectors = order.iter().map(|&k| (0..p).map(|r| v[r * p + k]).collect()).collect();
    Ok((values, vectors))
}

/// A fitted two-component projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Unit principal axes; the first nonzero entry of each is positive.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

impl Pca2 {
    pub fn fit(points: &Tensor) -> Result<Self> {
        let (n, p) = points.dims2("pca_2d")?;
        if n < 2 {
            return Err(Error::InvalidArgument(format!("pca needs at least 2 points, got {n}")));
        }
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(points.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; p * p];
        for i in 0..n {
            let row: Vec<f64> = points.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
            for a in 0..p {
                for b in a..p {
                    cov[a * p + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                let v = cov[a * p + b] / (n - 1) as f64;
                cov[a * p + b] = v;
                cov[b * p + a] = v;
            }
        }
        let (values, vectors) = symmetric_eigen(&cov, p)?;
        let pick = |k: usize| -> Vec<f64> {
            let mut v = vectors.get(k).cloned().unwrap_or_else(|| vec![0.0; p]);
            if v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0) {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        let var = |k: usize| values.get(k).copied().unwrap_or(0.0).max(0.0);
        Ok(Pca2 {
            mean,
            components: [pick(0), pick(1)],
            explained_variance: [var(0), var(1)],
        })
    }

    /// `[n, 2]` coordinates of `points` on the fitted axes.
    pub fn project(&self, points: &Tensor) -> Result<Tensor> {
        let (n, p) = points.dims2("pca project")?;
        if p != self.mean.len() {
            return Err(Error::shape("pca project", format!("{p} columns, fitted on {}", self.mean.len())));
        }
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            for c in &self.components {
                out.push(points.row(i).iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum());
            }
        }
        Tensor::new(vec![n, 2], out)
    }
}

/// Centers the columns and projects onto the top two principal axes.
pub fn pca_2d(points: &Tensor) -> Result<Tensor> {
    Pca2::fit(points)?.project(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use nalgebra::DMatrix;

    fn variance(col: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = col.clone().count() as f64;
        let m = col.clone().sum::<f64>() / n;
        col.map(|v| (v - m) * (v - m)).sum::<f64>() / n
    }

    #[test]
    fn axis_aligned_plane_is_identity_up_to_sign() {
        let pts = Tensor::from_rows(&[
            vec![3.0, 0.5],
            vec![-3.0, 0.5],
            vec![3.0, -0.5],
            vec![-3.0, -0.5],
        ])
        .unwrap();
        let proj = pca_2d(&pts).unwrap();
        for i in 0..4 {
            assert!((proj.row(i)[0].abs() - pts.row(i)[0].abs()).abs() < 1e-12);
            assert!((proj.row(i)[1].abs() - pts.row(i)[1].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn first_component_carries_more_variance() {
        let pts = RngStream::new("pca", 1).normal_tensor(&[50, 6]);
        let proj = pca_2d(&pts).unwrap();
        let v1 = variance((0..50).map(|i| proj.row(i)[0]));
        let v2 = variance((0..50).map(|i| proj.row(i)[1]));
        assert!(v1 >= v2);
    }

    #[test]
    fn sign_convention_holds() {
        let pts = RngStream::new("pca", 2).normal_tensor(&[20, 5]);
        let fit = Pca2::fit(&pts).unwrap();
        for c in &fit.components {
            assert!(*c.iter().find(|x| **x != 0.0).unwrap() > 0.0);
            assert!((c.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_error_matches_svd_oracle() {
        let pts = RngStream::new("pca", 3).normal_tensor(&[5, 3]);
        let fit = Pca2::fit(&pts).unwrap();
        let proj = fit.project(&pts).unwrap();
        let mut ours = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                let rec = fit.mean[j] + proj.row(i)[0] * fit.components[0][j] + proj.row(i)[1] * fit.components[1][j];
                ours += (pts.row(i)[j] - rec).powi(2);
            }
        }

        let mut centered = DMatrix::from_row_slice(5, 3, pts.data());
        for j in 0..3 {
            let m = centered.column(j).mean();
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let svd = centered.svd(false, false);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let oracle: f64 = s[2..].iter().map(|v| v * v).sum();
        assert!((ours - oracle).abs() < 1e-10, "{ours} vs {oracle}");
        assert!((fit.explained_variance[0] - s[0] * s[0] / 4.0).abs() < 1e-10);
    }

    #[test]
    fn eigen_solver_matches_nalgebra() {
        let a = RngStream::new("pca", 4).normal_tensor(&[6, 6]);
        let m = DMatrix::from_row_slice(6, 6, a.data());
        let sym = &m + m.transpose();
        let (ours, vecs) = symmetric_eigen(sym.as_slice(), 6).unwrap();
        let mut theirs: Vec<f64> = sym.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-10);
        }
        for (lambda, v) in ours.iter().zip(&vecs) {
            let av = &sym * nalgebra::DVector::from_column_slice(v);
            for (x, y) in av.iter().zip(v) {
                assert!((x - lambda * y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(pca_2d(&Tensor::zeros(&[1, 3])).is_err());
        let fit = Pca2::fit(&Tensor::zeros(&[3, 3])).unwrap();
        assert!(fit.project(&Tensor::zeros(&[2, 4])).is_err());
    }
}

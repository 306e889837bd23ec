//! Synthetic isotropic Gaussian classes for fast experiments.

use std::f64::consts::PI;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Unit-variance Gaussian classes whose means are `separation` apart.
///
/// With `dim >= classes` the means sit on scaled coordinate axes, so every
/// pair is exactly `separation` apart. Otherwise they sit on a circle in the
/// first two coordinates with neighbours `separation` apart. Samples are
/// rescaled by the bounding box of the means widened by 3 on each side and
/// clipped to `[0, 1]`. Images have shape `[1, 1, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn means(&self) -> Vec<Vec<f64>> {
        let (c, d, s) = (self.classes, self.dim, self.separation);
        (0..c)
            .map(|k| {
                let mut m = vec![0.0; d];
                if d >= c {
                    m[k] = s / 2f64.sqrt();
                } else if c == 1 {
                } else {
                    let r = s / (2.0 * (PI / c as f64).sin());
                    let a = 2.0 * PI * k as f64 / c as f64;
                    m[0] = r * a.cos();
                    if d > 1 {
                        m[1] = r * a.sin();
                    }
                }
                m
            })
            .collect()
    }

    /// `per_class` samples of each class, class-major. Different
    /// `sample_key`s give independent draws around the same means.
    pub fn sample(&self, per_class: usize, sample_key: u64) -> Result<Dataset> {
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("blobs need classes >= 1 and dim >= 1".into()));
        }
        let means = self.means();
        let flat = means.iter().flatten();
        let lo = flat.clone().copied().fold(f64::INFINITY, f64::min) - 3.0;
        let hi = flat.copied().fold(f64::NEG_INFINITY, f64::max) + 3.0;
        let mut rng = RngStream::keyed("blobs", self.seed, &[sample_key]);
        let n = self.classes * per_class;
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for (k, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for m in mean {
                    let x = m + rng.normal();
                    data.push(((x - lo) / (hi - lo)).clamp(0.0, 1.0));
                }
                labels.push(k);
            }
        }
        Dataset::new("blobs", Tensor::new(vec![n, 1, 1, self.dim], data)?, labels, self.classes)
    }
}

/// Training draw of [`BlobSpec`].
pub fn make_blobs(classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    BlobSpec {
        classes,
        dim,
        separation,
        seed,
    }
    .sample(per_class, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn balanced_and_in_range() {
        let ds = make_blobs(4, 2, 100, 3.0, 9).unwrap();
        assert_eq!(ds.len(), 400);
        for c in 0..4 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.input_shape(), [1, 1, 2]);
    }

    #[test]
    fn means_are_separated() {
        for (c, d) in [(4, 8), (4, 2), (5, 3)] {
            let spec = BlobSpec {
                classes: c,
                dim: d,
                separation: 6.0,
                seed: 0,
            };
            let m = spec.means();
            for k in 0..c {
                let next = (k + 1) % c;
                assert!((dist(&m[k], &m[next]) - 6.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sample_keys_share_means_but_not_draws() {
        let spec = BlobSpec {
            classes: 3,
            dim: 4,
            separation: 5.0,
            seed: 2,
        };
        let a = spec.sample(20, 0).unwrap();
        let b = spec.sample(20, 1).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.images, b.images);
        assert_eq!(a, spec.sample(20, 0).unwrap());
    }
}

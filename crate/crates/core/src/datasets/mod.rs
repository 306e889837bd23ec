//! Datasets, label bookkeeping and client partitioning.

mod blobs;
mod loaders;
mod partition;

pub use blobs::{make_blobs, BlobSpec};
pub use loaders::{load_cifar10, load_idx, Split};
pub use partition::{dirichlet_partition, dirichlet_partition_nonempty, split_test_evenly, PartitionSpec};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Images `[n, C, H, W]` in `[0, 1]` with integer labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("images {:?} for {} labels", images.shape(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("image values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            name: name.into(),
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            name: self.name.clone(),
            images,
            labels,
            classes: self.classes,
        }
    }

    /// Class-stratified random subset with at most `per_class` samples per class.
    pub fn stratified_subset(&self, per_class: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new("subset", seed);
        let mut picked = Vec::new();
        for c in 0..self.classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            rng.shuffle(&mut idx);
            idx.truncate(per_class);
            picked.extend(idx);
        }
        picked.sort_unstable();
        self.subset(&picked)
    }
}

/// Per-class sample counts of one client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelCounter {
    pub counts: Vec<usize>,
}

impl LabelCounter {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Shannon entropy (nats) of the normalized counts; 0 for an empty counter.
    pub fn entropy(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

/// Probability vector over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn uniform(classes: usize) -> Self {
        LabelDistribution {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.categorical(&self.probs)).collect()
    }
}

pub fn count_labels(ds: &Dataset, indices: &[usize]) -> LabelCounter {
    let mut counts = vec![0; ds.classes];
    for &i in indices {
        counts[ds.labels[i]] += 1;
    }
    LabelCounter { counts }
}

/// Pooled class frequencies; uniform when every counter is empty.
pub fn aggregate_label_distribution(counters: &[LabelCounter]) -> LabelDistribution {
    let classes = counters.first().map_or(0, |c| c.counts.len());
    let mut pooled = vec![0usize; classes];
    for c in counters {
        for (p, &n) in pooled.iter_mut().zip(&c.counts) {
            *p += n;
        }
    }
    let total: usize = pooled.iter().sum();
    if total == 0 {
        return LabelDistribution::uniform(classes);
    }
    LabelDistribution {
        probs: pooled.iter().map(|&n| n as f64 / total as f64).collect(),
    }
}

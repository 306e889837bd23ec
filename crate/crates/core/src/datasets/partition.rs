//! Label-skew client partitioning and even test-set splitting.

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const MAX_PARTITION_ATTEMPTS: u64 = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    pub omega: f64,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidArgument(format!("omega must be > 0, got {}", self.omega)));
        }
        if self.clients == 0 {
            return Err(Error::InvalidArgument("at least one client is required".into()));
        }
        Ok(())
    }
}

/// Splits `n` items by `props` with largest-remainder rounding. Ties on the
/// fractional part go to the lower index.
fn largest_remainder(n: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet(rng: &mut RngStream, omega: f64, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.gamma(omega)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| d / total).collect()
    } else {
        // Every draw underflowed: put all mass on one client.
        let mut p = vec![0.0; k];
        p[rng.below(k)] = 1.0;
        p
    }
}

fn partition_attempt(ds: &Dataset, spec: &PartitionSpec, attempt: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot partition an empty dataset".into()));
    }
    let mut rng = RngStream::keyed("partition", spec.seed, &[attempt]);
    let mut parts = vec![Vec::new(); spec.clients];
    for class in 0..ds.classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        let props = dirichlet(&mut rng, spec.omega, spec.clients);
        rng.shuffle(&mut idx);
        let counts = largest_remainder(idx.len(), &props);
        let mut start = 0;
        for (part, &c) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Per-class Dirichlet(omega) proportions, shuffled class members assigned
/// contiguously. Index sets are sorted, disjoint and cover the dataset.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    partition_attempt(ds, spec, 0)
}

/// Redraws with a fresh sub-seed until no client is empty. Returns the
/// partition and the zero-based attempt that produced it.
pub fn dirichlet_partition_nonempty(ds: &Dataset, spec: &PartitionSpec) -> Result<(Vec<Vec<usize>>, u64)> {
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let parts = partition_attempt(ds, spec, attempt)?;
        if parts.iter().all(|p| !p.is_empty()) {
            return Ok((parts, attempt));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no partition without empty clients after {MAX_PARTITION_ATTEMPTS} attempts"
    )))
}

/// Shuffled indices cut into `clients` parts; the first `n % clients` parts
/// get one extra element.
pub fn split_test_evenly(test: &Dataset, clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if test.is_empty() || clients == 0 {
        return Err(Error::InvalidArgument("need a non-empty test set and >= 1 client".into()));
    }
    let mut idx: Vec<usize> = (0..test.len()).collect();
    RngStream::new("test-split", seed).shuffle(&mut idx);
    let (base, extra) = (idx.len() / clients, idx.len() % clients);
    let mut out = Vec::with_capacity(clients);
    let mut start = 0;
    for i in 0..clients {
        let size = base + usize::from(i < extra);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{count_labels, make_blobs};

    #[test]
    fn largest_remainder_is_exact() {
        assert_eq!(largest_remainder(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(largest_remainder(3, &[1.0 / 3.0; 3]), vec![1, 1, 1]);
        assert_eq!(largest_remainder(0, &[0.2, 0.8]), vec![0, 0]);
        assert_eq!(largest_remainder(7, &[0.0, 1.0]), vec![0, 7]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = make_blobs(2, 2, 5, 3.0, 0).unwrap();
        let parts = split_test_evenly(&ds, 4, 1).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        assert_eq!(parts, split_test_evenly(&ds, 4, 1).unwrap());
        let whole = split_test_evenly(&ds, 1, 1).unwrap();
        let mut w = whole[0].clone();
        w.sort_unstable();
        assert_eq!(w, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_invalid_specs() {
        let ds = make_blobs(2, 2, 5, 3.0, 0).unwrap();
        let bad = PartitionSpec {
            omega: 0.0,
            clients: 2,
            seed: 0,
        };
        assert!(dirichlet_partition(&ds, &bad).is_err());
        let bad = PartitionSpec {
            omega: 1.0,
            clients: 0,
            seed: 0,
        };
        assert!(dirichlet_partition(&ds, &bad).is_err());
    }

    #[test]
    fn nonempty_redraw_succeeds_on_skewed_split() {
        let ds = make_blobs(4, 4, 50, 3.0, 0).unwrap();
        let spec = PartitionSpec {
            omega: 0.1,
            clients: 10,
            seed: 3,
        };
        let (parts, _) = dirichlet_partition_nonempty(&ds, &spec).unwrap();
        assert!(parts.iter().all(|p| !p.is_empty()));
        let total: usize = parts.iter().map(|p| count_labels(&ds, p).total()).sum();
        assert_eq!(total, ds.len());
    }
}

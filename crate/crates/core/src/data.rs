//! Labeled datasets, synthetic Gaussian blobs and device partitioning.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::transceiver::ClassPartition;
use crate::{Error, Result};

/// Row-major feature matrix with 0-based labels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledDataset {
    features: Vec<f64>,
    dims: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dims: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::domain("feature dimension must be positive"));
        }
        if num_classes == 0 {
            return Err(Error::domain("need at least one class"));
        }
        if features.len() != labels.len() * dims {
            return Err(Error::DimensionMismatch {
                what: "feature matrix",
                expected: labels.len() * dims,
                found: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain(alloc::format!("label {bad} out of range for {num_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("features must be finite"));
        }
        Ok(LabeledDataset { features, dims, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index * self.dims..(index + 1) * self.dims]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features.chunks_exact(self.dims).zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::domain(alloc::format!("row {bad} out of range")));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Ok(LabeledDataset {
            features,
            dims: self.dims,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }
}

/// `K` points in `dims` dimensions with all pairwise distances equal to
/// `separation`, centred at the origin. Needs `dims >= K - 1`.
pub fn simplex_means(num_classes: usize, dims: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if num_classes == 0 {
        return Err(Error::domain("need at least one class"));
    }
    if dims + 1 < num_classes {
        return Err(Error::domain(alloc::format!(
            "{num_classes} equidistant means need at least {} dimensions, got {dims}",
            num_classes - 1
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::domain("separation must be non-negative and finite"));
    }
    let k = num_classes;
    // centred unit vectors e_c - 1/K span a (K-1)-dimensional subspace
    let centred: Vec<Vec<f64>> =
        (0..k).map(|c| (0..k).map(|j| if j == c { 1.0 } else { 0.0 } - 1.0 / k as f64).collect()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k.saturating_sub(1));
    for v in centred.iter().take(k.saturating_sub(1)) {
        let mut u = v.clone();
        for b in &basis {
            let dot: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = libm::sqrt(u.iter().map(|x| x * x).sum());
        u.iter_mut().for_each(|x| *x /= norm);
        basis.push(u);
    }
    let scale = separation / core::f64::consts::SQRT_2;
    Ok(centred
        .iter()
        .map(|v| {
            let mut mean = vec![0.0; dims];
            for (slot, b) in mean.iter_mut().zip(&basis) {
                *slot = scale * v.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
            mean
        })
        .collect())
}

/// Isotropic unit-variance Gaussian blobs around [`simplex_means`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    pub separation: f64,
}

/// Samples are ordered class by class.
pub fn synth_blobs<R: Rng + ?Sized>(spec: &BlobSpec, rng: &mut R) -> Result<LabeledDataset> {
    let means = simplex_means(spec.num_classes, spec.dims, spec.separation)?;
    let n = spec.num_classes * spec.samples_per_class;
    let mut features = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            features.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            labels.push(class);
        }
    }
    LabeledDataset::new(features, spec.dims, labels, spec.num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PartitionSpec {
    /// Each class is shuffled and dealt round-robin.
    Iid,
    /// Per-class device proportions drawn from `Dirichlet(alpha)`.
    Dirichlet { alpha: f64 },
}

/// Splits `data` across `devices` devices. Every device receives at least
/// one sample.
pub fn partition<R: Rng + ?Sized>(
    data: &LabeledDataset,
    devices: usize,
    spec: PartitionSpec,
    rng: &mut R,
) -> Result<(Vec<LabeledDataset>, ClassPartition)> {
    if devices == 0 {
        return Err(Error::domain("need at least one device"));
    }
    if devices > data.len() {
        return Err(Error::domain(alloc::format!(
            "cannot give each of {devices} devices a sample from {} samples",
            data.len()
        )));
    }
    let k = data.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for rows in &mut by_class {
        rows.shuffle(rng);
    }

    let mut counts = vec![vec![0usize; k]; devices];
    match spec {
        PartitionSpec::Iid => {
            // one running dealer across classes keeps device totals within one
            let mut next = 0;
            for (class, rows) in by_class.iter().enumerate() {
                for _ in rows {
                    counts[next][class] += 1;
                    next = (next + 1) % devices;
                }
            }
        }
        PartitionSpec::Dirichlet { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::domain("Dirichlet concentration must be positive"));
            }
            let gamma = Gamma::new(alpha, 1.0).map_err(|_| Error::domain("invalid Dirichlet concentration"))?;
            for (class, rows) in by_class.iter().enumerate() {
                let draws: Vec<f64> = (0..devices).map(|_| gamma.sample(rng)).collect();
                let total: f64 = draws.iter().sum();
                let props: Vec<f64> = if total > 0.0 {
                    draws.iter().map(|d| d / total).collect()
                } else {
                    vec![1.0 / devices as f64; devices]
                };
                for (i, c) in largest_remainder(rows.len(), &props).into_iter().enumerate() {
                    counts[i][class] = c;
                }
            }
            fill_empty_devices(&mut counts);
        }
    }

    let mut cursor = vec![0usize; k];
    let mut shards = Vec::with_capacity(devices);
    for row in &counts {
        let mut idx = Vec::new();
        for (class, &c) in row.iter().enumerate() {
            idx.extend_from_slice(&by_class[class][cursor[class]..cursor[class] + c]);
            cursor[class] += c;
        }
        shards.push(data.subset(&idx)?);
    }
    let table =
        ClassPartition::from_counts(counts.iter().map(|row| row.iter().map(|&c| c as u64).collect()).collect())?;
    Ok((shards, table))
}

/// Integer counts summing to `n` closest to `n * props`; leftovers go to
/// the largest fractional parts, ties to the lowest index.
fn largest_remainder(n: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - libm::floor(exact[a]);
        let fb = exact[b] - libm::floor(exact[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Moves single samples from the fullest device to each empty one.
fn fill_empty_devices(counts: &mut [Vec<usize>]) {
    for empty in 0..counts.len() {
        if counts[empty].iter().sum::<usize>() > 0 {
            continue;
        }
        let donor =
            (0..counts.len()).max_by_key(|&i| (counts[i].iter().sum::<usize>(), core::cmp::Reverse(i))).unwrap_or(0);
        let class = (0..counts[donor].len()).max_by_key(|&c| (counts[donor][c], core::cmp::Reverse(c))).unwrap_or(0);
        counts[donor][class] -= 1;
        counts[empty][class] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        crate::simplex::euclidean(a, b)
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![1.0, 2.0], 2, vec![0], 2).is_ok());
        assert!(LabeledDataset::new(vec![1.0], 2, vec![0], 2).is_err());
        assert!(LabeledDataset::new(vec![1.0, 2.0], 2, vec![2], 2).is_err());
        assert!(LabeledDataset::new(vec![f64::NAN, 2.0], 2, vec![0], 2).is_err());
        assert!(LabeledDataset::new(vec![], 0, vec![], 2).is_err());
    }

    #[test]
    fn subset_and_counts() {
        let d = LabeledDataset::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2, vec![1, 0, 1], 3).unwrap();
        assert_eq!(d.class_counts(), vec![1, 2, 0]);
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.features(0), &[4.0, 5.0]);
        assert_eq!(s.labels(), &[1, 1]);
        assert!(d.subset(&[3]).is_err());
    }

    #[test]
    fn means_are_equidistant() {
        for k in 1..=10 {
            for dims in [k.max(2) - 1, k + 3] {
                let means = simplex_means(k, dims, 10.0).unwrap();
                for a in 0..k {
                    assert_eq!(means[a].len(), dims);
                    for b in a + 1..k {
                        assert!((dist(&means[a], &means[b]) - 10.0).abs() < 1e-12);
                    }
                }
                let centroid: f64 = (0..dims).map(|d| means.iter().map(|m| m[d]).sum::<f64>().abs()).sum();
                assert!(centroid < 1e-12);
            }
        }
        assert!(simplex_means(5, 3, 1.0).is_err());
        assert!(simplex_means(0, 3, 1.0).is_err());
    }

    #[test]
    fn blob_means_and_spread() {
        let spec = BlobSpec { num_classes: 3, dims: 2, samples_per_class: 4000, separation: 10.0 };
        let data = synth_blobs(&spec, &mut stream(1, Stream::Data, &[])).unwrap();
        let means = simplex_means(3, 2, 10.0).unwrap();
        assert_eq!(data.class_counts(), vec![4000; 3]);
        for (class, mean) in means.iter().enumerate() {
            let rows: Vec<&[f64]> = data.iter().filter(|(_, y)| *y == class).map(|(x, _)| x).collect();
            for d in 0..2 {
                let avg = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
                let var = rows.iter().map(|r| (r[d] - avg) * (r[d] - avg)).sum::<f64>() / rows.len() as f64;
                assert!((avg - mean[d]).abs() < 0.06, "{avg} vs {}", mean[d]);
                assert!((var - 1.0).abs() < 0.08, "{var}");
            }
        }
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(largest_remainder(7, &[1.0 / 3.0; 3]), vec![3, 2, 2]);
        assert_eq!(largest_remainder(0, &[0.5, 0.5]), vec![0, 0]);
    }

    fn labels_dataset(labels: Vec<usize>, k: usize) -> LabeledDataset {
        let features = (0..labels.len()).map(|i| i as f64).collect();
        LabeledDataset::new(features, 1, labels, k).unwrap()
    }

    #[test]
    fn iid_partition_is_balanced_and_complete() {
        let labels: Vec<usize> = (0..103).map(|i| i % 4).collect();
        let data = labels_dataset(labels, 4);
        let (shards, table) = partition(&data, 5, PartitionSpec::Iid, &mut stream(3, Stream::Partition, &[])).unwrap();
        let sizes: Vec<usize> = shards.iter().map(LabeledDataset::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (i, shard) in shards.iter().enumerate() {
            let counts = shard.class_counts();
            for k in 0..4 {
                assert_eq!(counts[k], table.count(i, k));
            }
        }
        // every row used exactly once: features are the row ids
        let mut seen: Vec<f64> = shards.iter().flat_map(|s| s.iter().map(|(x, _)| x[0])).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..103).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn dirichlet_skew_and_nonempty() {
        let labels: Vec<usize> = (0..200).map(|i| i % 10).collect();
        let data = labels_dataset(labels, 10);
        for seed in 0..20 {
            let mut rng = stream(seed, Stream::Partition, &[]);
            let (shards, table) = partition(&data, 20, PartitionSpec::Dirichlet { alpha: 0.05 }, &mut rng).unwrap();
            assert!(shards.iter().all(|s| !s.is_empty()));
            for k in 0..10 {
                assert_eq!(table.class_total(k), 20);
            }
        }
        // small alpha concentrates each class on few devices
        let (_, table) =
            partition(&data, 20, PartitionSpec::Dirichlet { alpha: 0.01 }, &mut stream(99, Stream::Partition, &[]))
                .unwrap();
        let holders = (0..20).filter(|&i| table.count(i, 0) > 0).count();
        assert!(holders <= 5, "{holders}");
    }

    #[test]
    fn partition_errors() {
        let data = labels_dataset(vec![0, 1, 0], 2);
        let mut rng = stream(0, Stream::Partition, &[]);
        assert!(partition(&data, 4, PartitionSpec::Iid, &mut rng).is_err());
        assert!(partition(&data, 0, PartitionSpec::Iid, &mut rng).is_err());
        assert!(partition(&data, 2, PartitionSpec::Dirichlet { alpha: 0.0 }, &mut rng).is_err());
        let (shards, _) = partition(&data, 3, PartitionSpec::Dirichlet { alpha: 0.1 }, &mut rng).unwrap();
        assert!(shards.iter().all(|s| s.len() == 1));
    }
}

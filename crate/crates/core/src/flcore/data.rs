//! Synthetic Gaussian-blob classification data with a label-skewed split.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seed::{stream, purpose};
use crate::topology::TABLE_GROUPS;

/// Row-major samples with integer labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub n_features: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(n_features: usize) -> Self {
        Self { n_features, features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn push(&mut self, x: &[f64], label: usize) {
        debug_assert_eq!(x.len(), self.n_features);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTask {
    pub n_classes: usize,
    pub n_features: usize,
    /// Standard deviation of the class centers around the origin.
    pub separation: f64,
    /// Within-class standard deviation.
    pub noise: f64,
    pub min_samples: usize,
    pub max_samples: usize,
    pub test_per_class: usize,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_features: 32,
            separation: 0.25,
            noise: 0.5,
            min_samples: 160,
            max_samples: 240,
            test_per_class: 100,
        }
    }
}

/// Device datasets, a pooled copy of them and a held-out test set.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub devices: Vec<Dataset>,
    pub pooled: Dataset,
    pub test: Dataset,
}

impl FederatedData {
    /// `p_n = D_n / Σ D_m`.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.devices.iter().map(Dataset::len).sum();
        self.devices.iter().map(|d| d.len() as f64 / total as f64).collect()
    }

    pub fn p_max(&self) -> f64 {
        self.weights().into_iter().fold(0.0, f64::max)
    }
}

/// Label group of device `n` (zero-based), cycling the default table.
pub fn device_group(n: usize) -> usize {
    TABLE_GROUPS[n % TABLE_GROUPS.len()]
}

/// Classes held by label group `g` (one-based).
pub fn group_classes(g: usize, n_classes: usize) -> [usize; 2] {
    [(g - 1) % n_classes, (g + 1) % n_classes]
}

impl SyntheticTask {
    fn centers<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.n_classes)
            .map(|_| {
                (0..self.n_features)
                    .map(|_| self.separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn draw<R: Rng + ?Sized>(&self, center: &[f64], rng: &mut R, buf: &mut [f64]) {
        for (b, c) in buf.iter_mut().zip(center) {
            let z: f64 = StandardNormal.sample(rng);
            *b = c + self.noise * z;
        }
    }

    /// `n` samples with uniformly random labels (used by unit tests).
    pub fn pooled<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Dataset {
        let centers = self.centers(rng);
        let mut out = Dataset::new(self.n_features);
        let mut buf = vec![0.0; self.n_features];
        for _ in 0..n {
            let c = rng.random_range(0..self.n_classes);
            self.draw(&centers[c], rng, &mut buf);
            out.push(&buf, c);
        }
        out
    }

    /// Split across `n_devices`, each holding the two classes of its label
    /// group in equal expectation and a random size in
    /// `[min_samples, max_samples]`.
    pub fn federated(&self, n_devices: usize, seed: u64) -> FederatedData {
        let centers = self.centers(&mut stream(seed, &[purpose::DATA, u64::MAX]));
        let mut buf = vec![0.0; self.n_features];
        let devices: Vec<Dataset> = (0..n_devices)
            .map(|n| {
                let mut rng = stream(seed, &[purpose::DATA, n as u64]);
                let size = rng.random_range(self.min_samples..=self.max_samples);
                let classes = group_classes(device_group(n), self.n_classes);
                let mut d = Dataset::new(self.n_features);
                for _ in 0..size {
                    let c = classes[rng.random_range(0..classes.len())];
                    self.draw(&centers[c], &mut rng, &mut buf);
                    d.push(&buf, c);
                }
                d
            })
            .collect();
        let mut pooled = Dataset::new(self.n_features);
        for d in &devices {
            pooled.extend(d);
        }
        let mut rng = stream(seed, &[purpose::DATA, u64::MAX - 1]);
        let mut test = Dataset::new(self.n_features);
        for c in 0..self.n_classes {
            for _ in 0..self.test_per_class {
                self.draw(&centers[c], &mut rng, &mut buf);
                test.push(&buf, c);
            }
        }
        FederatedData { devices, pooled, test }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_label_skewed_and_weighted() {
        let task = SyntheticTask::default();
        let fd = task.federated(10, 3);
        let p = fd.weights();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().any(|&x| (x - 0.1).abs() > 1e-3));
        for (n, d) in fd.devices.iter().enumerate() {
            assert!((160..=240).contains(&d.len()));
            let allowed = group_classes(device_group(n), 10);
            assert!(d.labels.iter().all(|l| allowed.contains(l)));
        }
        let covered: std::collections::BTreeSet<usize> =
            fd.devices.iter().flat_map(|d| d.labels.iter().copied()).collect();
        assert_eq!(covered.len(), 10);
        assert_eq!(fd.test.len(), 1000);
        assert_eq!(fd.pooled.len(), fd.devices.iter().map(Dataset::len).sum::<usize>());
    }

    #[test]
    fn same_seed_same_data() {
        let task = SyntheticTask::default();
        assert_eq!(task.federated(4, 9).pooled, task.federated(4, 9).pooled);
        assert_ne!(task.federated(4, 9).pooled, task.federated(4, 10).pooled);
    }
}

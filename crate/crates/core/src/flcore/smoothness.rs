//! Empirical curvature and gradient-noise estimates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::data::FederatedData;
use super::model::{DatasetObjective, LogisticModel, Objective};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessEstimate {
    pub l_hat: f64,
    pub mu_hat: f64,
    /// Largest stochastic-gradient norm seen.
    pub g_hat: f64,
    /// Largest per-device mini-batch gradient standard deviation.
    pub sigma_hat: f64,
    pub sigma_per_device: Vec<f64>,
}

pub const MIN_PAIRS: usize = 100;

fn random_point<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let dir: Vec<f64> = center.iter().map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>();
    center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
}

/// Min and max of `‖∇f(a) − ∇f(b)‖ / ‖a − b‖` over random pairs in a ball.
pub fn gradient_ratio_range<R: Rng + ?Sized>(
    obj: &dyn Objective,
    center: &[f64],
    radius: f64,
    n_pairs: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_pairs < MIN_PAIRS {
        return invalid(format!("need at least {MIN_PAIRS} pairs, got {n_pairs}"));
    }
    if center.len() != obj.dim() {
        return invalid("center has the wrong dimension");
    }
    let mut ga = vec![0.0; obj.dim()];
    let mut gb = vec![0.0; obj.dim()];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..n_pairs {
        let a = random_point(center, radius, rng);
        let b = random_point(center, radius, rng);
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        obj.gradient(&a, &mut ga);
        obj.gradient(&b, &mut gb);
        let gd = ga.iter().zip(&gb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let ratio = gd / dist;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

/// Curvature from pooled-objective pairs around `center`; `G` and `σ_n` from
/// mini-batches of size `batch_size` at the same sample points.
pub fn estimate_smoothness<R: Rng + ?Sized>(
    model: &LogisticModel,
    data: &FederatedData,
    center: &[f64],
    radius: f64,
    n_pairs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<SmoothnessEstimate> {
    let pooled = DatasetObjective::new(*model, &data.pooled);
    let (mu_hat, l_hat) = gradient_ratio_range(&pooled, center, radius, n_pairs, rng)?;

    let n_points = (n_pairs / 10).max(10);
    let batches_per_point = 20;
    let mut g_hat = 0.0f64;
    let mut sigma_per_device = vec![0.0f64; data.devices.len()];
    let mut full = vec![0.0; model.n_params()];
    let mut g = vec![0.0; model.n_params()];
    let mut batch = vec![0usize; batch_size.max(1)];
    for _ in 0..n_points {
        let w = random_point(center, radius, rng);
        for (n, d) in data.devices.iter().enumerate() {
            let obj = DatasetObjective::new(*model, d);
            obj.gradient(&w, &mut full);
            let mut var = 0.0;
            for _ in 0..batches_per_point {
                for b in batch.iter_mut() {
                    *b = rng.random_range(0..d.len());
                }
                model.gradient_on(&w, d, &batch, &mut g);
                g_hat = g_hat.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
                var += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            let sd = (var / batches_per_point as f64).sqrt();
            sigma_per_device[n] = sigma_per_device[n].max(sd);
        }
    }
    let sigma_hat = sigma_per_device.iter().copied().fold(0.0, f64::max);
    Ok(SmoothnessEstimate { l_hat, mu_hat, g_hat, sigma_hat, sigma_per_device })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flcore::data::SyntheticTask;
    use crate::flcore::model::Quadratic;
    use crate::seed::stream;
    use nalgebra::DMatrix;

    #[test]
    fn quadratic_ratios_stay_in_spectrum() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let eig = a.clone().symmetric_eigenvalues();
        let (emin, emax) = (eig.min(), eig.max());
        let q = Quadratic { a };
        let (lo, hi) = gradient_ratio_range(&q, &[0.0; 3], 2.0, 500, &mut stream(1, &[])).unwrap();
        assert!(lo >= emin - 1e-12 && hi <= emax + 1e-12);
        assert!(gradient_ratio_range(&q, &[0.0; 3], 2.0, 50, &mut stream(1, &[])).is_err());
    }

    #[test]
    fn regularizer_floors_and_raises_mu() {
        let task = SyntheticTask { n_classes: 3, n_features: 4, ..SyntheticTask::default() };
        let data = task.federated(3, 2);
        let center = vec![0.0; 15];
        let est = |lambda| {
            let model = LogisticModel { n_classes: 3, n_features: 4, lambda_reg: lambda };
            estimate_smoothness(&model, &data, &center, 1.0, 200, 8, &mut stream(4, &[])).unwrap()
        };
        let a = est(1e-3);
        let b = est(2e-3);
        assert!(a.mu_hat >= 1e-3 - 1e-12);
        assert!(b.mu_hat > a.mu_hat);
        assert!(a.l_hat >= a.mu_hat);
        assert!(a.g_hat > 0.0 && a.sigma_hat > 0.0);
    }
}

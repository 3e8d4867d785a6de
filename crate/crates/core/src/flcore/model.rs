//! L2-regularized multinomial logistic regression.

use nalgebra::{DMatrix, DVector};

use super::data::Dataset;
use crate::error::{Error, Result};

/// Something with a value and gradient over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64], out: &mut [f64]);
}

/// Weights are stored class-major: row `c` holds `dim` feature weights
/// followed by the intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub lambda_reg: f64,
}

impl LogisticModel {
    pub fn n_params(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn stride(&self) -> usize {
        self.n_features + 1
    }

    /// Softmax class probabilities for one sample, written into `probs`.
    fn probabilities(&self, w: &[f64], x: &[f64], probs: &mut [f64]) {
        let s = self.stride();
        for (c, p) in probs.iter_mut().enumerate() {
            let row = &w[c * s..(c + 1) * s];
            *p = row[self.n_features] + row[..self.n_features].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let s = self.stride();
        (0..self.n_classes)
            .map(|c| {
                let row = &w[c * s..(c + 1) * s];
                row[self.n_features] + row[..self.n_features].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(c, _)| c)
    }

    pub fn accuracy(&self, w: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len())
            .filter(|&i| self.predict(w, data.sample(i)) == data.labels[i])
            .count();
        hits as f64 / data.len() as f64
    }

    /// Mean cross-entropy over `idx` plus `λ/2‖w‖²`.
    pub fn loss_on(&self, w: &[f64], data: &Dataset, idx: impl Iterator<Item = usize>) -> f64 {
        let mut probs = vec![0.0; self.n_classes];
        let mut total = 0.0;
        let mut count = 0usize;
        for i in idx {
            self.probabilities(w, data.sample(i), &mut probs);
            total -= probs[data.labels[i]].max(f64::MIN_POSITIVE).ln();
            count += 1;
        }
        let reg = 0.5 * self.lambda_reg * w.iter().map(|v| v * v).sum::<f64>();
        total / count.max(1) as f64 + reg
    }

    /// Gradient of [`Self::loss_on`], written into `out`.
    pub fn gradient_on(&self, w: &[f64], data: &Dataset, idx: &[usize], out: &mut [f64]) {
        let s = self.stride();
        for (o, v) in out.iter_mut().zip(w) {
            *o = self.lambda_reg * v;
        }
        if idx.is_empty() {
            return;
        }
        let scale = 1.0 / idx.len() as f64;
        let mut probs = vec![0.0; self.n_classes];
        for &i in idx {
            let x = data.sample(i);
            self.probabilities(w, x, &mut probs);
            probs[data.labels[i]] -= 1.0;
            for (c, &r) in probs.iter().enumerate() {
                let g = &mut out[c * s..(c + 1) * s];
                let r = r * scale;
                for (gk, xk) in g[..self.n_features].iter_mut().zip(x) {
                    *gk += r * xk;
                }
                g[self.n_features] += r;
            }
        }
    }

    /// Full-batch Hessian of the mean loss over the whole dataset.
    pub fn hessian(&self, w: &[f64], data: &Dataset) -> DMatrix<f64> {
        let s = self.stride();
        let k = self.n_classes;
        let n = data.len();
        let scale = 1.0 / n.max(1) as f64;
        let mut xa = DMatrix::<f64>::from_element(n, s, 1.0);
        let mut probs = DMatrix::<f64>::zeros(n, k);
        let mut buf = vec![0.0; k];
        for i in 0..n {
            let x = data.sample(i);
            for (a, v) in x.iter().enumerate() {
                xa[(i, a)] = *v;
            }
            self.probabilities(w, x, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                probs[(i, c)] = *v;
            }
        }
        let mut h = DMatrix::<f64>::identity(k * s, k * s) * self.lambda_reg;
        let mut weighted = xa.clone();
        for c in 0..k {
            for d in c..k {
                for i in 0..n {
                    let pc = probs[(i, c)];
                    let coef = scale * (if c == d { pc } else { 0.0 } - pc * probs[(i, d)]);
                    weighted.row_mut(i).copy_from(&(xa.row(i) * coef));
                }
                let block = xa.transpose() * &weighted;
                let mut upper = h.view_mut((c * s, d * s), (s, s));
                upper += &block;
                if c != d {
                    let mut lower = h.view_mut((d * s, c * s), (s, s));
                    lower += block.transpose();
                }
            }
        }
        h
    }
}

/// Full-batch objective of a model on one dataset.
pub struct DatasetObjective<'a> {
    pub model: LogisticModel,
    pub data: &'a Dataset,
    all: Vec<usize>,
}

impl<'a> DatasetObjective<'a> {
    pub fn new(model: LogisticModel, data: &'a Dataset) -> Self {
        Self { model, data, all: (0..data.len()).collect() }
    }
}

impl Objective for DatasetObjective<'_> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.model.loss_on(w, self.data, 0..self.data.len())
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        self.model.gradient_on(w, self.data, &self.all, out);
    }
}

/// `½ wᵀAw` for a symmetric positive definite `A`.
pub struct Quadratic {
    pub a: DMatrix<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let v = DVector::from_column_slice(w);
        0.5 * v.dot(&(&self.a * &v))
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        let g = &self.a * DVector::from_column_slice(w);
        out.copy_from_slice(g.as_slice());
    }
}

pub const OPTIMUM_GRAD_TOL: f64 = 1e-10;
const NEWTON_MAX_STEPS: usize = 100;

/// Minimizer of the pooled objective by damped Newton steps.
pub fn solve_optimum(model: &LogisticModel, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidState("cannot fit an empty dataset".into()));
    }
    let obj = DatasetObjective::new(*model, data);
    let p = model.n_params();
    let mut w = vec![0.0; p];
    let mut g = vec![0.0; p];
    for _ in 0..NEWTON_MAX_STEPS {
        obj.gradient(&w, &mut g);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < OPTIMUM_GRAD_TOL {
            return Ok(w);
        }
        let h = model.hessian(&w, data);
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Numerical("Hessian is not positive definite".into()))?
            .solve(&DVector::from_column_slice(&g));
        let f0 = obj.value(&w);
        let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if obj.value(&trial) <= f0 - 1e-4 * t * slope || t < 1e-10 {
                w = trial;
                break;
            }
            t *= 0.5;
        }
    }
    obj.gradient(&w, &mut g);
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gnorm < 1e3 * OPTIMUM_GRAD_TOL {
        Ok(w)
    } else {
        Err(Error::Numerical(format!(
            "Newton iteration stalled at gradient norm {gnorm:e}"
        )))
    }
}

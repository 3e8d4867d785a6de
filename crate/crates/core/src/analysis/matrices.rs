//! Bias and variance matrices after `J` lossy aggregations.

use crate::consensus::ConsensusMode;
use crate::error::{Error, Result};
use crate::linalg::{hadamard, matrix_power, spectral_norm, uniform_average, Mat};

/// `A₁ = C∘C∘T` and `A₂ = A₁∘(1 − T)`.
pub fn variance_kernels(c: &Mat, t: &Mat) -> (Mat, Mat) {
    let a1 = hadamard(&hadamard(c, c), t);
    let a2 = hadamard(&a1, &t.map(|v| 1.0 - v));
    (a1, a2)
}

/// `1ᵀ1/N − (C∘T)^J`.
pub fn compute_m1(c: &Mat, t: &Mat, j: usize) -> Mat {
    uniform_average(c.nrows()) - matrix_power(&hadamard(c, t), j)
}

/// `Σ_{k=1..J} A₁^{J−k} A₂ [(C∘T)^{k−1} ∘ (C∘T)^{k−1}]`, obtained by unrolling
/// `D_j = A₁D_{j−1} + A₂(E[W_{j−1}]∘E[W_{j−1}])` from `D_0 = 0`.
pub fn compute_m2(c: &Mat, t: &Mat, j: usize) -> Mat {
    let ct = hadamard(c, t);
    let (a1, a2) = variance_kernels(c, t);
    let n = c.nrows();
    let mut m2 = Mat::zeros(n, n);
    let mut p = Mat::identity(n, n);
    for _ in 0..j {
        m2 = &a1 * &m2 + &a2 * hadamard(&p, &p);
        p = &p * &ct;
    }
    m2
}

/// The closed form with the index placement exactly as printed:
/// `Σ_{k=1..J} A₁^{k−1} A₂ A₃(J−k)` with `A₃(j) = (C∘T)^{j−1}∘(C∘T)^{j−1}`.
/// The `k = J` term needs `(C∘T)^{−1}`, taken as a matrix inverse.
pub fn compute_m2_literal(c: &Mat, t: &Mat, j: usize) -> Result<Mat> {
    let ct = hadamard(c, t);
    let (a1, a2) = variance_kernels(c, t);
    let n = c.nrows();
    let a3 = |idx: usize| -> Result<Mat> {
        let p = if idx == 0 {
            ct.clone().try_inverse().ok_or_else(|| {
                Error::Numerical("C∘T is singular; the printed index needs its inverse".into())
            })?
        } else {
            matrix_power(&ct, idx - 1)
        };
        Ok(hadamard(&p, &p))
    };
    let mut out = Mat::zeros(n, n);
    for k in 1..=j {
        out += matrix_power(&a1, k - 1) * &a2 * a3(j - k)?;
    }
    Ok(out)
}

/// `C^J − (C∘T)^J` without channel compensation, zero with it.
pub fn compute_m3(c: &Mat, t: &Mat, j: usize, mode: ConsensusMode) -> Mat {
    match mode {
        ConsensusMode::Aware => Mat::zeros(c.nrows(), c.ncols()),
        ConsensusMode::Unaware => matrix_power(c, j) - matrix_power(&hadamard(c, t), j),
    }
}

/// `1ᵀ1/N − C^J` without channel compensation, `M₁` with it.
pub fn compute_m4(c: &Mat, t: &Mat, j: usize, mode: ConsensusMode) -> Mat {
    match mode {
        ConsensusMode::Aware => compute_m1(c, t, j),
        ConsensusMode::Unaware => uniform_average(c.nrows()) - matrix_power(c, j),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundMatrices {
    pub j: usize,
    pub m1: Mat,
    pub m2: Mat,
    pub m3: Mat,
    pub m4: Mat,
}

/// Spectral norms of the four matrices plus `‖1_N M₁‖`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MatrixNorms {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub ones_m1: f64,
}

impl BoundMatrices {
    pub fn compute(c: &Mat, t: &Mat, j: usize, mode: ConsensusMode) -> Self {
        Self {
            j,
            m1: compute_m1(c, t, j),
            m2: compute_m2(c, t, j),
            m3: compute_m3(c, t, j, mode),
            m4: compute_m4(c, t, j, mode),
        }
    }

    pub fn norms(&self) -> Result<MatrixNorms> {
        let ones_m1 = self.m1.row_sum();
        Ok(MatrixNorms {
            m1: spectral_norm(&self.m1)?,
            m2: spectral_norm(&self.m2)?,
            m3: spectral_norm(&self.m3)?,
            m4: spectral_norm(&self.m4)?,
            ones_m1: ones_m1.norm(),
        })
    }
}

/// Yields `M₁..M₄` for `J = 1, 2, …`, reusing the previous powers.
pub struct MatrixSweep {
    mode: ConsensusMode,
    c: Mat,
    ct: Mat,
    a1: Mat,
    a2: Mat,
    avg: Mat,
    c_pow: Mat,
    ct_pow: Mat,
    m2: Mat,
    j: usize,
}

impl MatrixSweep {
    pub fn new(c: &Mat, t: &Mat, mode: ConsensusMode) -> Self {
        let n = c.nrows();
        let (a1, a2) = variance_kernels(c, t);
        Self {
            mode,
            c: c.clone(),
            ct: hadamard(c, t),
            a1,
            a2,
            avg: uniform_average(n),
            c_pow: Mat::identity(n, n),
            ct_pow: Mat::identity(n, n),
            m2: Mat::zeros(n, n),
            j: 0,
        }
    }
}

impl Iterator for MatrixSweep {
    type Item = BoundMatrices;

    fn next(&mut self) -> Option<BoundMatrices> {
        // The variance term uses the power from the previous slot.
        self.m2 = &self.a1 * &self.m2 + &self.a2 * hadamard(&self.ct_pow, &self.ct_pow);
        self.ct_pow = &self.ct_pow * &self.ct;
        self.j += 1;
        let m1 = &self.avg - &self.ct_pow;
        let (m3, m4) = match self.mode {
            ConsensusMode::Aware => (Mat::zeros(self.c.nrows(), self.c.ncols()), m1.clone()),
            ConsensusMode::Unaware => {
                self.c_pow = &self.c_pow * &self.c;
                (&self.c_pow - &self.ct_pow, &self.avg - &self.c_pow)
            }
        };
        Some(BoundMatrices { j: self.j, m1, m2: self.m2.clone(), m3, m4 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn two_node(c_off: f64, t_off: f64) -> (Mat, Mat) {
        let c = Mat::from_row_slice(2, 2, &[1.0 - c_off, c_off, c_off, 1.0 - c_off]);
        let t = Mat::from_row_slice(2, 2, &[1.0, t_off, t_off, 1.0]);
        (c, t)
    }

    #[test]
    fn m1_two_node() {
        let (c, t) = two_node(0.5, 0.5);
        let m1 = compute_m1(&c, &t, 1);
        let expect = Mat::from_row_slice(2, 2, &[0.0, 0.25, 0.25, 0.0]);
        assert!(max_abs_diff(&m1, &expect) < 1e-15);
        let m3 = compute_m3(&c, &t, 1, ConsensusMode::Unaware);
        assert!(max_abs_diff(&m3, &expect) < 1e-15);
    }

    #[test]
    fn m2_base_case_is_bernoulli_variance() {
        let (c, t) = two_node(0.5, 0.5);
        let m2 = compute_m2(&c, &t, 1);
        let expect = Mat::from_row_slice(2, 2, &[0.0, 0.0625, 0.0625, 0.0]);
        assert!(max_abs_diff(&m2, &expect) < 1e-15);
        let (_, a2) = variance_kernels(&c, &t);
        assert_eq!(m2, a2);
    }

    #[test]
    fn perfect_links_zero_variance_and_gap() {
        let (c, t) = two_node(0.3, 1.0);
        for j in 1..6 {
            assert_eq!(compute_m2(&c, &t, j), Mat::zeros(2, 2));
            assert_eq!(compute_m3(&c, &t, j, ConsensusMode::Unaware), Mat::zeros(2, 2));
        }
        assert!(compute_m1(&c, &t, 200).amax() < 1e-12);
        assert_eq!(compute_m1(&c, &t, 1), uniform_average(2) - &c);
        assert_eq!(compute_m4(&c, &t, 1, ConsensusMode::Unaware), uniform_average(2) - &c);
    }

    #[test]
    fn aware_structure() {
        let (c, t) = two_node(0.625, 0.8);
        for j in 1..5 {
            assert_eq!(compute_m3(&c, &t, j, ConsensusMode::Aware), Mat::zeros(2, 2));
            assert_eq!(compute_m4(&c, &t, j, ConsensusMode::Aware), compute_m1(&c, &t, j));
        }
    }

    #[test]
    fn sweep_matches_direct_evaluation() {
        let c = Mat::from_row_slice(
            3,
            3,
            &[0.4, 0.3, 0.3, 0.3, 0.7, 0.0, 0.3, 0.0, 0.7],
        );
        let t = Mat::from_row_slice(3, 3, &[1.0, 0.6, 0.9, 0.6, 1.0, 0.0, 0.9, 0.0, 1.0]);
        for mode in [ConsensusMode::Unaware, ConsensusMode::Aware] {
            for (k, swept) in MatrixSweep::new(&c, &t, mode).take(12).enumerate() {
                let direct = BoundMatrices::compute(&c, &t, k + 1, mode);
                assert!(max_abs_diff(&swept.m1, &direct.m1) < 1e-13);
                assert!(max_abs_diff(&swept.m2, &direct.m2) < 1e-13);
                assert!(max_abs_diff(&swept.m3, &direct.m3) < 1e-13);
                assert!(max_abs_diff(&swept.m4, &direct.m4) < 1e-13);
                assert!(swept.m2.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn literal_index_differs_from_recursion() {
        let (c, t) = two_node(0.5, 0.5);
        let rec = compute_m2(&c, &t, 2);
        let lit = compute_m2_literal(&c, &t, 2).unwrap();
        assert!(max_abs_diff(&rec, &lit) > 1e-3);
    }
}

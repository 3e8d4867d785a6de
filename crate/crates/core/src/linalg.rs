//! Dense matrix helpers: powers, spectral norms and symmetric eigenvalues.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the sizes involved are
//! the number of devices, so dense O(N^3) kernels are the right tool.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Relative tolerance on the Rayleigh quotient between power-iteration steps.
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;
/// Off-diagonal Frobenius norm (relative to the input) at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const GRAM_SQUARINGS: usize = 6;

/// The uniform averaging matrix `1ᵀ1 / N`.
pub fn uniform_average(n: usize) -> Mat {
    Mat::from_element(n, n, 1.0 / n as f64)
}

pub fn hadamard(a: &Mat, b: &Mat) -> Mat {
    a.component_mul(b)
}

/// `a^j` by binary exponentiation; `a^0` is the identity.
pub fn matrix_power(a: &Mat, j: usize) -> Mat {
    assert!(a.is_square(), "matrix_power needs a square matrix");
    let mut result = Mat::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    let mut exp = j;
    while exp > 0 {
        if exp & 1 == 1 {
            result = &result * &base;
        }
        exp >>= 1;
        if exp > 0 {
            base = &base * &base;
        }
    }
    result
}

pub fn row_sums(a: &Mat) -> Vec<f64> {
    a.row_iter().map(|r| r.sum()).collect()
}

pub fn col_sums(a: &Mat) -> Vec<f64> {
    a.column_iter().map(|c| c.sum()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax()
}

/// Largest singular value of `a`.
///
/// Power iteration on the Gram matrix `AᵀA` (or `AAᵀ` when that one is
/// smaller). Before iterating, the normalized Gram matrix is squared a few
/// times so that nearly degenerate leading eigenvalues still separate within
/// the iteration budget; the Rayleigh quotient is always taken on the
/// unsquared Gram matrix.
pub fn spectral_norm(a: &Mat) -> Result<f64> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "spectral norm of a matrix with non-finite entries".into(),
        ));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let gram = if a.nrows() < a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    Ok(largest_gram_eigenvalue(&gram)?.max(0.0).sqrt())
}

fn largest_gram_eigenvalue(gram: &Mat) -> Result<f64> {
    let n = gram.nrows();
    let scale = gram.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(gram[(0, 0)]);
    }

    let mut boosted = gram / scale;
    for _ in 0..GRAM_SQUARINGS {
        boosted = &boosted * &boosted;
        let s = boosted.amax();
        if s == 0.0 {
            break;
        }
        boosted /= s;
    }

    let mut last_rayleigh = 0.0;
    let mut last_change = f64::NAN;
    for start in start_vectors(gram) {
        let mut v = start;
        let mut prev = f64::NAN;
        for _ in 0..POWER_MAX_ITERATIONS {
            let w = &boosted * &v;
            let norm = w.norm();
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
            v = w / norm;
            let rayleigh = v.dot(&(gram * &v));
            if (rayleigh - prev).abs() <= POWER_TOLERANCE * rayleigh.abs() {
                return Ok(rayleigh);
            }
            last_change = (rayleigh - prev).abs();
            prev = rayleigh;
            last_rayleigh = rayleigh;
        }
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge in {POWER_MAX_ITERATIONS} iterations \
         (last estimate {last_rayleigh:e}, last change {last_change:e}, n = {n})"
    )))
}

/// A generic deterministic start followed by the coordinate axis with the
/// largest Gram diagonal; the second only matters when the first happens to
/// be orthogonal to the leading eigenspace.
fn start_vectors(gram: &Mat) -> impl Iterator<Item = DVector<f64>> {
    let n = gram.nrows();
    let generic = DVector::from_iterator(
        n,
        (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract()),
    );
    let heaviest = (0..n)
        .max_by(|&a, &b| gram[(a, a)].total_cmp(&gram[(b, b)]))
        .unwrap_or(0);
    let mut axis = DVector::zeros(n);
    axis[heaviest] = 1.0;
    [generic.normalize(), axis].into_iter()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "eigenvalues of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let frob = a.norm();
    if (a - a.transpose()).amax() > 1e-12 * frob.max(1.0) {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    let mut m = a.clone();
    let threshold = JACOBI_TOLERANCE * frob.max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            converged = true;
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
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&m) > threshold {
        return Err(Error::Numerical(format!(
            "Jacobi rotations did not converge (off-diagonal norm {:e})",
            off_diagonal_norm(&m)
        )));
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

fn off_diagonal_norm(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spectral_norm_of_identity_is_one() {
        assert!((spectral_norm(&Mat::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((spectral_norm(&a).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_nilpotent() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert!((spectral_norm(&a).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_ignores_all_ones_null_space() {
        // 1ᵀ1/N − C annihilates the ones vector; the start vector must not.
        let c = Mat::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.5]);
        let a = uniform_average(3) - c;
        let eig = symmetric_eigenvalues(&a).unwrap();
        let expect = eig.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        assert!((spectral_norm(&a).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_row_vector_is_euclidean() {
        let a = Mat::from_row_slice(1, 3, &[3.0, 4.0, 12.0]);
        assert!((spectral_norm(&a).unwrap() - 13.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Mat::from_row_slice(1, 2, &[f64::NAN, 1.0]);
        assert!(matches!(spectral_norm(&a), Err(Error::Numerical(_))));
    }

    #[test]
    fn jacobi_on_path_laplacian() {
        let l = Mat::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let eig = symmetric_eigenvalues(&l).unwrap();
        assert!(eig[0].abs() < 1e-14 && (eig[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn matrix_power_edge_cases() {
        let c = Mat::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        assert_eq!(matrix_power(&c, 0), Mat::identity(2, 2));
        assert_eq!(matrix_power(&c, 1), c);
        let p5 = &c * &c * &c * &c * &c;
        assert!(max_abs_diff(&matrix_power(&c, 5), &p5) < 1e-15);
    }

    fn symmetric(n: usize) -> impl Strategy<Value = Mat> {
        prop::collection::vec(-5.0..5.0f64, n * n).prop_map(move |v| {
            let m = Mat::from_vec(n, n, v);
            (&m + m.transpose()) * 0.5
        })
    }

    proptest! {
        #[test]
        fn jacobi_matches_nalgebra(m in (2usize..8).prop_flat_map(symmetric)) {
            let ours = symmetric_eigenvalues(&m).unwrap();
            let mut theirs: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (a, b) in ours.iter().zip(&theirs) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn power_iteration_matches_svd(
            (r, c, v) in (1usize..7, 1usize..7)
                .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-3.0..3.0f64, r * c)))
        ) {
            let m = Mat::from_vec(r, c, v);
            let svd = m.clone().svd(false, false);
            let top = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
            let ours = spectral_norm(&m).unwrap();
            prop_assert!((ours - top).abs() <= 1e-8 * (1.0 + top));
        }
    }
}

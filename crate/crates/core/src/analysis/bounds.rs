//! The scalar objective `Φ` and its closed-form sandwich.
//!
//! Everything is evaluated in units of `ζ₅` (the quantity `Ψ = ζ₅Φ` that
//! actually enters the one-round bound). On a lossless network `ζ₃` and `ζ₅`
//! are infinite while the matrices they weight vanish, so those terms are
//! dropped there and `Φ = Ψ/ζ₅` reads as zero.

use serde::{Deserialize, Serialize};

use super::matrices::MatrixNorms;
use super::zeta::Zetas;
use crate::consensus::ConsensusMode;
use crate::error::{Error, Result};
use crate::linalg::{col_sums, hadamard, spectral_norm, uniform_average, Mat};

/// Largest `|β₂ − β₁|` treated as equal in the geometric-sum factor.
pub const BETA_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
    pub beta7: f64,
    pub beta8: f64,
}

/// `β₇`, `β₈` range over the links actually used (non-zero off-diagonal `C`).
pub fn compute_betas(c: &Mat, t: &Mat) -> Result<Betas> {
    let n = c.nrows();
    let ct = hadamard(c, t);
    let avg = uniform_average(n);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j && c[(i, j)] != 0.0 {
                lo = lo.min(t[(i, j)]);
                hi = hi.max(t[(i, j)]);
            }
        }
    }
    if lo > hi {
        lo = 1.0;
        hi = 1.0;
    }
    Ok(Betas {
        beta1: spectral_norm(&ct)?,
        beta2: spectral_norm(c)?,
        beta3: spectral_norm(&(c - &ct))?,
        beta4: spectral_norm(&(&avg - c))?,
        beta5: spectral_norm(&(&avg - &ct))?,
        beta6: col_sums(&ct).into_iter().fold(f64::INFINITY, f64::min),
        beta7: lo,
        beta8: hi,
    })
}

/// `β^J` for real `J > 0`, with `0^J = 0`.
pub fn real_pow(beta: f64, j: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else {
        (j * beta.ln()).exp()
    }
}

/// `(β₂^J − β₁^J)/(β₂ − β₁)`, continuous through `β₁ = β₂`.
pub fn geometric_factor(beta1: f64, beta2: f64, j: f64) -> f64 {
    if (beta2 - beta1).abs() < BETA_TIE {
        j * real_pow(beta1, j - 1.0)
    } else {
        (real_pow(beta2, j) - real_pow(beta1, j)) / (beta2 - beta1)
    }
}

/// `Ψ = ζ₅Φ` split by term, in the order they appear in `Φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiTerms {
    pub consensus_bias: f64,
    pub channel_gap: f64,
    pub mixing_residual: f64,
    pub local_bias: f64,
    pub variance: f64,
}

impl PhiTerms {
    pub fn psi(&self) -> f64 {
        self.consensus_bias + self.channel_gap + self.mixing_residual + self.local_bias + self.variance
    }
}

pub fn phi_terms(norms: &MatrixNorms, z: &Zetas, p_max: f64) -> PhiTerms {
    let lossy = !z.lossless();
    let sp = 1.0 - p_max.sqrt();
    let variance_coef = z.zeta4 * (1.0 - p_max) + if lossy { z.zeta3 * p_max + z.zeta5 } else { 0.0 };
    PhiTerms {
        consensus_bias: if lossy { z.zeta3 * p_max * norms.ones_m1.powi(2) } else { 0.0 },
        channel_gap: if lossy { z.zeta5 * norms.m3.powi(2) } else { 0.0 },
        mixing_residual: z.zeta7 * norms.m4.powi(2),
        local_bias: z.zeta4 * sp * sp * norms.m1.powi(2),
        variance: variance_coef * norms.m2,
    }
}

/// `ζ₅Φ`.
pub fn psi(norms: &MatrixNorms, z: &Zetas, p_max: f64) -> f64 {
    phi_terms(norms, z, p_max).psi()
}

pub fn phi(norms: &MatrixNorms, z: &Zetas, p_max: f64) -> f64 {
    to_phi(psi(norms, z, p_max), z)
}

/// Convert a `ζ₅`-scaled value back to `Φ` units.
pub fn to_phi(psi: f64, z: &Zetas) -> f64 {
    if z.zeta5.is_infinite() {
        0.0
    } else {
        psi / z.zeta5
    }
}

/// Closed-form bounds, `ζ₅`-scaled.
#[derive(Debug, Clone, Copy)]
pub struct PhiBounds {
    pub betas: Betas,
    pub zetas: Zetas,
    pub p_max: f64,
    pub n: usize,
}

impl PhiBounds {
    pub fn new(betas: Betas, zetas: Zetas, p_max: f64, n: usize, mode: ConsensusMode) -> Result<Self> {
        if mode == ConsensusMode::Aware {
            return Err(Error::UnsupportedMode(
                "the closed-form sandwich is only available without channel compensation".into(),
            ));
        }
        Ok(Self { betas, zetas, p_max, n })
    }

    /// `ζ₅Φ_L(J)`.
    pub fn psi_lower(&self, j: f64) -> f64 {
        let b = &self.betas;
        let z = &self.zetas;
        let lossy = !z.lossless();
        let p = self.p_max;
        let n = self.n as f64;
        let sp = 1.0 - p.sqrt();
        let b1j = real_pow(b.beta1, j);
        let b2j = real_pow(b.beta2, j);

        let head = z.zeta4 * sp * sp + if lossy { n * z.zeta3 * p } else { 0.0 };
        let mut out = head * (1.0 - b1j).powi(2) + z.zeta7 * real_pow(b.beta4, 2.0 * j);
        if lossy {
            out += z.zeta5 * (b2j - b1j).powi(2);
        }
        let var_coef = z.zeta4 * (1.0 - p) + if lossy { z.zeta3 * p + z.zeta5 } else { 0.0 };
        let var_floor = real_pow(b.beta7, 2.0 * j + 1.0)
            * (1.0 - b.beta8)
            * real_pow(b.beta2, 2.0 * j + 2.0)
            / n;
        if var_floor != 0.0 {
            out += var_coef * var_floor;
        }
        out
    }

    /// `ζ₅Φ_U(J)`. The variance term's coefficient takes `+ζ₅` (the printed
    /// `+1` is in `Φ` units before scaling).
    pub fn psi_upper(&self, j: f64) -> f64 {
        let b = &self.betas;
        let z = &self.zetas;
        let lossy = !z.lossless();
        let p = self.p_max;
        let n = self.n as f64;
        let sp = 1.0 - p.sqrt();
        let gb3 = geometric_factor(b.beta1, b.beta2, j) * b.beta3;
        let b4j = real_pow(b.beta4, j);

        let var_coef = z.zeta4 * (1.0 - p) + if lossy { z.zeta3 * p + z.zeta5 } else { 0.0 };
        let mut out = 0.0;
        if gb3 != 0.0 {
            out += var_coef * gb3 * real_pow(b.beta1, j);
        }
        if lossy {
            out += n * z.zeta3 * p * (1.0 - real_pow(b.beta6, j)).powi(2);
            out += z.zeta5 * gb3 * gb3;
        }
        out + z.zeta4 * sp * sp * (gb3 + b4j).powi(2) + z.zeta7 * real_pow(b.beta4, 2.0 * j)
    }

    pub fn phi_lower(&self, j: f64) -> f64 {
        to_phi(self.psi_lower(j), &self.zetas)
    }

    pub fn phi_upper(&self, j: f64) -> f64 {
        to_phi(self.psi_upper(j), &self.zetas)
    }
}

pub fn phi_bounds(
    betas: &Betas,
    zetas: &Zetas,
    p_max: f64,
    n: usize,
    j: f64,
    mode: ConsensusMode,
) -> Result<(f64, f64)> {
    let b = PhiBounds::new(*betas, *zetas, p_max, n, mode)?;
    Ok((b.phi_lower(j), b.phi_upper(j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::zeta::{compute_zetas, BoundConstants};

    #[test]
    fn betas_for_perfect_unaware() {
        let c = Mat::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.75, 0.0, 0.25, 0.0, 0.75]);
        let t = Mat::from_element(3, 3, 1.0);
        let b = compute_betas(&c, &t).unwrap();
        assert!((b.beta1 - 1.0).abs() < 1e-12 && (b.beta2 - 1.0).abs() < 1e-12);
        assert_eq!(b.beta3, 0.0);
        assert_eq!((b.beta7, b.beta8), (1.0, 1.0));
        assert!((b.beta6 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn geometric_factor_is_continuous() {
        let a = geometric_factor(0.9, 0.9 + 1e-13, 7.0);
        let b = geometric_factor(0.9, 0.9 + 1e-8, 7.0);
        assert!((a - 7.0 * 0.9f64.powi(6)).abs() < 1e-12);
        assert!((a - b).abs() < 1e-5);
        assert_eq!(real_pow(0.0, 3.5), 0.0);
    }

    #[test]
    fn lower_bound_limit() {
        // β₁ < 1 = β₂ with β₇ = β₈ = 1 leaves the saturating terms.
        let betas = Betas {
            beta1: 0.8,
            beta2: 1.0,
            beta3: 0.1,
            beta4: 0.5,
            beta5: 0.6,
            beta6: 0.7,
            beta7: 1.0,
            beta8: 1.0,
        };
        let z = compute_zetas(&BoundConstants::CNN, 0.1).unwrap();
        let p = 0.1;
        let b = PhiBounds::new(betas, z, p, 10, ConsensusMode::Unaware).unwrap();
        let limit = (10.0 * z.zeta3 * p + z.zeta4 * (1.0 - p.sqrt()).powi(2)) / z.zeta5 + 1.0;
        let got = b.phi_lower(2000.0);
        assert!((got - limit).abs() < 1e-9 * limit, "{got} vs {limit}");
    }

    #[test]
    fn aware_mode_rejected() {
        let z = compute_zetas(&BoundConstants::CNN, 0.1).unwrap();
        let c = Mat::identity(2, 2);
        let b = compute_betas(&c, &c).unwrap();
        assert!(matches!(
            phi_bounds(&b, &z, 0.5, 2, 1.0, ConsensusMode::Aware),
            Err(Error::UnsupportedMode(_))
        ));
    }
}

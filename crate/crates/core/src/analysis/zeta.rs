use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Smoothness, convexity and step-size constants that feed the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub mu: f64,
    pub l: f64,
    pub eta: f64,
    pub local_iters: usize,
}

impl BoundConstants {
    /// The CNN-scale constants used for the default layout.
    pub const CNN: Self = Self { mu: 0.0016, l: 2.0, eta: 0.03, local_iters: 5 };

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return invalid(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.l >= self.mu && self.l.is_finite()) {
            return invalid(format!("L = {} must be at least mu = {}", self.l, self.mu));
        }
        if !(self.eta > 0.0 && self.eta < 0.5 / self.l) {
            return invalid(format!(
                "eta = {} outside (0, 1/(2L)) = (0, {})",
                self.eta,
                0.5 / self.l
            ));
        }
        if self.local_iters == 0 {
            return invalid("at least one local iteration is required");
        }
        Ok(())
    }
}

/// The seven coefficients of the one-round bound.
///
/// `zeta3` and `zeta5` carry a `1 + 1/τ_ε` factor and are infinite on a
/// perfect network; callers must treat the terms they weight as absent there
/// (those terms measure quantities that vanish identically without losses).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zetas {
    pub zeta1: f64,
    pub zeta2: f64,
    #[serde(serialize_with = "crate::report::ser_f64_or_str")]
    pub zeta3: f64,
    pub zeta4: f64,
    #[serde(serialize_with = "crate::report::ser_f64_or_str")]
    pub zeta5: f64,
    pub zeta6: f64,
    pub zeta7: f64,
    pub tau_eps: f64,
    pub tau_eta: f64,
    pub constants: BoundConstants,
}

impl Zetas {
    /// True when every link is perfect and the `ζ₃`/`ζ₅` terms drop out.
    pub fn lossless(&self) -> bool {
        self.tau_eps == 0.0
    }
}

pub fn compute_zetas(k: &BoundConstants, tau_eps: f64) -> Result<Zetas> {
    k.validate()?;
    if !(tau_eps >= 0.0 && tau_eps.is_finite()) {
        return invalid(format!("average PER must be non-negative, got {tau_eps}"));
    }
    let BoundConstants { mu, l, eta, local_iters } = *k;
    let i = local_iters as i32;
    let q = 1.0 - mu * eta / 2.0;
    let tau_eta = eta * l / mu;
    let smooth = 2.0 * eta * l * l + l + mu;

    let zeta1 = (1.0 + tau_eps) * q.powi(i);
    let zeta2 = smooth
        * (1.0 + eta)
        * (((1.0 + eta).powi(i + 1) - (1.0 + eta).powi(2) * q.powi(i - 1)) / (1.0 + mu / 2.0)
            - (2.0 - 2.0 * q.powi(i - 1)) / mu);
    let zeta3 = (1.0 + 1.0 / tau_eps) * (1.0 + tau_eta) * q.powi(i - 1);
    let zeta4 = smooth * (1.0 + eta).powi(3) * ((1.0 + eta).powi(i - 1) - q.powi(i - 1))
        / (1.0 + mu / 2.0);
    let zeta5 = zeta3 * eta * eta * l * l / tau_eta;
    let zeta6 = (2.0 + ((1.0 + tau_eps) * mu * eta - 2.0) * q.powi(i - 1)) / mu;
    let zeta7 = (1.0 + tau_eps) * q.powi(i - 1) * (2.0 * eta * eta * l * l + (l + mu) * eta);

    Ok(Zetas {
        zeta1,
        zeta2,
        zeta3,
        zeta4,
        zeta5,
        zeta6,
        zeta7,
        tau_eps,
        tau_eta,
        constants: *k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeta1_without_losses() {
        let k = BoundConstants { local_iters: 1, ..BoundConstants::CNN };
        let z = compute_zetas(&k, 0.0).unwrap();
        assert_eq!(z.zeta1, 1.0 - 0.0016 * 0.03 / 2.0);
        assert!(z.zeta3.is_infinite() && z.zeta5.is_infinite());
        assert!(z.lossless());
    }

    #[test]
    fn cnn_coefficient() {
        let z = compute_zetas(&BoundConstants::CNN, 0.05).unwrap();
        assert!((z.zeta3 / z.zeta5 - 37.5 / 0.0036).abs() < 1e-8);
        let coef = z.zeta3 * 0.1 / z.zeta5;
        assert!((coef - 1041.6667).abs() < 1e-3);
    }

    #[test]
    fn step_size_range_enforced() {
        for eta in [0.0, 0.25, 0.3] {
            let k = BoundConstants { eta, ..BoundConstants::CNN };
            assert!(compute_zetas(&k, 0.1).is_err());
        }
        let k = BoundConstants { l: 0.001, ..BoundConstants::CNN };
        assert!(compute_zetas(&k, 0.1).is_err());
    }

    #[test]
    fn zeta6_matches_a_direct_expansion() {
        // I = 1: ζ₆ = (2 + (1+τ)μη − 2)/μ = (1+τ)η.
        let k = BoundConstants { local_iters: 1, ..BoundConstants::CNN };
        let z = compute_zetas(&k, 0.2).unwrap();
        assert!((z.zeta6 - 1.2 * 0.03).abs() < 1e-12);
        // ζ₄ vanishes for I = 1.
        assert_eq!(z.zeta4, 0.0);
    }

    proptest! {
        #[test]
        fn zetas_non_negative(
            mu in 1e-3f64..1.0,
            ratio in 1.0f64..50.0,
            frac in 0.01f64..0.99,
            i in 1usize..20,
            tau in 1e-6f64..1.0,
        ) {
            let l = mu * ratio;
            let k = BoundConstants { mu, l, eta: frac * 0.5 / l, local_iters: i };
            let z = compute_zetas(&k, tau).unwrap();
            for v in [z.zeta1, z.zeta2, z.zeta3, z.zeta4, z.zeta5, z.zeta6, z.zeta7] {
                prop_assert!(v >= -1e-12 * (1.0 + v.abs()), "{v}");
            }
            let ratio = z.zeta3 / z.zeta5;
            let expect = z.tau_eta / (k.eta * k.eta * k.l * k.l);
            prop_assert!((ratio - expect).abs() <= 1e-12 * expect);
        }
    }
}

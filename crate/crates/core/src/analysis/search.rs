//! One-dimensional searches over the number of aggregations.

use log::warn;
use serde::Serialize;

use super::bounds::{psi, to_phi, PhiBounds};
use super::matrices::{MatrixNorms, MatrixSweep};
use super::zeta::Zetas;
use crate::consensus::ConsensusMode;
use crate::error::{invalid, Result};
use crate::linalg::Mat;

/// Upper end of the real-valued search bracket for `J`.
pub const J_BRACKET_MAX: f64 = 1000.0;
pub const J_TOLERANCE: f64 = 1e-6;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of a unimodal `f` over `[lo, hi]`.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !(tol > 0.0) {
        return invalid(format!("bad golden-section bracket [{lo}, {hi}] / tol {tol}"));
    }
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    // The endpoints are not probed by the interior points.
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [lo, hi] {
        let fx = f(x)?;
        if fx < best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}

/// Coarse integer scan followed by golden-section refinement around the best
/// integer, so that shallow multi-modality does not trap the search.
fn minimize_over_j<F: Fn(f64) -> f64>(f: F) -> (f64, f64) {
    let mut best = (1.0, f(1.0));
    let mut j = 2.0;
    while j <= J_BRACKET_MAX {
        let v = f(j);
        if v < best.1 {
            best = (j, v);
        }
        j += 1.0;
    }
    let lo = (best.0 - 1.0).max(1.0);
    let hi = (best.0 + 1.0).min(J_BRACKET_MAX);
    golden_section(|x| Ok(f(x)), lo, hi, J_TOLERANCE)
        .map(|refined| if refined.1 <= best.1 { refined } else { best })
        .unwrap_or(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub j_th: f64,
    /// Minimizer of the upper bound and its (`Φ`-unit) value.
    pub j_upper_min: f64,
    pub phi_upper_min: f64,
    /// False when the lower bound never rises above the upper bound's
    /// minimum inside the bracket; `j_th` is then the bracket end.
    pub crossing: bool,
}

/// Largest real `J` with `Φ_L(J) ≤ min Φ_U`.
pub fn j_threshold(bounds: &PhiBounds) -> Threshold {
    if bounds.n <= 1 {
        return Threshold { j_th: 1.0, j_upper_min: 1.0, phi_upper_min: 0.0, crossing: true };
    }
    let (j_u, min_u) = minimize_over_j(|j| bounds.psi_upper(j));
    let (j_l, _) = minimize_over_j(|j| bounds.psi_lower(j));
    let phi_upper_min = to_phi(min_u, &bounds.zetas);

    let mut prev = j_l;
    if bounds.psi_lower(prev) > min_u {
        warn!("lower bound exceeds the upper bound's minimum at its own minimizer J = {j_l}");
        return Threshold { j_th: j_l, j_upper_min: j_u, phi_upper_min, crossing: false };
    }
    let mut next = prev.floor() + 1.0;
    while next <= J_BRACKET_MAX {
        if bounds.psi_lower(next) > min_u {
            let (mut a, mut b) = (prev, next);
            while b - a > J_TOLERANCE {
                let m = 0.5 * (a + b);
                if bounds.psi_lower(m) > min_u {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Threshold { j_th: a, j_upper_min: j_u, phi_upper_min, crossing: true };
        }
        prev = next;
        next += 1.0;
    }
    warn!("no threshold crossing below J = {J_BRACKET_MAX}; using the bracket end");
    Threshold { j_th: J_BRACKET_MAX, j_upper_min: j_u, phi_upper_min, crossing: false }
}

/// One row of the `Φ(J)` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiRow {
    pub j: usize,
    pub phi: f64,
    /// `ζ₅Φ(J)`; the quantity ranked when `ζ₅` is infinite.
    pub psi: f64,
    pub phi_lower: Option<f64>,
    pub phi_upper: Option<f64>,
    pub norms: MatrixNorms,
}

pub fn phi_sweep(
    c: &Mat,
    t: &Mat,
    zetas: &Zetas,
    p_max: f64,
    mode: ConsensusMode,
    bounds: Option<&PhiBounds>,
    j_max: usize,
) -> Result<Vec<PhiRow>> {
    MatrixSweep::new(c, t, mode)
        .take(j_max)
        .map(|m| {
            let norms = m.norms()?;
            let psi = psi(&norms, zetas, p_max);
            Ok(PhiRow {
                j: m.j,
                phi: to_phi(psi, zetas),
                psi,
                phi_lower: bounds.map(|b| b.phi_lower(m.j as f64)),
                phi_upper: bounds.map(|b| b.phi_upper(m.j as f64)),
                norms,
            })
        })
        .collect()
}

/// Index of the smallest `psi`, ties toward the smaller `J`.
pub fn argmin_j(rows: &[PhiRow]) -> usize {
    rows.iter()
        .fold(None::<&PhiRow>, |best, r| match best {
            Some(b) if b.psi <= r.psi => Some(b),
            _ => Some(r),
        })
        .map_or(1, |r| r.j)
}

#[derive(Debug, Clone)]
pub struct JStar {
    pub j_star: usize,
    pub threshold: Option<Threshold>,
    /// The table actually searched.
    pub table: Vec<PhiRow>,
}

/// Bound-guided choice of `J`. Without compensation the search stops at
/// `⌈J_TH⌉`; with it the objective does not increase and `j_cap` is returned.
pub fn j_star(
    c: &Mat,
    t: &Mat,
    zetas: &Zetas,
    p_max: f64,
    mode: ConsensusMode,
    bounds: Option<&PhiBounds>,
    j_cap: usize,
) -> Result<JStar> {
    if j_cap == 0 {
        return invalid("j_cap must be at least 1");
    }
    match mode {
        ConsensusMode::Aware => {
            let table = phi_sweep(c, t, zetas, p_max, mode, None, j_cap)?;
            Ok(JStar { j_star: j_cap, threshold: None, table })
        }
        ConsensusMode::Unaware => {
            let bounds = match bounds {
                Some(b) => *b,
                None => {
                    let betas = super::bounds::compute_betas(c, t)?;
                    PhiBounds::new(betas, *zetas, p_max, c.nrows(), mode)?
                }
            };
            let th = j_threshold(&bounds);
            let limit = (th.j_th.ceil() as usize).clamp(1, j_cap);
            let table = phi_sweep(c, t, zetas, p_max, mode, Some(&bounds), limit)?;
            Ok(JStar { j_star: argmin_j(&table), threshold: Some(th), table })
        }
    }
}

//! Convergence-bound machinery: coefficient sets, bias/variance matrices,
//! the `Φ(J)` objective with its closed-form sandwich, and the search for the
//! best number of aggregations per round.

mod bounds;
mod matrices;
mod search;
mod zeta;

pub use bounds::{
    compute_betas, geometric_factor, phi, phi_bounds, phi_terms, psi, real_pow, to_phi, Betas,
    PhiBounds, PhiTerms, BETA_TIE,
};
pub use matrices::{
    compute_m1, compute_m2, compute_m2_literal, compute_m3, compute_m4, variance_kernels,
    BoundMatrices, MatrixNorms, MatrixSweep,
};
pub use search::{
    argmin_j, golden_section, j_star, j_threshold, phi_sweep, JStar, PhiRow, Threshold,
    J_BRACKET_MAX, J_TOLERANCE,
};
pub use zeta::{compute_zetas, BoundConstants, Zetas};

use crate::channel::ChannelMatrix;
use crate::consensus::{ConsensusMatrix, ConsensusMode};
use crate::error::Result;

/// Everything computed for one (consensus, channel) pair.
#[derive(Debug, Clone)]
pub struct AnalysisBundle {
    pub mode: ConsensusMode,
    pub zetas: Zetas,
    pub betas: Betas,
    pub p_max: f64,
    pub threshold: Option<Threshold>,
    pub j_star: usize,
    /// `M₁..M₄` at `J*`.
    pub matrices: BoundMatrices,
    /// `Φ` over `J = 1..=j_cap` (bounds filled in without compensation).
    pub sweep: Vec<PhiRow>,
}

pub fn analyze(
    consensus: &ConsensusMatrix,
    channel: &ChannelMatrix,
    constants: &BoundConstants,
    p_max: f64,
    j_cap: usize,
) -> Result<AnalysisBundle> {
    let c = consensus.matrix();
    let t = channel.succ();
    let mode = consensus.mode();
    let zetas = compute_zetas(constants, channel.tau_eps())?;
    let betas = compute_betas(c, t)?;
    let bounds = match mode {
        ConsensusMode::Unaware => Some(PhiBounds::new(betas, zetas, p_max, c.nrows(), mode)?),
        ConsensusMode::Aware => None,
    };
    let js = j_star(c, t, &zetas, p_max, mode, bounds.as_ref(), j_cap)?;
    let sweep = phi_sweep(c, t, &zetas, p_max, mode, bounds.as_ref(), j_cap)?;
    Ok(AnalysisBundle {
        mode,
        zetas,
        betas,
        p_max,
        threshold: js.threshold,
        j_star: js.j_star,
        matrices: BoundMatrices::compute(c, t, js.j_star, mode),
        sweep,
    })
}

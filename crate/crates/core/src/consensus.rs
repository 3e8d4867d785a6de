//! Mixing matrices for gossip aggregation.
//!
//! Both designs share the single-parameter family `I − αL`. The channel-aware
//! variant inflates every edge weight by `1/T[n][m]` so that the *expected*
//! mixing matrix `C∘T` lands back on that family. Diagonal entries may go
//! negative when `α > 1/d_max`; only double stochasticity is required.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::error::{invalid, Error, Result};
use crate::linalg::{hadamard, spectral_norm, symmetric_eigenvalues, uniform_average, Mat};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusMode {
    Unaware,
    Aware,
}

impl ConsensusMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsensusMode::Unaware => "unaware",
            ConsensusMode::Aware => "aware",
        }
    }
}

/// Closed-form step size together with the spectrum it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaInfo {
    pub alpha: f64,
    pub lambda2: f64,
    pub lambda_max: f64,
    /// `‖I − αL − 1ᵀ1/N‖` at the chosen α.
    pub spectral_norm: f64,
}

/// Second-smallest and largest Laplacian eigenvalue.
pub fn laplacian_spectrum(topo: &Topology) -> Result<(f64, f64)> {
    if topo.n_devices() < 2 {
        return Ok((0.0, 0.0));
    }
    let eig = symmetric_eigenvalues(&topo.laplacian())?;
    Ok((eig[1], eig[eig.len() - 1]))
}

/// `α = 2/(λ₂ + λ_max)`, the minimizer of `‖I − αL − 1ᵀ1/N‖`.
pub fn optimal_alpha(topo: &Topology) -> Result<AlphaInfo> {
    if topo.n_devices() == 1 {
        return Ok(AlphaInfo { alpha: 1.0, lambda2: 0.0, lambda_max: 0.0, spectral_norm: 0.0 });
    }
    if !topo.is_connected() {
        return invalid("consensus needs a connected graph");
    }
    let (lambda2, lambda_max) = laplacian_spectrum(topo)?;
    if lambda2 <= 1e-12 * lambda_max {
        return invalid(format!("algebraic connectivity {lambda2:e} is numerically zero"));
    }
    let alpha = 2.0 / (lambda2 + lambda_max);
    let spectral_norm = mixing_gap(topo, alpha)?;
    Ok(AlphaInfo { alpha, lambda2, lambda_max, spectral_norm })
}

/// `‖I − αL − 1ᵀ1/N‖` without any range check on α.
pub fn mixing_gap(topo: &Topology, alpha: f64) -> Result<f64> {
    let n = topo.n_devices();
    let c = Mat::identity(n, n) - topo.laplacian() * alpha;
    spectral_norm(&(c - uniform_average(n)))
}

/// Golden-section minimization of [`mixing_gap`] over `α ∈ (0, 1/d_max]`.
pub fn golden_alpha(topo: &Topology, tol: f64) -> Result<f64> {
    let d_max = topo.max_degree();
    if d_max == 0 {
        return Ok(1.0);
    }
    crate::analysis::golden_section(|a| mixing_gap(topo, a), 0.0, 1.0 / d_max as f64, tol)
        .map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    c: Mat,
    mode: ConsensusMode,
    alpha: f64,
}

impl ConsensusMatrix {
    pub fn build(
        topo: &Topology,
        channel: &ChannelMatrix,
        alpha: f64,
        mode: ConsensusMode,
    ) -> Result<Self> {
        match mode {
            ConsensusMode::Unaware => build_unaware(topo, alpha),
            ConsensusMode::Aware => build_aware(topo, channel, alpha),
        }
    }

    /// Wrap an arbitrary matrix; used by tests and Monte Carlo oracles.
    pub fn from_raw(c: Mat, mode: ConsensusMode, alpha: f64) -> Result<Self> {
        if !c.is_square() {
            return invalid("consensus matrix must be square");
        }
        Ok(Self { c, mode, alpha })
    }

    pub fn matrix(&self) -> &Mat {
        &self.c
    }

    pub fn mode(&self) -> ConsensusMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_devices(&self) -> usize {
        self.c.nrows()
    }

    /// The expected one-step mixing `C∘T`.
    pub fn expected(&self, channel: &ChannelMatrix) -> Mat {
        hadamard(&self.c, channel.succ())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        crate::report::write_matrix_csv(out, &self.c)
    }
}

fn check_alpha(topo: &Topology, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return invalid(format!("alpha must be positive, got {alpha}"));
    }
    if topo.n_devices() > 1 {
        let (_, lambda_max) = laplacian_spectrum(topo)?;
        if alpha * lambda_max >= 2.0 {
            return invalid(format!(
                "alpha {alpha} outside the stable range (0, {})",
                2.0 / lambda_max
            ));
        }
    }
    Ok(())
}

/// `c[n][m] = α` on edges, `1 − d_n α` on the diagonal.
pub fn build_unaware(topo: &Topology, alpha: f64) -> Result<ConsensusMatrix> {
    check_alpha(topo, alpha)?;
    let n = topo.n_devices();
    let c = Mat::identity(n, n) - topo.laplacian() * alpha;
    Ok(ConsensusMatrix { c, mode: ConsensusMode::Unaware, alpha })
}

/// `c[n][m] = α/T[n][m]` on edges, `1 − d_n α` on the diagonal.
pub fn build_aware(topo: &Topology, channel: &ChannelMatrix, alpha: f64) -> Result<ConsensusMatrix> {
    check_alpha(topo, alpha)?;
    let n = topo.n_devices();
    if channel.n_devices() != n {
        return invalid("channel and topology sizes differ");
    }
    let mut c = Mat::zeros(n, n);
    for (a, b) in topo.edges() {
        for (r, s) in [(a, b), (b, a)] {
            let t = channel.get(r, s);
            if t <= 0.0 {
                return Err(Error::DegenerateLink(r + 1, s + 1));
            }
            c[(r, s)] = alpha / t;
        }
    }
    for (i, d) in topo.degrees().into_iter().enumerate() {
        c[(i, i)] = 1.0 - d as f64 * alpha;
    }
    Ok(ConsensusMatrix { c, mode: ConsensusMode::Aware, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{col_sums, matrix_power, row_sums};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn alpha_on_small_graphs() {
        let path = Topology::from_table(2).unwrap().with_edges([(0, 1)]).unwrap();
        let info = optimal_alpha(&path).unwrap();
        assert!(close(info.alpha, 0.5));
        let c = build_unaware(&path, info.alpha).unwrap();
        assert!(c.matrix().iter().all(|&v| close(v, 0.5)));

        let k3 = Topology::from_table(3).unwrap().with_edges([(0, 1), (0, 2), (1, 2)]).unwrap();
        let info = optimal_alpha(&k3).unwrap();
        assert!(close(info.alpha, 1.0 / 3.0));
        let c = build_unaware(&k3, info.alpha).unwrap();
        assert!(c.matrix().iter().all(|&v| close(v, 1.0 / 3.0)));

        let star = Topology::from_table(3).unwrap().with_edges([(0, 1), (0, 2)]).unwrap();
        let info = optimal_alpha(&star).unwrap();
        assert!(close(info.lambda2, 1.0) && close(info.lambda_max, 3.0));
        assert!(close(info.alpha, 0.5));
    }

    #[test]
    fn single_device() {
        let one = Topology::from_table(1).unwrap();
        let info = optimal_alpha(&one).unwrap();
        let c = build_unaware(&one, info.alpha).unwrap();
        assert_eq!(c.matrix(), &Mat::identity(1, 1));
    }

    #[test]
    fn disconnected_and_unstable_rejected() {
        let t = Topology::from_table(3).unwrap().with_edges([(0, 1)]).unwrap();
        assert!(optimal_alpha(&t).is_err());
        let path = Topology::from_table(2).unwrap().with_edges([(0, 1)]).unwrap();
        assert!(build_unaware(&path, 1.5).is_err());
        assert!(build_unaware(&path, 0.0).is_err());
    }

    #[test]
    fn aware_two_node() {
        let topo = Topology::from_table(2).unwrap().with_edges([(0, 1)]).unwrap();
        let mut s = Mat::identity(2, 2);
        s[(0, 1)] = 0.8;
        s[(1, 0)] = 0.8;
        let t = ChannelMatrix::from_matrix(s, &topo).unwrap();
        let c = build_aware(&topo, &t, 0.5).unwrap();
        assert!(close(c.matrix()[(0, 1)], 0.625));
        assert!(close(c.expected(&t)[(0, 1)], 0.5));
        let ct = c.expected(&t);
        for v in row_sums(&ct).into_iter().chain(col_sums(&ct)) {
            assert!(close(v, 1.0));
        }
    }

    #[test]
    fn aware_with_perfect_links_matches_unaware() {
        let topo = Topology::from_table(6)
            .unwrap()
            .build_edges_by_density(0.5, &mut crate::seed::stream(1, &[]))
            .unwrap();
        let a = optimal_alpha(&topo).unwrap().alpha;
        let t = ChannelMatrix::perfect(&topo);
        assert_eq!(
            build_aware(&topo, &t, a).unwrap().matrix(),
            build_unaware(&topo, a).unwrap().matrix()
        );
    }

    #[test]
    fn dead_edge_is_degenerate() {
        let topo = Topology::from_table(2).unwrap().with_edges([(0, 1)]).unwrap();
        let t = ChannelMatrix::from_matrix(Mat::identity(2, 2), &topo).unwrap();
        assert!(matches!(build_aware(&topo, &t, 0.5), Err(Error::DegenerateLink(..))));
    }

    #[test]
    fn powers_reach_uniform_average() {
        let topo = Topology::from_table(10)
            .unwrap()
            .build_edges_by_density(0.5, &mut crate::seed::stream(0, &[]))
            .unwrap();
        let c = build_unaware(&topo, optimal_alpha(&topo).unwrap().alpha).unwrap();
        let avg = uniform_average(10);
        let mut prev = f64::INFINITY;
        for j in [1, 2, 4, 8, 16, 32, 64] {
            let gap = spectral_norm(&(matrix_power(c.matrix(), j) - &avg)).unwrap();
            assert!(gap <= prev + 1e-15);
            prev = gap;
        }
        assert!((matrix_power(c.matrix(), 200) - avg).amax() < 1e-8);
    }

    #[test]
    fn golden_section_agrees_when_optimum_is_inside() {
        let k3 = Topology::from_table(3).unwrap().with_edges([(0, 1), (0, 2), (1, 2)]).unwrap();
        // 1/d_max = 0.5 brackets α* = 1/3.
        let a = golden_alpha(&k3, 1e-10).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-6);
    }
}

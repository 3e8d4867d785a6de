//! Monte Carlo oracles for the closed-form bias and variance, and the
//! one-round bound measured against the simulated protocol.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{compute_m1, compute_m2, compute_m2_literal, compute_zetas, psi, variance_kernels, BoundConstants, BoundMatrices};
use crate::channel::{ChannelMatrix, PacketPlan};
use crate::consensus::{optimal_alpha, ConsensusMatrix, ConsensusMode};
use crate::error::{invalid, Error, Result};
use crate::flcore::{lossy_receive, FleetState, LossPolicy, SmoothnessEstimate, Simulation};
use crate::linalg::{hadamard, spectral_norm, uniform_average, Mat};
use crate::seed::{derive_seed, purpose, stream, SimRng};
use crate::topology::{edge_target, Topology};

/// Per-entry `|z|` gate for the bias check.
pub const Z_GATE: f64 = 4.0;
/// Gate on the largest standardized error of the exact second-moment check,
/// taken over every entry at once.
pub const EXACT_Z_GATE: f64 = 5.0;
/// Relative tolerance for the variance check.
pub const VARIANCE_REL_TOL: f64 = 0.05;
/// Entries whose predicted variance is below this fraction of the largest
/// one are not compared.
pub const RESOLVED_FRACTION: f64 = 1e-8;
const CHUNK: usize = 250;

/// Running mean and centered second moment (Welford), mergeable.
#[derive(Debug, Clone)]
pub struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self { n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn merge(mut self, other: &Moments) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
        self
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance per entry.
    pub fn variance(&self) -> Vec<f64> {
        let d = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }
}

/// A consensus/channel pair with a starting matrix `W₀` for the oracles.
#[derive(Debug, Clone)]
pub struct McInstance {
    pub c: Mat,
    pub t: Mat,
    pub w0: Mat,
    pub plan: PacketPlan,
    pub mode: ConsensusMode,
}

impl McInstance {
    pub fn n_devices(&self) -> usize {
        self.c.nrows()
    }
}

/// Random connected graph on 3..=8 devices with edge success probabilities
/// drawn from `[0.3, 0.7]`; odd indices use the channel-aware design.
pub fn random_mc_instance(seed: u64, index: u64, plan: PacketPlan) -> Result<McInstance> {
    let mut rng = stream(seed, &[purpose::VERIFY, 0, index]);
    let n = rng.random_range(3..=8usize);
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..5000.0), rng.random_range(0.0..5000.0)))
        .collect();
    let base = Topology::from_coords(coords)?;
    let rho = loop {
        let rho = rng.random_range(0.3..=1.0);
        if edge_target(rho, n) >= n - 1 {
            break rho;
        }
    };
    let topo = base.build_edges_by_density(rho, &mut rng)?;
    let mut t = Mat::identity(n, n);
    for (a, b) in topo.edges() {
        let s = rng.random_range(0.3..=0.7);
        t[(a, b)] = s;
        t[(b, a)] = s;
    }
    let channel = ChannelMatrix::from_matrix(t.clone(), &topo)?;
    let mode = if index % 2 == 1 { ConsensusMode::Aware } else { ConsensusMode::Unaware };
    let alpha = optimal_alpha(&topo)?.alpha;
    let c = ConsensusMatrix::build(&topo, &channel, alpha, mode)?.matrix().clone();
    let w0 = Mat::from_fn(n, plan.model_dim, |_, _| rng.sample(StandardNormal));
    Ok(McInstance { c, t, w0, plan, mode })
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `J` zero-filled lossy exchanges starting from `w`.
fn simulate<R: Rng + ?Sized>(inst: &McInstance, w0: &[Vec<f64>], j: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut w = w0.to_vec();
    for _ in 0..j {
        w = (0..inst.n_devices())
            .map(|r| lossy_receive(&w, r, &inst.c, &inst.t, &inst.plan, LossPolicy::ZeroFill, rng))
            .collect();
    }
    w
}

/// Moments of the flattened `W_J` over `replications` runs, in fixed-size
/// chunks with their own derived streams so the result does not depend on
/// thread scheduling. Returns the per-chunk moments as well as their merge.
fn replicate(inst: &McInstance, j: usize, replications: usize, seed: u64) -> (Moments, Vec<Moments>) {
    let w0 = rows(&inst.w0);
    let len = inst.n_devices() * inst.plan.model_dim;
    let n_chunks = replications.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng: SimRng = stream(seed, &[purpose::VERIFY, 1, j as u64, k as u64]);
            let mut acc = Moments::new(len);
            let count = CHUNK.min(replications - k * CHUNK);
            let mut flat = Vec::with_capacity(len);
            for _ in 0..count {
                let w = simulate(inst, &w0, j, &mut rng);
                flat.clear();
                for row in &w {
                    flat.extend_from_slice(row);
                }
                acc.push(&flat);
            }
            acc
        })
        .collect();
    let total = parts.iter().fold(Moments::new(len), |a, b| a.merge(b));
    (total, parts)
}

/// Batch-means standard error of the pooled variance estimate, per entry.
fn variance_standard_error(parts: &[Moments]) -> Vec<f64> {
    let full: Vec<&Moments> = parts.iter().filter(|p| p.count() == CHUNK).collect();
    let k = full.len();
    if k < 2 {
        return vec![f64::INFINITY; parts.first().map_or(0, |p| p.mean.len())];
    }
    let vars: Vec<Vec<f64>> = full.iter().map(|p| p.variance()).collect();
    (0..vars[0].len())
        .map(|i| {
            let m = vars.iter().map(|v| v[i]).sum::<f64>() / k as f64;
            let s2 = vars.iter().map(|v| (v[i] - m) * (v[i] - m)).sum::<f64>() / (k - 1) as f64;
            (s2 / k as f64).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectationReport {
    pub j: usize,
    pub replications: usize,
    pub seed: u64,
    pub max_abs_z: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// Empirical mean bias `[ω̄ …] − W_J` against `M₁W₀`.
pub fn mc_expectation_bias(inst: &McInstance, j: usize, replications: usize, seed: u64) -> Result<ExpectationReport> {
    if replications < crate::config::MIN_EXPECTATION_REPLICATIONS {
        return invalid(format!(
            "expectation check needs at least {} replications, got {replications}",
            crate::config::MIN_EXPECTATION_REPLICATIONS
        ));
    }
    if j == 0 {
        return invalid("J must be at least 1");
    }
    let (moments, _) = replicate(inst, j, replications, seed);
    let m = inst.plan.model_dim;
    let target = uniform_average(inst.n_devices()) * &inst.w0;
    let predicted = compute_m1(&inst.c, &inst.t, j) * &inst.w0;
    let var = moments.variance();
    let r = replications as f64;
    let (mut max_z, mut max_err) = (0.0f64, 0.0f64);
    for (idx, (&mean_w, &v)) in moments.mean().iter().zip(&var).enumerate() {
        let (row, col) = (idx / m, idx % m);
        let emp = target[(row, col)] - mean_w;
        let err = (emp - predicted[(row, col)]).abs();
        max_err = max_err.max(err);
        let se = (v / r).sqrt();
        let z = if se > 0.0 {
            err / se
        } else if err <= 1e-9 * (1.0 + predicted[(row, col)].abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    Ok(ExpectationReport { j, replications, seed, max_abs_z: max_z, max_abs_error: max_err, passed: max_z < Z_GATE })
}

/// Per-entry variance of `W_J` from the full second-moment recursion
/// `S_j = (C∘T)S(C∘T)ᵀ + diag(A₂·diag S)`, which keeps the cross terms the
/// closed form drops.
pub fn exact_variance(c: &Mat, t: &Mat, w0: &Mat, j: usize) -> Mat {
    let ct = hadamard(c, t);
    let (_, a2) = variance_kernels(c, t);
    let n = c.nrows();
    let mut out = Mat::zeros(n, w0.ncols());
    for k in 0..w0.ncols() {
        let mut mean = w0.column(k).into_owned();
        let mut s = &mean * mean.transpose();
        for _ in 0..j {
            let extra = &a2 * s.diagonal();
            s = &ct * s * ct.transpose();
            for i in 0..n {
                s[(i, i)] += extra[i];
            }
            mean = &ct * mean;
        }
        for i in 0..n {
            out[(i, k)] = (s[(i, i)] - mean[i] * mean[i]).max(0.0);
        }
    }
    out
}

fn max_rel_error(emp: &[f64], predicted: &Mat) -> (f64, usize) {
    let m = predicted.ncols();
    let top = predicted.max();
    if top <= 0.0 {
        let worst = emp.iter().copied().fold(0.0, f64::max);
        return (if worst <= 1e-20 { 0.0 } else { f64::INFINITY }, 0);
    }
    let floor = RESOLVED_FRACTION * top;
    let mut worst = 0.0f64;
    let mut resolved = 0;
    for (idx, &e) in emp.iter().enumerate() {
        let p = predicted[(idx / m, idx % m)];
        if p > floor {
            resolved += 1;
            worst = worst.max((e - p).abs() / p);
        }
    }
    (worst, resolved)
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub j: usize,
    pub replications: usize,
    pub seed: u64,
    pub resolved: usize,
    /// Against `M₂(W₀∘W₀)` from the unrolled recursion.
    pub max_rel_error: f64,
    /// Against the closed form with the printed index placement; `None`
    /// when that form cannot be evaluated.
    pub max_rel_error_literal: Option<f64>,
    /// Against [`exact_variance`].
    pub max_rel_error_exact: f64,
    /// Largest `|empirical − exact|` over its batch-means standard error.
    pub max_z_exact: f64,
    pub passed: bool,
    pub literal_passed: bool,
    pub exact_passed: bool,
}

pub fn mc_variance(inst: &McInstance, j: usize, replications: usize, seed: u64) -> Result<VarianceReport> {
    if replications < crate::config::MIN_VARIANCE_REPLICATIONS {
        return invalid(format!(
            "variance check needs at least {} replications, got {replications}",
            crate::config::MIN_VARIANCE_REPLICATIONS
        ));
    }
    if j == 0 {
        return invalid("J must be at least 1");
    }
    let (moments, parts) = replicate(inst, j, replications, seed);
    let emp = moments.variance();
    let sq = hadamard(&inst.w0, &inst.w0);
    let (rec, resolved) = max_rel_error(&emp, &(compute_m2(&inst.c, &inst.t, j) * &sq));
    let literal = compute_m2_literal(&inst.c, &inst.t, j)
        .ok()
        .map(|m2| max_rel_error(&emp, &(m2 * &sq)).0);
    let exact_var = exact_variance(&inst.c, &inst.t, &inst.w0, j);
    let (exact, _) = max_rel_error(&emp, &exact_var);
    let se = variance_standard_error(&parts);
    let m = inst.plan.model_dim;
    let floor = RESOLVED_FRACTION * exact_var.max();
    let exact_z = emp
        .iter()
        .zip(&se)
        .enumerate()
        .filter(|(idx, _)| exact_var[(idx / m, idx % m)] > floor)
        .map(|(idx, (e, s))| {
            let d = (e - exact_var[(idx / m, idx % m)]).abs();
            if *s > 0.0 { d / s } else if d == 0.0 { 0.0 } else { f64::INFINITY }
        })
        .fold(0.0, f64::max);
    Ok(VarianceReport {
        j,
        replications,
        seed,
        resolved,
        max_rel_error: rec,
        max_rel_error_literal: literal,
        max_rel_error_exact: exact,
        max_z_exact: exact_z,
        passed: rec <= VARIANCE_REL_TOL,
        literal_passed: literal.is_some_and(|e| e <= VARIANCE_REL_TOL),
        exact_passed: exact_z < EXACT_Z_GATE,
    })
}

/// One-round bound evaluated at a simulated state.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub round: usize,
    pub j: usize,
    pub eta: f64,
    pub local_iters: usize,
    pub replications: usize,
    pub seed: u64,
    pub zeta1: f64,
    pub delta_prev: f64,
    /// `ζ₁Δω^{t−1}`, `ζ₂G²`, `ζ₆Σηp²σ²` and `ζ₅Φ·p_max‖W₀‖²`.
    pub terms: [f64; 4],
    pub rhs: f64,
    pub empirical: f64,
    pub empirical_se: f64,
    pub slack_ratio: f64,
    pub divergence_warning: bool,
}

/// Runs `round − 1` full rounds plus the training of round `round`, then
/// replicates the lossy aggregation of that round and the training of the
/// next one to estimate `E[Δω_I]`, and compares it with the one-round bound
/// built from `est`.
pub fn mc_one_round_bound(
    sim: &Simulation<'_>,
    channel_tau_eps: f64,
    mode: ConsensusMode,
    est: &SmoothnessEstimate,
    round: usize,
    replications: usize,
    seed: u64,
) -> Result<BoundReport> {
    if round == 0 || replications < 2 {
        return invalid("need round >= 1 and at least 2 replications");
    }
    if !matches!(sim.algorithm, crate::flcore::Algorithm::DflUnaware | crate::flcore::Algorithm::DflAware) {
        return Err(Error::UnsupportedMode("the one-round bound covers D-FL only".into()));
    }
    let constants = BoundConstants { mu: est.mu_hat, l: est.l_hat, eta: sim.eta, local_iters: sim.local_iters };
    let z = compute_zetas(&constants, channel_tau_eps)?;

    let mut fleet: FleetState = sim.initial_state()?;
    for _ in 1..round {
        sim.run_round(&mut fleet)?;
    }
    fleet.t += 1;
    sim.train_all(&mut fleet)?;
    let omega_star = sim.omega_star;
    let mean = fleet.weighted_mean();
    let delta_prev: f64 = mean.iter().zip(omega_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = fleet.n_devices();
    let w0 = Mat::from_fn(n, omega_star.len(), |r, k| n as f64 * fleet.p[r] * fleet.omega[r][k]);

    let samples: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut s = sim.clone();
            s.seed = derive_seed(seed, &[purpose::VERIFY, 2, r as u64]);
            let mut f = fleet.clone();
            s.aggregate(&mut f)?;
            f.t += 1;
            s.train_all(&mut f)?;
            let m = f.weighted_mean();
            Ok(m.iter().zip(omega_star).map(|(a, b)| (a - b) * (a - b)).sum())
        })
        .collect::<Result<_>>()?;
    let mut acc = Moments::new(1);
    for v in &samples {
        acc.push(&[*v]);
    }
    let empirical = acc.mean()[0];
    let empirical_se = (acc.variance()[0] / replications as f64).sqrt();

    let p_max = fleet.p.iter().copied().fold(0.0, f64::max);
    let norms = BoundMatrices::compute(&sim.consensus, &sim.succ, sim.local_aggs, mode).norms()?;
    let w0_norm = spectral_norm(&w0)?;
    let noise: f64 = fleet
        .p
        .iter()
        .zip(&est.sigma_per_device)
        .map(|(p, s)| sim.eta * p * p * s * s)
        .sum();
    let terms = [
        z.zeta1 * delta_prev,
        z.zeta2 * est.g_hat * est.g_hat,
        z.zeta6 * noise,
        psi(&norms, &z, p_max) * p_max * w0_norm * w0_norm,
    ];
    let rhs: f64 = terms.iter().sum();
    Ok(BoundReport {
        round,
        j: sim.local_aggs,
        eta: sim.eta,
        local_iters: sim.local_iters,
        replications,
        seed,
        zeta1: z.zeta1,
        delta_prev,
        terms,
        rhs,
        empirical,
        empirical_se,
        slack_ratio: if empirical > 0.0 { rhs / empirical } else { f64::INFINITY },
        divergence_warning: z.zeta1 >= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node(eps: f64, m: usize) -> McInstance {
        let c = Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let t = Mat::from_row_slice(2, 2, &[1.0, 1.0 - eps, 1.0 - eps, 1.0]);
        McInstance {
            c,
            t,
            w0: Mat::from_element(2, m, 1.0),
            plan: PacketPlan::by_packet_len(m, 2).unwrap(),
            mode: ConsensusMode::Unaware,
        }
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let data: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let mut all = Moments::new(1);
        let mut a = Moments::new(1);
        let mut b = Moments::new(1);
        for (i, v) in data.iter().enumerate() {
            all.push(&[*v]);
            if i < 17 { a.push(&[*v]) } else { b.push(&[*v]) }
        }
        let merged = a.merge(&b);
        assert!((merged.mean()[0] - all.mean()[0]).abs() < 1e-12);
        assert!((merged.variance()[0] - all.variance()[0]).abs() < 1e-12);
        let mean = data.iter().sum::<f64>() / 50.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0;
        assert!((all.variance()[0] - var).abs() < 1e-12);
    }

    #[test]
    fn perfect_channel_has_no_spread() {
        let inst = two_node(0.0, 4);
        let e = mc_expectation_bias(&inst, 2, 1000, 1).unwrap();
        assert_eq!(e.max_abs_z, 0.0);
        assert!(e.max_abs_error < 1e-12);
        let v = mc_variance(&inst, 1, 10_000, 1).unwrap();
        assert_eq!(v.max_rel_error, 0.0);
    }

    #[test]
    fn one_step_bernoulli_variance() {
        // c²(1−ε)ε = 0.25·0.5·0.5 per receiver.
        let inst = two_node(0.5, 4);
        let v = exact_variance(&inst.c, &inst.t, &inst.w0, 1);
        assert!(v.iter().all(|&x| (x - 0.0625).abs() < 1e-15));
        let r = mc_variance(&inst, 1, 10_000, 3).unwrap();
        assert!(r.passed && r.exact_passed, "{r:?}");
        assert_eq!(r.resolved, 8);
    }

    #[test]
    fn zero_start_has_zero_bias() {
        let mut inst = two_node(0.5, 4);
        inst.w0 = Mat::zeros(2, 4);
        let e = mc_expectation_bias(&inst, 3, 1000, 1).unwrap();
        assert_eq!(e.max_abs_error, 0.0);
    }

    #[test]
    fn exact_variance_matches_closed_form_at_one_step() {
        let plan = PacketPlan::by_packet_len(6, 2).unwrap();
        for i in 0..4 {
            let inst = random_mc_instance(5, i, plan).unwrap();
            let a = exact_variance(&inst.c, &inst.t, &inst.w0, 1);
            let b = compute_m2(&inst.c, &inst.t, 1) * hadamard(&inst.w0, &inst.w0);
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn too_few_replications_rejected() {
        let inst = two_node(0.5, 4);
        assert!(mc_expectation_bias(&inst, 1, 999, 1).is_err());
        assert!(mc_variance(&inst, 1, 9_999, 1).is_err());
    }

    #[test]
    fn replication_is_deterministic() {
        let inst = two_node(0.3, 4);
        let (a, _) = replicate(&inst, 2, 600, 9);
        let (b, _) = replicate(&inst, 2, 600, 9);
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.variance(), b.variance());
    }
}

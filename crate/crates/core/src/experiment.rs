//! End-to-end pipelines behind the command-line tool and their exporters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use serde::Serialize;

use crate::analysis::{analyze, AnalysisBundle, Betas, PhiRow, Threshold, Zetas};
use crate::channel::{build_channel_matrix, build_channel_matrix_bits, ChannelMatrix, PacketPlan, BITS_PER_ELEMENT};
use crate::config::{Config, LocalAggs, MIN_EXPECTATION_REPLICATIONS, MIN_VARIANCE_REPLICATIONS};
use crate::consensus::{build_unaware, optimal_alpha, AlphaInfo, ConsensusMatrix, ConsensusMode};
use crate::error::{Error, Result};
use crate::flcore::{
    estimate_smoothness, final_accuracy, solve_optimum, Algorithm, FederatedData, LogisticModel, RoundMetrics,
    Simulation, SmoothnessEstimate,
};
use crate::report::write_comment_header;
use crate::seed::{derive_seed, purpose, stream};
use crate::topology::Topology;
use crate::verify::{
    mc_expectation_bias, mc_one_round_bound, mc_variance, random_mc_instance, BoundReport, ExpectationReport,
    VarianceReport,
};

/// Aggregation counts exercised by the Monte Carlo checks.
pub const MC_J_VALUES: [usize; 3] = [1, 2, 5];
/// Smoothness sample pairs used for the bound sweep.
pub const SMOOTHNESS_PAIRS: usize = 200;

/// Graph, nominal channel and the optimized mixing step.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub channel: ChannelMatrix,
    pub plan: PacketPlan,
    pub alpha: AlphaInfo,
}

pub fn build_topology(cfg: &Config) -> Result<Topology> {
    build_topology_seeded(cfg, cfg.topology.topology_seed)
}

/// [`build_topology`] with the edge-selection seed replaced.
pub fn build_topology_seeded(cfg: &Config, topology_seed: u64) -> Result<Topology> {
    let t = &cfg.topology;
    let base = match &t.coords {
        Some(coords) => Topology::from_coords(coords.iter().map(|c| (c[0], c[1])).collect())?,
        None => Topology::from_table(t.n_devices)?,
    };
    let mut rng = stream(topology_seed, &[purpose::TOPOLOGY]);
    let graph = if t.n_devices == 1 { base } else { base.build_edges_by_density(t.rho, &mut rng)? };
    graph.scale(t.kappa)
}

pub fn build_network(cfg: &Config) -> Result<Network> {
    build_network_seeded(cfg, cfg.topology.topology_seed)
}

pub fn build_network_seeded(cfg: &Config, topology_seed: u64) -> Result<Network> {
    let topology = build_topology_seeded(cfg, topology_seed)?;
    let plan = cfg.channel.plan()?;
    let channel = build_channel_matrix(&topology, &cfg.channel.budget(), &plan)?;
    let alpha = optimal_alpha(&topology)?;
    Ok(Network { topology, channel, plan, alpha })
}

impl Network {
    pub fn consensus(&self, mode: ConsensusMode) -> Result<ConsensusMatrix> {
        ConsensusMatrix::build(&self.topology, &self.channel, self.alpha.alpha, mode)
    }

    /// Channel for whole-model packets of the nominal model.
    pub fn unsegmented_channel(&self, cfg: &Config) -> Result<ChannelMatrix> {
        let bits = (BITS_PER_ELEMENT * self.plan.model_dim) as f64;
        build_channel_matrix_bits(&self.topology, &cfg.channel.budget(), bits)
    }
}

/// Data, model and the pooled optimum.
#[derive(Debug, Clone)]
pub struct Workload {
    pub data: FederatedData,
    pub model: LogisticModel,
    pub omega_star: Vec<f64>,
}

pub fn build_data(cfg: &Config, seed: u64) -> FederatedData {
    cfg.data.task().federated(cfg.topology.n_devices, seed)
}

pub fn build_workload(cfg: &Config, seed: u64) -> Result<Workload> {
    let data = build_data(cfg, seed);
    let model = cfg.model();
    let omega_star = solve_optimum(&model, &data.pooled)?;
    Ok(Workload { data, model, omega_star })
}

/// `p_max` from the config, else from the data partition.
pub fn resolve_p_max(cfg: &Config) -> f64 {
    cfg.analysis.p_max.unwrap_or_else(|| build_data(cfg, cfg.training.master_seed).p_max())
}

/// Packets for the desk model: at most the nominal count, one element each
/// at the extreme, with losses drawn at the nominal per-packet rate.
pub fn desk_plan(model_dim: usize, nominal: &PacketPlan) -> Result<PacketPlan> {
    PacketPlan::by_packet_count(model_dim, nominal.n_packets.min(model_dim))
}

pub fn analyze_mode(cfg: &Config, net: &Network, mode: ConsensusMode, p_max: f64) -> Result<AnalysisBundle> {
    analyze(&net.consensus(mode)?, &net.channel, &cfg.analysis.constants(), p_max, cfg.analysis.j_cap)
}

fn algorithm_mode(algorithm: Algorithm) -> ConsensusMode {
    match algorithm {
        Algorithm::DflAware => ConsensusMode::Aware,
        _ => ConsensusMode::Unaware,
    }
}

/// Aggregations per round for `algorithm`; `auto` runs the bound-guided search.
pub fn resolve_local_aggs(cfg: &Config, net: &Network, algorithm: Algorithm) -> Result<usize> {
    match (algorithm, cfg.training.local_aggs) {
        (Algorithm::Udfl | Algorithm::Cfl, _) => Ok(1),
        (_, LocalAggs::Fixed(j)) => Ok(j),
        (_, LocalAggs::Auto) => {
            let p_max = resolve_p_max(cfg);
            Ok(analyze_mode(cfg, net, algorithm_mode(algorithm), p_max)?.j_star)
        }
    }
}

/// Simulation of `algorithm` with `j` aggregations per round.
pub fn simulation<'a>(
    cfg: &Config,
    net: &Network,
    work: &'a Workload,
    algorithm: Algorithm,
    j: usize,
    seed: u64,
) -> Result<Simulation<'a>> {
    let dim = work.model.n_params();
    let desk = desk_plan(dim, &net.plan)?;
    let unaware = || build_unaware(&net.topology, net.alpha.alpha).map(|c| c.matrix().clone());
    let (consensus, succ, plan, local_aggs) = match algorithm {
        Algorithm::DflUnaware | Algorithm::DflAware => (
            net.consensus(algorithm_mode(algorithm))?.matrix().clone(),
            net.channel.succ().clone(),
            desk,
            j,
        ),
        Algorithm::Udfl => (
            unaware()?,
            net.unsegmented_channel(cfg)?.succ().clone(),
            PacketPlan::by_packet_count(dim, 1)?,
            1,
        ),
        Algorithm::Cfl => (unaware()?, net.channel.succ().clone(), desk, 1),
    };
    let paths = if algorithm == Algorithm::Cfl {
        let center = cfg.training.center_device - 1;
        net.topology
            .shortest_paths_to(center)
            .into_iter()
            .map(|p| p.ok_or_else(|| Error::InvalidState("graph is disconnected".into())))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(Simulation {
        model: work.model,
        data: &work.data,
        omega_star: &work.omega_star,
        algorithm,
        consensus,
        succ,
        plan,
        paths,
        eta: cfg.training.eta,
        local_iters: cfg.training.local_iters,
        local_aggs,
        batch_size: cfg.training.batch_size,
        cfl_lossless_downlink: cfg.training.cfl_lossless_downlink,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub algorithm: Algorithm,
    pub local_aggs: usize,
    pub history: Vec<RoundMetrics>,
    pub final_accuracy: f64,
    pub optimum_accuracy: f64,
}

/// Full training run of the configured algorithm.
pub fn train(cfg: &Config) -> Result<TrainOutcome> {
    let net = build_network(cfg)?;
    let seed = cfg.training.master_seed;
    let work = build_workload(cfg, seed)?;
    let algorithm = cfg.training.algorithm;
    let j = resolve_local_aggs(cfg, &net, algorithm)?;
    info!("training {} with J = {j} for {} rounds", algorithm.as_str(), cfg.training.rounds);
    let sim = simulation(cfg, &net, &work, algorithm, j, seed)?;
    let every = cfg.topology.reseed_every;
    let history = if every == 0 {
        sim.run(cfg.training.rounds)?
    } else {
        sim.run_with(cfg.training.rounds, |t, s| {
            if t > 1 && (t - 1) % every == 0 {
                let epoch = ((t - 1) / every) as u64;
                let topo_seed = derive_seed(cfg.topology.topology_seed, &[purpose::TOPOLOGY, epoch]);
                *s = simulation(cfg, &build_network_seeded(cfg, topo_seed)?, &work, algorithm, j, seed)?;
            }
            Ok(())
        })?
    };
    Ok(TrainOutcome {
        algorithm,
        local_aggs: j,
        final_accuracy: final_accuracy(&history),
        optimum_accuracy: work.model.accuracy(&work.omega_star, &work.data.test),
        history,
    })
}

// ---------------------------------------------------------------- exporters

/// Comment block naming the command and the full resolved configuration.
pub fn header_text(cfg: &Config, command: &str) -> String {
    format!(
        "dfl {command}\nmaster_seed = {}\n{}",
        cfg.training.master_seed,
        cfg.to_toml()
    )
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_phi_sweep_csv<W: Write>(mut out: W, header: &str, rows: &[PhiRow]) -> Result<()> {
    write_comment_header(&mut out, header)?;
    writeln!(out, "J,phi,phi_lower,phi_upper,norm_M1,norm_M2,norm_M3,norm_M4,norm_1NM1,psi")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.j,
            r.phi,
            opt(r.phi_lower),
            opt(r.phi_upper),
            r.norms.m1,
            r.norms.m2,
            r.norms.m3,
            r.norms.m4,
            r.norms.ones_m1,
            r.psi
        )?;
    }
    Ok(())
}

pub fn write_metrics_csv<W: Write>(mut out: W, header: &str, history: &[RoundMetrics]) -> Result<()> {
    write_comment_header(&mut out, header)?;
    writeln!(out, "t,device,accuracy,delta_omega,bias_norm,mean_accuracy")?;
    for m in history {
        for (n, (acc, bias)) in m.accuracy.iter().zip(&m.bias_norm).enumerate() {
            writeln!(out, "{},{},{},{},{},{}", m.t, n + 1, acc, m.delta_omega, bias, m.mean_accuracy)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

fn write_csv_with<F>(dir: &Path, name: &str, header: &str, body: F) -> Result<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let (path, mut w) = create(dir, name)?;
    write_comment_header(&mut w, header)?;
    body(&mut w)?;
    w.flush()?;
    Ok(path)
}

#[derive(Serialize)]
struct AlphaFile<'a> {
    config: &'a Config,
    alpha: AlphaInfo,
    n_devices: usize,
    n_edges: usize,
    density: f64,
    tau_eps: f64,
    packets: PacketPlan,
}

/// `adjacency.csv`, `T.csv`, `C.csv`, `C_aware.csv` and `alpha.json`.
pub fn cmd_topology(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let net = build_network(cfg)?;
    let header = header_text(cfg, "topology");
    let mut paths = vec![write_csv_with(out, "adjacency.csv", &header, |w| {
        net.topology.write_adjacency_csv(w)
    })?];
    paths.push(write_csv_with(out, "T.csv", &header, |w| net.channel.write_csv(w))?);
    paths.push(write_csv_with(out, "C.csv", &header, |w| {
        net.consensus(ConsensusMode::Unaware)?.write_csv(w)
    })?);
    paths.push(write_csv_with(out, "C_aware.csv", &header, |w| {
        net.consensus(ConsensusMode::Aware)?.write_csv(w)
    })?);
    paths.push(write_json(
        out,
        "alpha.json",
        &AlphaFile {
            config: cfg,
            alpha: net.alpha,
            n_devices: net.topology.n_devices(),
            n_edges: net.topology.n_edges(),
            density: net.topology.density(),
            tau_eps: net.channel.tau_eps(),
            packets: net.plan,
        },
    )?);
    Ok(paths)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: ConsensusMode,
    pub j_star: usize,
    pub threshold: Option<Threshold>,
    pub betas: Betas,
    pub phi_at_j_star: f64,
}

impl ModeSummary {
    fn new(b: &AnalysisBundle) -> Self {
        let phi_at_j_star = b.sweep.iter().find(|r| r.j == b.j_star).map_or(f64::NAN, |r| r.phi);
        Self { mode: b.mode, j_star: b.j_star, threshold: b.threshold, betas: b.betas, phi_at_j_star }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeSummary {
    pub config: Config,
    pub tau_eps: f64,
    pub p_max: f64,
    pub alpha: AlphaInfo,
    pub zetas: Zetas,
    /// `ζ₃p_max/ζ₅`, the weight of the consensus-bias term.
    pub consensus_bias_weight: f64,
    pub unaware: ModeSummary,
    pub aware: ModeSummary,
    #[serde(skip)]
    pub sweeps: [Vec<PhiRow>; 2],
}

/// Both designs are analyzed; `phi_sweep.csv` holds the selected one and
/// `phi_sweep_<other>.csv` the other.
pub fn cmd_analyze(cfg: &Config, mode: ConsensusMode, out: &Path) -> Result<AnalyzeSummary> {
    let net = build_network(cfg)?;
    let p_max = resolve_p_max(cfg);
    let un = analyze_mode(cfg, &net, ConsensusMode::Unaware, p_max)?;
    let aw = analyze_mode(cfg, &net, ConsensusMode::Aware, p_max)?;
    let z = un.zetas;
    let summary = AnalyzeSummary {
        config: cfg.clone(),
        tau_eps: net.channel.tau_eps(),
        p_max,
        alpha: net.alpha,
        zetas: z,
        consensus_bias_weight: if z.lossless() { 0.0 } else { z.zeta3 * p_max / z.zeta5 },
        unaware: ModeSummary::new(&un),
        aware: ModeSummary::new(&aw),
        sweeps: [un.sweep.clone(), aw.sweep.clone()],
    };
    let header = header_text(cfg, &format!("analyze --mode {}", mode.as_str()));
    let (primary, other, other_name) = match mode {
        ConsensusMode::Unaware => (&un, &aw, "phi_sweep_aware.csv"),
        ConsensusMode::Aware => (&aw, &un, "phi_sweep_unaware.csv"),
    };
    for (bundle, name) in [(primary, "phi_sweep.csv"), (other, other_name)] {
        let (_, mut w) = create(out, name)?;
        let text = format!("{header}\nmode = {}", bundle.mode.as_str());
        write_phi_sweep_csv(&mut w, &text, &bundle.sweep)?;
        w.flush()?;
    }
    write_json(out, "analysis.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct TrainFile<'a> {
    config: &'a Config,
    algorithm: Algorithm,
    local_aggs: usize,
    rounds: usize,
    final_accuracy: f64,
    optimum_accuracy: f64,
    final_delta_omega: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    assumption: Option<&'static str>,
}

const CFL_ASSUMPTION: &str =
    "C-FL: independent per-hop masks; erased blocks count as zeros at the center; \
     blocks lost on the way back keep the device's own values";

/// `metrics.csv` and `train.json`.
pub fn cmd_train(cfg: &Config, out: &Path) -> Result<TrainOutcome> {
    let outcome = train(cfg)?;
    let mut header = header_text(cfg, "train");
    header.push_str(&format!("\nresolved_local_aggs = {}", outcome.local_aggs));
    if outcome.algorithm == Algorithm::Cfl {
        header.push_str(&format!("\nassumption = {CFL_ASSUMPTION:?}"));
    }
    let (_, mut w) = create(out, "metrics.csv")?;
    write_metrics_csv(&mut w, &header, &outcome.history)?;
    w.flush()?;
    write_json(
        out,
        "train.json",
        &TrainFile {
            config: cfg,
            algorithm: outcome.algorithm,
            local_aggs: outcome.local_aggs,
            rounds: outcome.history.len(),
            final_accuracy: outcome.final_accuracy,
            optimum_accuracy: outcome.optimum_accuracy,
            final_delta_omega: outcome.history.last().map_or(f64::NAN, |m| m.delta_omega),
            assumption: (outcome.algorithm == Algorithm::Cfl).then_some(CFL_ASSUMPTION),
        },
    )?;
    Ok(outcome)
}

// ------------------------------------------------------------------- verify

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Gate the variance check on the closed form with the printed index
    /// placement instead of the unrolled recursion.
    pub literal_m2: bool,
    pub replications: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceResult<T> {
    pub instance: u64,
    pub n_devices: usize,
    pub mode: ConsensusMode,
    pub report: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySuite {
    pub config: Config,
    pub master_seed: u64,
    pub literal_m2: bool,
    pub checks: Vec<CheckSummary>,
    pub expectation: Vec<InstanceResult<ExpectationReport>>,
    pub variance: Vec<InstanceResult<VarianceReport>>,
    pub bound: Vec<BoundReport>,
    pub passed: bool,
}

/// Bias and variance oracles on `instances` random instances for each `J` in
/// [`MC_J_VALUES`].
#[allow(clippy::type_complexity)]
pub fn monte_carlo_checks(
    cfg: &Config,
    replications: usize,
) -> Result<(Vec<InstanceResult<ExpectationReport>>, Vec<InstanceResult<VarianceReport>>)> {
    let v = &cfg.verify;
    let plan = PacketPlan::by_packet_len(v.model_dim, v.elems_per_packet)?;
    let seed = cfg.training.master_seed;
    let mut exp = Vec::new();
    let mut var = Vec::new();
    for i in 0..v.instances as u64 {
        let inst = random_mc_instance(seed, i, plan)?;
        for &j in &MC_J_VALUES {
            let s = derive_seed(seed, &[purpose::VERIFY, i, j as u64]);
            let wrap = |report| InstanceResult { instance: i, n_devices: inst.n_devices(), mode: inst.mode, report };
            exp.push(wrap(mc_expectation_bias(&inst, j, replications.max(MIN_EXPECTATION_REPLICATIONS), s)?));
            var.push(InstanceResult {
                instance: i,
                n_devices: inst.n_devices(),
                mode: inst.mode,
                report: mc_variance(&inst, j, replications, s)?,
            });
        }
    }
    Ok((exp, var))
}

/// Random admissible training configurations (step size below `1/(2L̂)`,
/// `ζ₁ < 1`), each measured with [`mc_one_round_bound`].
pub fn bound_sweep(cfg: &Config, n_configs: usize, replications: usize) -> Result<Vec<BoundReport>> {
    let net = build_network(cfg)?;
    let master = cfg.training.master_seed;
    let n_data = n_configs.clamp(1, 10);
    let mut works = Vec::with_capacity(n_data);
    for k in 0..n_data {
        let work = build_workload(cfg, derive_seed(master, &[purpose::VERIFY, 3, k as u64]))?;
        let half: Vec<f64> = work.omega_star.iter().map(|v| 0.5 * v).collect();
        let radius = 0.6 * work.omega_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        let est = estimate_smoothness(
            &work.model,
            &work.data,
            &half,
            radius.max(1e-3),
            SMOOTHNESS_PAIRS,
            cfg.training.batch_size,
            &mut stream(master, &[purpose::SMOOTHNESS, k as u64]),
        )?;
        works.push((work, est));
    }
    let tau = net.channel.tau_eps();
    let mut rng = stream(master, &[purpose::VERIFY, 4]);
    let mut out = Vec::with_capacity(n_configs);
    let mut attempts = 0;
    while out.len() < n_configs {
        attempts += 1;
        if attempts > 100 * n_configs {
            return Err(Error::InvalidState("could not sample admissible bound configurations".into()));
        }
        let k = out.len() % n_data;
        let (work, est): &(Workload, SmoothnessEstimate) = &works[k];
        let eta = rng.random_range(0.05..0.5);
        let iters = rng.random_range(5..=20usize);
        let j = rng.random_range(1..=10usize);
        let round = rng.random_range(1..=30usize);
        let aware = rng.random_bool(0.5);
        if eta >= 0.5 / est.l_hat || (1.0 + tau) * (1.0 - est.mu_hat * eta / 2.0).powi(iters as i32) >= 1.0 {
            continue;
        }
        let mut c = cfg.clone();
        c.training.eta = eta;
        c.training.local_iters = iters;
        let algorithm = if aware { Algorithm::DflAware } else { Algorithm::DflUnaware };
        let seed = derive_seed(master, &[purpose::VERIFY, 5, out.len() as u64]);
        let sim = simulation(&c, &net, work, algorithm, j, seed)?;
        out.push(mc_one_round_bound(&sim, tau, algorithm_mode(algorithm), est, round, replications, seed)?);
    }
    Ok(out)
}

/// Fraction of bound reports with slack ratio at least 1.
pub fn bound_pass_fraction(reports: &[BoundReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.slack_ratio >= 1.0).count() as f64 / reports.len() as f64
}

pub const BOUND_PASS_FRACTION: f64 = 0.95;

pub fn run_verify(cfg: &Config, opts: VerifyOptions) -> Result<VerifySuite> {
    let mut reps = opts.replications.unwrap_or(cfg.verify.replications);
    if reps < MIN_VARIANCE_REPLICATIONS {
        warn!("{reps} replications is below the {MIN_VARIANCE_REPLICATIONS} the variance check needs; using {MIN_VARIANCE_REPLICATIONS}");
        reps = MIN_VARIANCE_REPLICATIONS;
    }
    let (expectation, variance) = monte_carlo_checks(cfg, reps)?;
    let bound = bound_sweep(cfg, cfg.verify.bound_configs, cfg.verify.bound_replications)?;

    let max_z = expectation.iter().map(|r| r.report.max_abs_z).fold(0.0, f64::max);
    let worst = |f: fn(&VarianceReport) -> f64| variance.iter().map(|r| f(&r.report)).fold(0.0, f64::max);
    let rec = worst(|r| r.max_rel_error);
    let exact = worst(|r| r.max_rel_error_exact);
    let exact_z = worst(|r| r.max_z_exact);
    let literal = variance
        .iter()
        .map(|r| r.report.max_rel_error_literal.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let frac = bound_pass_fraction(&bound);
    let mut checks = vec![
        CheckSummary {
            name: "expectation_bias".into(),
            passed: expectation.iter().all(|r| r.report.passed),
            detail: format!("max |z| = {max_z:.3} over {} runs", expectation.len()),
        },
        CheckSummary {
            name: "variance_exact_second_moment".into(),
            passed: variance.iter().all(|r| r.report.exact_passed),
            detail: format!("max standardized error {exact_z:.3}, max relative error {exact:.4}"),
        },
    ];
    if opts.literal_m2 {
        checks.push(CheckSummary {
            name: "variance_m2_literal".into(),
            passed: variance.iter().all(|r| r.report.literal_passed),
            detail: format!("max relative error {literal:.4}"),
        });
    } else {
        checks.push(CheckSummary {
            name: "variance_m2".into(),
            passed: variance.iter().all(|r| r.report.passed),
            detail: format!("max relative error {rec:.4} (printed index placement: {literal:.4})"),
        });
    }
    checks.push(CheckSummary {
        name: "one_round_bound".into(),
        passed: frac >= BOUND_PASS_FRACTION,
        detail: format!("slack ratio >= 1 on {:.1}% of {} configurations", 100.0 * frac, bound.len()),
    });
    for c in &checks {
        if c.passed {
            info!("{}: pass ({})", c.name, c.detail);
        } else {
            warn!("{}: FAIL ({})", c.name, c.detail);
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifySuite {
        config: cfg.clone(),
        master_seed: cfg.training.master_seed,
        literal_m2: opts.literal_m2,
        checks,
        expectation,
        variance,
        bound,
        passed,
    })
}

/// `verify_report.json`.
pub fn cmd_verify(cfg: &Config, opts: VerifyOptions, out: &Path) -> Result<VerifySuite> {
    let suite = run_verify(cfg, opts)?;
    write_json(out, "verify_report.json", &suite)?;
    Ok(suite)
}

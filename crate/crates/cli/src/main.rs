//! `dfl`: command-line front end for the simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use dfl_core::config::{Config, LocalAggs};
use dfl_core::consensus::ConsensusMode;
use dfl_core::experiment::{cmd_analyze, cmd_topology, cmd_train, cmd_verify, VerifyOptions};
use dfl_core::flcore::Algorithm;
use dfl_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dfl", version, about = "Decentralized federated learning over packet-erasure links")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `training.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Export adjacency, link success probabilities and consensus matrices.
    Topology(NetworkArgs),
    /// Tabulate the bound over J and search for the optimum.
    Analyze {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long, value_enum, default_value_t = Mode::Unaware)]
        mode: Mode,
    },
    /// Run the training protocol and write per-round metrics.
    Train {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        /// Aggregations per round, or `auto` for the analysis optimum.
        #[arg(long)]
        local_aggs: Option<LocalAggs>,
        /// One-based index of the C-FL center.
        #[arg(long)]
        center: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Monte Carlo checks of the closed forms and the one-round bound.
    Verify {
        #[arg(long)]
        replications: Option<usize>,
        /// Gate the variance check on the printed index placement.
        #[arg(long)]
        literal_m2: bool,
    },
}

#[derive(Args, Debug)]
struct NetworkArgs {
    /// Path-loss compensation factor.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Unaware,
    Aware,
}

impl From<Mode> for ConsensusMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unaware => ConsensusMode::Unaware,
            Mode::Aware => ConsensusMode::Aware,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum AlgorithmArg {
    DflUnaware,
    DflAware,
    Cfl,
    Udfl,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::DflUnaware => Algorithm::DflUnaware,
            AlgorithmArg::DflAware => Algorithm::DflAware,
            AlgorithmArg::Cfl => Algorithm::Cfl,
            AlgorithmArg::Udfl => Algorithm::Udfl,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InfeasibleDensity(_) | Error::UnsupportedMode(_) => {
            EXIT_CONFIG
        }
        Error::Numerical(_) | Error::DegenerateLink(..) | Error::InvalidState(_) => EXIT_NUMERICAL,
        Error::Io(_) | Error::Json(_) => EXIT_FAILURE,
    }
}

fn apply_network(cfg: &mut Config, net: &NetworkArgs) {
    if let Some(k) = net.kappa {
        cfg.topology.kappa = k;
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.training.master_seed = seed;
    }
    match &cli.command {
        Command::Topology(net) => apply_network(&mut cfg, net),
        Command::Analyze { net, .. } => apply_network(&mut cfg, net),
        Command::Train { net, algorithm, local_aggs, center, rounds } => {
            apply_network(&mut cfg, net);
            if let Some(a) = algorithm {
                cfg.training.algorithm = (*a).into();
            }
            if let Some(j) = local_aggs {
                cfg.training.local_aggs = *j;
            }
            if let Some(c) = center {
                cfg.training.center_device = *c;
            }
            if let Some(r) = rounds {
                cfg.training.rounds = *r;
            }
        }
        Command::Verify { .. } => {}
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out)?;

    match cli.command {
        Command::Topology(_) => {
            for p in cmd_topology(&cfg, &cli.out)? {
                info!("wrote {}", p.display());
            }
        }
        Command::Analyze { mode, .. } => {
            let s = cmd_analyze(&cfg, mode.into(), &cli.out)?;
            let show = |m: &dfl_core::experiment::ModeSummary| {
                let th = m.threshold.map_or("none".to_string(), |t| format!("{:.3}", t.j_th));
                println!("{:>8}: J* = {:>3}, J_TH = {th}", m.mode.as_str(), m.j_star);
            };
            println!("tau_eps = {:.6}", s.tau_eps);
            show(&s.unaware);
            show(&s.aware);
        }
        Command::Train { .. } => {
            let o = cmd_train(&cfg, &cli.out)?;
            println!(
                "{} with J = {}: final accuracy {:.4} (centralized optimum {:.4})",
                o.algorithm.as_str(),
                o.local_aggs,
                o.final_accuracy,
                o.optimum_accuracy
            );
        }
        Command::Verify { replications, literal_m2 } => {
            let suite = cmd_verify(&cfg, VerifyOptions { literal_m2, replications }, &cli.out)?;
            for c in &suite.checks {
                println!("{:<32} {}  {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
            }
            if !suite.passed {
                return Ok(EXIT_VERIFY);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

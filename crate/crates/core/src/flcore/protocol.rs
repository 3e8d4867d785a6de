//! Local training, lossy gossip aggregation and the two baselines.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, FederatedData};
use super::model::LogisticModel;
use crate::channel::{sample_mask, ErasureMask, PacketPlan};
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::seed::{purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DflUnaware,
    DflAware,
    Cfl,
    Udfl,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::DflUnaware => "dfl_unaware",
            Algorithm::DflAware => "dfl_aware",
            Algorithm::Cfl => "cfl",
            Algorithm::Udfl => "udfl",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfl_unaware" => Ok(Algorithm::DflUnaware),
            "dfl_aware" => Ok(Algorithm::DflAware),
            "cfl" => Ok(Algorithm::Cfl),
            "udfl" => Ok(Algorithm::Udfl),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected dfl_unaware, dfl_aware, cfl or udfl)"
            ))),
        }
    }
}

/// What a receiver does with the blocks it failed to receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPolicy {
    /// Erased blocks contribute zeros, coefficients untouched.
    ZeroFill,
    /// The lost weight falls back onto the receiver's own copy.
    SelfFill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    /// Post-training models `ω_{n,I}`.
    pub omega: Vec<Vec<f64>>,
    /// Lossy aggregates `w_{n,j}`; also the next round's starting point.
    pub w: Vec<Vec<f64>>,
    /// Error-free shadow `x_{n,j}`.
    pub x: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub t: usize,
}

impl FleetState {
    pub fn new(p: Vec<f64>, start: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return invalid("fleet needs at least one device");
        }
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|&v| v < 0.0) {
            return invalid("data weights must be non-negative and sum to 1");
        }
        let n = p.len();
        Ok(Self {
            omega: vec![start.clone(); n],
            w: vec![start.clone(); n],
            x: vec![start; n],
            p,
            t: 0,
        })
    }

    pub fn n_devices(&self) -> usize {
        self.p.len()
    }

    /// `ω̄_I = Σ p_n ω_{n,I}`.
    pub fn weighted_mean(&self) -> Vec<f64> {
        weighted_sum(&self.p, &self.omega)
    }
}

fn weighted_sum(p: &[f64], vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for (pn, v) in p.iter().zip(vs) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += pn * x;
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `I` mini-batch SGD steps (batches drawn with replacement).
pub fn local_train<R: Rng + ?Sized>(
    model: &LogisticModel,
    data: &Dataset,
    start: &[f64],
    eta: f64,
    iters: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidState("local dataset is empty".into()));
    }
    if iters == 0 || !(eta > 0.0) || batch_size == 0 {
        return invalid("local training needs I >= 1, eta > 0 and batch_size >= 1");
    }
    let mut w = start.to_vec();
    let mut g = vec![0.0; w.len()];
    let mut batch = vec![0usize; batch_size];
    for _ in 0..iters {
        for b in batch.iter_mut() {
            *b = rng.random_range(0..data.len());
        }
        model.gradient_on(&w, data, &batch, &mut g);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
    }
    Ok(w)
}

/// `w_{n,0} = x_{n,0} = N p_n ω_{n,I}`.
pub fn init_aggregation(fleet: &mut FleetState) {
    let n = fleet.n_devices() as f64;
    for (i, om) in fleet.omega.iter().enumerate() {
        let s = n * fleet.p[i];
        fleet.w[i] = om.iter().map(|v| s * v).collect();
        fleet.x[i] = fleet.w[i].clone();
    }
}

/// What receiver `r` holds after one exchange of the models `w`; its own
/// copy is always intact.
pub fn lossy_receive<R: Rng + ?Sized>(
    w: &[Vec<f64>],
    r: usize,
    c: &Mat,
    succ: &Mat,
    plan: &PacketPlan,
    policy: LossPolicy,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; plan.model_dim];
    for (s, ws) in w.iter().enumerate() {
        let coef = c[(r, s)];
        if coef == 0.0 {
            continue;
        }
        if s == r {
            for (a, v) in out.iter_mut().zip(ws) {
                *a += coef * v;
            }
            continue;
        }
        let mask = sample_mask(succ[(r, s)], plan, rng);
        mask.axpy(plan, coef, ws, &mut out);
        if policy == LossPolicy::SelfFill {
            for (k, &ok) in mask.packets().iter().enumerate() {
                if !ok {
                    let b = plan.block(k);
                    for (a, v) in out[b.clone()].iter_mut().zip(&w[r][b]) {
                        *a += coef * v;
                    }
                }
            }
        }
    }
    out
}

/// One synchronous exchange: every receiver combines what survived from its
/// neighbors and the shadow moves by `C`.
pub fn aggregate_once(
    fleet: &mut FleetState,
    c: &Mat,
    succ: &Mat,
    plan: &PacketPlan,
    policy: LossPolicy,
    seed: u64,
    slot: usize,
) {
    let n = fleet.n_devices();
    let (w, x): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, &[purpose::AGGREGATE, fleet.t as u64, r as u64, slot as u64]);
            let w_new = lossy_receive(&fleet.w, r, c, succ, plan, policy, &mut rng);
            let mut x_new = vec![0.0; plan.model_dim];
            for (s, xs) in fleet.x.iter().enumerate() {
                let coef = c[(r, s)];
                if coef != 0.0 {
                    for (a, v) in x_new.iter_mut().zip(xs) {
                        *a += coef * v;
                    }
                }
            }
            (w_new, x_new)
        })
        .unzip();
    fleet.w = w;
    fleet.x = x;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub t: usize,
    pub accuracy: Vec<f64>,
    /// `‖ω̄_I − ω*‖²`.
    pub delta_omega: f64,
    /// `‖ω̄_I − w_{n,J}‖` per device.
    pub bias_norm: Vec<f64>,
    /// `p`-weighted mean of `accuracy`.
    pub mean_accuracy: f64,
}

/// Everything a run needs besides the evolving state.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    pub model: LogisticModel,
    pub data: &'a FederatedData,
    pub omega_star: &'a [f64],
    pub algorithm: Algorithm,
    /// Mixing coefficients (ignored by C-FL).
    pub consensus: Mat,
    /// Per-link success probability for one packet of `plan`.
    pub succ: Mat,
    pub plan: PacketPlan,
    /// Hop paths from every device to the aggregation center (C-FL only).
    pub paths: Vec<Vec<usize>>,
    pub eta: f64,
    pub local_iters: usize,
    pub local_aggs: usize,
    pub batch_size: usize,
    pub cfl_lossless_downlink: bool,
    pub seed: u64,
}

impl Simulation<'_> {
    pub fn n_devices(&self) -> usize {
        self.data.devices.len()
    }

    pub fn initial_state(&self) -> Result<FleetState> {
        FleetState::new(self.data.weights(), vec![0.0; self.model.n_params()])
    }

    /// Local training on every device from its current `w`.
    pub fn train_all(&self, fleet: &mut FleetState) -> Result<()> {
        let t = fleet.t as u64;
        let omega: Result<Vec<Vec<f64>>> = (0..self.n_devices())
            .into_par_iter()
            .map(|n| {
                let mut rng = stream(self.seed, &[purpose::TRAIN, t, n as u64]);
                local_train(
                    &self.model,
                    &self.data.devices[n],
                    &fleet.w[n],
                    self.eta,
                    self.local_iters,
                    self.batch_size,
                    &mut rng,
                )
            })
            .collect();
        fleet.omega = omega?;
        Ok(())
    }

    /// Aggregation phase of the configured algorithm, after training.
    pub fn aggregate(&self, fleet: &mut FleetState) -> Result<()> {
        match self.algorithm {
            Algorithm::DflUnaware | Algorithm::DflAware => {
                if self.local_aggs == 0 {
                    return invalid("at least one aggregation per round is required");
                }
                init_aggregation(fleet);
                for j in 1..=self.local_aggs {
                    aggregate_once(fleet, &self.consensus, &self.succ, &self.plan, LossPolicy::ZeroFill, self.seed, j);
                }
            }
            Algorithm::Udfl => {
                init_aggregation(fleet);
                aggregate_once(fleet, &self.consensus, &self.succ, &self.plan, LossPolicy::SelfFill, self.seed, 1);
            }
            Algorithm::Cfl => self.centralized_exchange(fleet)?,
        }
        Ok(())
    }

    /// Hop-by-hop upload to the center, weighted sum with zero-filled losses,
    /// then hop-by-hop broadcast back. A block lost on the way down leaves
    /// the receiver's own value in place.
    fn centralized_exchange(&self, fleet: &mut FleetState) -> Result<()> {
        let n = self.n_devices();
        if self.paths.len() != n {
            return Err(Error::InvalidState("C-FL needs a path from every device".into()));
        }
        let t = fleet.t as u64;
        let path_mask = |path: &[usize], dir: u64, dev: usize| -> ErasureMask {
            let mut rng = stream(self.seed, &[purpose::AGGREGATE, t, dev as u64, dir]);
            let mut mask = ErasureMask::all_ones(&self.plan);
            for hop in path.windows(2) {
                mask = mask.and(&sample_mask(self.succ[(hop[1], hop[0])], &self.plan, &mut rng));
            }
            mask
        };
        let mut global = vec![0.0; self.plan.model_dim];
        for dev in 0..n {
            let mask = path_mask(&self.paths[dev], 0, dev);
            mask.axpy(&self.plan, fleet.p[dev], &fleet.omega[dev], &mut global);
        }
        for dev in 0..n {
            let mut out = fleet.omega[dev].clone();
            if self.cfl_lossless_downlink {
                out.copy_from_slice(&global);
            } else {
                let rev: Vec<usize> = self.paths[dev].iter().rev().copied().collect();
                let mask = path_mask(&rev, 1, dev);
                for (k, &ok) in mask.packets().iter().enumerate() {
                    if ok {
                        let b = self.plan.block(k);
                        out[b.clone()].copy_from_slice(&global[b]);
                    }
                }
            }
            fleet.w[dev] = out;
        }
        fleet.x = vec![global; n];
        Ok(())
    }

    pub fn metrics(&self, fleet: &FleetState) -> RoundMetrics {
        let mean = fleet.weighted_mean();
        let accuracy: Vec<f64> = fleet.w.iter().map(|w| self.model.accuracy(w, &self.data.test)).collect();
        let mean_accuracy = accuracy.iter().zip(&fleet.p).map(|(a, p)| a * p).sum();
        RoundMetrics {
            t: fleet.t,
            bias_norm: fleet.w.iter().map(|w| sq_dist(&mean, w).sqrt()).collect(),
            delta_omega: sq_dist(&mean, self.omega_star),
            accuracy,
            mean_accuracy,
        }
    }

    /// Train, aggregate, record; the aggregates seed the next round.
    pub fn run_round(&self, fleet: &mut FleetState) -> Result<RoundMetrics> {
        fleet.t += 1;
        self.train_all(fleet)?;
        self.aggregate(fleet)?;
        Ok(self.metrics(fleet))
    }

    pub fn run(&self, rounds: usize) -> Result<Vec<RoundMetrics>> {
        let mut fleet = self.initial_state()?;
        (0..rounds).map(|_| self.run_round(&mut fleet)).collect()
    }
}

impl<'a> Simulation<'a> {
    /// [`Simulation::run`] with `hook(t, sim)` called before each round `t`
    /// (one-based), e.g. to swap in a new graph.
    pub fn run_with<F>(&self, rounds: usize, mut hook: F) -> Result<Vec<RoundMetrics>>
    where
        F: FnMut(usize, &mut Simulation<'a>) -> Result<()>,
    {
        let mut sim = self.clone();
        let mut fleet = sim.initial_state()?;
        let mut out = Vec::with_capacity(rounds);
        for t in 1..=rounds {
            hook(t, &mut sim)?;
            out.push(sim.run_round(&mut fleet)?);
        }
        Ok(out)
    }
}

/// Mean of the `p`-weighted accuracy over the last tenth of the rounds.
pub fn final_accuracy(history: &[RoundMetrics]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let tail = (history.len() / 10).max(1);
    let last = &history[history.len() - tail..];
    last.iter().map(|m| m.mean_accuracy).sum::<f64>() / tail as f64
}

//! Experiment configuration, read from TOML with unknown keys rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::analysis::BoundConstants;
use crate::channel::{LinkBudget, Modulation, PacketPlan, PathLossUnits};
use crate::error::{Error, Result};
use crate::flcore::{Algorithm, LogisticModel, SyntheticTask};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub topology: TopologyConfig,
    pub channel: ChannelConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub analysis: AnalysisConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub n_devices: usize,
    pub rho: f64,
    pub kappa: f64,
    /// Replaces the default coordinate table when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 2]>>,
    pub topology_seed: u64,
    /// Redraw the graph every this many rounds during training; 0 keeps it
    /// fixed.
    pub reseed_every: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self { n_devices: 10, rho: 0.5, kappa: 1.0, coords: None, topology_seed: 0, reseed_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub fc_mhz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub modulation: Modulation,
    pub path_loss_units: PathLossUnits,
    /// Size of the model the link budget is sized for.
    pub model_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elems_per_packet: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_packets: Option<usize>,
}

pub const DEFAULT_MODEL_DIM: usize = 1_210_000;
pub const DEFAULT_PACKETS: usize = 1600;

impl Default for ChannelConfig {
    fn default() -> Self {
        let b = LinkBudget::default();
        Self {
            fc_mhz: b.fc_mhz,
            bandwidth_hz: b.bandwidth_hz,
            tx_power_dbm: b.tx_power_dbm,
            noise_psd_dbm_hz: b.noise_psd_dbm_hz,
            modulation: b.modulation,
            path_loss_units: b.path_loss_units,
            model_dim: DEFAULT_MODEL_DIM,
            elems_per_packet: None,
            n_packets: None,
        }
    }
}

impl ChannelConfig {
    pub fn budget(&self) -> LinkBudget {
        LinkBudget {
            fc_mhz: self.fc_mhz,
            bandwidth_hz: self.bandwidth_hz,
            tx_power_dbm: self.tx_power_dbm,
            noise_psd_dbm_hz: self.noise_psd_dbm_hz,
            modulation: self.modulation,
            path_loss_units: self.path_loss_units,
        }
    }

    /// Packetization of the nominal model.
    pub fn plan(&self) -> Result<PacketPlan> {
        match (self.elems_per_packet, self.n_packets) {
            (Some(_), Some(_)) => Err(Error::Config(
                "channel: set elems_per_packet or n_packets, not both".into(),
            )),
            (Some(lp), None) => PacketPlan::by_packet_len(self.model_dim, lp),
            (None, Some(k)) => PacketPlan::by_packet_count(self.model_dim, k),
            (None, None) => PacketPlan::by_packet_count(self.model_dim, DEFAULT_PACKETS),
        }
    }
}

/// Synthetic task shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_classes: usize,
    pub n_features: usize,
    pub separation: f64,
    pub noise: f64,
    pub min_samples: usize,
    pub max_samples: usize,
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let t = SyntheticTask::default();
        Self {
            n_classes: t.n_classes,
            n_features: t.n_features,
            separation: t.separation,
            noise: t.noise,
            min_samples: t.min_samples,
            max_samples: t.max_samples,
            test_per_class: t.test_per_class,
        }
    }
}

impl DataConfig {
    pub fn task(&self) -> SyntheticTask {
        SyntheticTask {
            n_classes: self.n_classes,
            n_features: self.n_features,
            separation: self.separation,
            noise: self.noise,
            min_samples: self.min_samples,
            max_samples: self.max_samples,
            test_per_class: self.test_per_class,
        }
    }
}

/// Aggregations per round: a fixed count or the analysis optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalAggs {
    Fixed(usize),
    Auto,
}

impl fmt::Display for LocalAggs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalAggs::Fixed(j) => write!(f, "{j}"),
            LocalAggs::Auto => f.write_str("auto"),
        }
    }
}

impl std::str::FromStr for LocalAggs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(LocalAggs::Auto);
        }
        match s.parse::<usize>() {
            Ok(j) if j >= 1 => Ok(LocalAggs::Fixed(j)),
            _ => Err(Error::Config(format!("local_aggs must be a positive integer or \"auto\", got {s:?}"))),
        }
    }
}

impl Serialize for LocalAggs {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LocalAggs::Fixed(j) => s.serialize_u64(*j as u64),
            LocalAggs::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for LocalAggs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(j) if j >= 1 => Ok(LocalAggs::Fixed(j as usize)),
            Raw::Int(j) => Err(serde::de::Error::custom(format!("local_aggs must be >= 1, got {j}"))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub eta: f64,
    pub local_iters: usize,
    pub local_aggs: LocalAggs,
    pub rounds: usize,
    pub batch_size: usize,
    pub lambda_reg: f64,
    pub algorithm: Algorithm,
    /// One-based index of the C-FL aggregation center.
    pub center_device: usize,
    pub cfl_lossless_downlink: bool,
    pub master_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 0.3,
            local_iters: 10,
            local_aggs: LocalAggs::Auto,
            rounds: 200,
            batch_size: 16,
            lambda_reg: 1e-3,
            algorithm: Algorithm::DflUnaware,
            center_device: 4,
            cfl_lossless_downlink: false,
            master_seed: 0,
        }
    }
}

/// Constants fed to the bound and the `J*` search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub eta: f64,
    #[serde(rename = "I")]
    pub local_iters: usize,
    pub j_cap: usize,
    /// Taken from the data partition when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let k = BoundConstants::CNN;
        Self { mu: k.mu, l: k.l, eta: k.eta, local_iters: k.local_iters, j_cap: 30, p_max: None }
    }
}

impl AnalysisConfig {
    pub fn constants(&self) -> BoundConstants {
        BoundConstants { mu: self.mu, l: self.l, eta: self.eta, local_iters: self.local_iters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub replications: usize,
    /// Random instances per Monte Carlo check.
    pub instances: usize,
    pub model_dim: usize,
    pub elems_per_packet: usize,
    /// Sampled configurations for the one-round bound.
    pub bound_configs: usize,
    pub bound_replications: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            replications: 10_000,
            instances: 10,
            model_dim: 64,
            elems_per_packet: 8,
            bound_configs: 40,
            bound_replications: 200,
        }
    }
}

pub const MIN_EXPECTATION_REPLICATIONS: usize = 1_000;
pub const MIN_VARIANCE_REPLICATIONS: usize = 10_000;

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn model(&self) -> LogisticModel {
        LogisticModel {
            n_classes: self.data.n_classes,
            n_features: self.data.n_features,
            lambda_reg: self.training.lambda_reg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let t = &self.topology;
        if let Some(coords) = &t.coords {
            if coords.len() != t.n_devices {
                return fail(format!(
                    "topology: {} coordinates given for n_devices = {}",
                    coords.len(),
                    t.n_devices
                ));
            }
        } else if !(1..=12).contains(&t.n_devices) {
            return fail(format!("topology: n_devices must be in 1..=12 without coords, got {}", t.n_devices));
        }
        if !(t.rho > 0.0 && t.rho <= 1.0) {
            return fail(format!("topology: rho must be in (0, 1], got {}", t.rho));
        }
        if !(t.kappa > 0.0 && t.kappa.is_finite()) {
            return fail(format!("topology: kappa must be positive, got {}", t.kappa));
        }
        self.channel.budget().validate().map_err(|e| Error::Config(format!("channel: {e}")))?;
        self.channel.plan().map_err(|e| Error::Config(format!("channel: {e}")))?;

        let d = &self.data;
        if d.n_classes < 2 || d.n_features == 0 {
            return fail("data: need at least 2 classes and 1 feature".into());
        }
        if d.min_samples == 0 || d.min_samples > d.max_samples {
            return fail(format!("data: need 1 <= min_samples <= max_samples, got {}..{}", d.min_samples, d.max_samples));
        }
        if !(d.separation >= 0.0 && d.noise > 0.0) {
            return fail("data: separation must be >= 0 and noise > 0".into());
        }

        let tr = &self.training;
        if !(tr.eta > 0.0 && tr.eta.is_finite()) {
            return fail(format!("training: eta must be positive, got {}", tr.eta));
        }
        if tr.local_iters == 0 || tr.rounds == 0 || tr.batch_size == 0 {
            return fail("training: local_iters, rounds and batch_size must be >= 1".into());
        }
        if !(tr.lambda_reg > 0.0) {
            return fail(format!("training: lambda_reg must be positive, got {}", tr.lambda_reg));
        }
        if tr.center_device == 0 || tr.center_device > t.n_devices {
            return fail(format!(
                "training: center_device must be in 1..={}, got {}",
                t.n_devices, tr.center_device
            ));
        }

        self.analysis.constants().validate().map_err(|e| Error::Config(format!("analysis: {e}")))?;
        if self.analysis.j_cap == 0 {
            return fail("analysis: j_cap must be >= 1".into());
        }
        if let Some(p) = self.analysis.p_max {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("analysis: p_max must be in (0, 1], got {p}"));
            }
        }

        let v = &self.verify;
        if v.instances == 0 || v.bound_configs == 0 || v.bound_replications < 2 {
            return fail("verify: instances and bound_configs must be >= 1, bound_replications >= 2".into());
        }
        if v.model_dim == 0 || v.elems_per_packet == 0 {
            return fail("verify: model_dim and elems_per_packet must be >= 1".into());
        }
        Ok(())
    }
}

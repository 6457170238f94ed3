//! Experiment configuration read from TOML.
//!
//! Sections and keys (every key is optional; defaults in brackets):
//!
//! ```toml
//! [devices]
//! preset = "table3"          # used when `list` is absent ["table3"]
//! shard_size = 10            # samples per shard [10]
//! list = [ { distance_m = 100.0, rate = 1.0 }, { distance_km = 0.3, rate = 3.0 } ]
//!
//! [channel]
//! tx_power_dbm = 23.0
//! noise_power_dbm = -96.0
//! packet_bits = 4096
//! ber_model = "bpsk_uncoded" # or "logistic"
//! logistic_slope_per_db = 1.0
//! logistic_midpoint_db = 5.0
//!
//! [fl]                       # lambda, beta, eta_d, local_epochs, local_batch,
//! beta = 0.001               # sgd_lr, n_max, m_max
//!
//! [task]                     # num_classes, feature_dim, mean_spacing,
//! num_classes = 4            # class_means, noise_std, test_set_size
//!
//! [scheduler]
//! names = ["alsa-pi", "balsa", "balsa-po", "rr", "wmax"]
//! prior = "jeffreys"         # or "gamma" with prior_shape / prior_rate
//! epsilon_rate = 1e-6
//! gain_bins = 8
//! gain_lo = 1e-14
//! gain_hi = 1e-6
//! counting_mode = "auto"     # "joint" | "factored"
//!
//! [experiment]
//! capacity = 5               # W, uplink slots per round
//! gamma = 0.01
//! rounds = 2000
//! instances = 20
//! base_seed = 1
//! learning = true
//! snapshot_every = 5
//! target_accuracies = [0.8, 0.85, 0.9]
//! regret_reference = "alsa-pi"
//!
//! [oracle]                   # only read by the `oracle` subcommand
//! capacity = 1
//! n_max = 4
//! m_max = 2
//! gain_edges = [8e-12]
//! devices = [ { rate = 0.5, distance_m = 300.0 } ]
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bayes::{BayesOptions, CountingMode, Prior, StateDiscretizer};
use crate::channel::{ChannelParams, LinkModel};
use crate::engine::{DeviceSpec, FlHyperParams, LearningSetup, RadioSettings, WorldConfig};
use crate::error::{Error, Result};
use crate::learner::{SgdConfig, SoftmaxLearner, SyntheticTaskParams};
use crate::oracle::{GainBin, OracleDevice, SmallInstance};
use crate::rng::{stream, Purpose, NO_DEVICE};
use crate::scheduler::SchedulerKind;

/// Distances (m) and arrival rates (shards per round) of the default 25-device network.
pub const TABLE3_DEVICES: [(f64, f64); 25] = [
    (100.0, 1.0),
    (100.0, 1.0),
    (100.0, 1.0),
    (200.0, 1.0),
    (200.0, 1.0),
    (200.0, 1.0),
    (300.0, 1.0),
    (300.0, 1.0),
    (300.0, 1.0),
    (400.0, 1.0),
    (400.0, 1.0),
    (400.0, 1.0),
    (500.0, 1.0),
    (500.0, 1.0),
    (500.0, 1.0),
    (300.0, 3.0),
    (350.0, 3.0),
    (400.0, 3.0),
    (450.0, 3.0),
    (300.0, 5.0),
    (350.0, 5.0),
    (400.0, 5.0),
    (450.0, 5.0),
    (400.0, 10.0),
    (450.0, 10.0),
];

pub fn table3_devices() -> Vec<DeviceSpec> {
    TABLE3_DEVICES
        .iter()
        .map(|&(m, rate)| DeviceSpec {
            distance_km: m / 1000.0,
            rate,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    pub rate: f64,
}

impl DeviceEntry {
    fn spec(&self, field: &str) -> Result<DeviceSpec> {
        let distance_km = match (self.distance_km, self.distance_m) {
            (Some(km), None) => km,
            (None, Some(m)) => m / 1000.0,
            (Some(_), Some(_)) => {
                return Err(Error::config(field, "give distance_km or distance_m, not both"))
            }
            (None, None) => return Err(Error::config(field, "missing distance_km or distance_m")),
        };
        if !(distance_km.is_finite() && distance_km > 0.0) {
            return Err(Error::config(format!("{field}.distance"), "must be positive"));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::config(format!("{field}.rate"), "must be positive"));
        }
        Ok(DeviceSpec {
            distance_km,
            rate: self.rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DevicesSection {
    pub preset: String,
    pub shard_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<DeviceEntry>>,
}

impl Default for DevicesSection {
    fn default() -> Self {
        Self {
            preset: "table3".into(),
            shard_size: crate::arrivals::DEFAULT_SHARD_SIZE,
            list: None,
        }
    }
}

impl DevicesSection {
    pub fn specs(&self) -> Result<Vec<DeviceSpec>> {
        match &self.list {
            Some(list) => {
                if list.is_empty() {
                    return Err(Error::config("devices.list", "need at least one device"));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, d)| d.spec(&format!("devices.list[{i}]")))
                    .collect()
            }
            None => match self.preset.as_str() {
                "table3" => Ok(table3_devices()),
                other => Err(Error::config(
                    "devices.preset",
                    format!("unknown preset `{other}` (expected `table3`)"),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerModel {
    BpskUncoded,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub packet_bits: u32,
    pub ber_model: BerModel,
    pub logistic_slope_per_db: f64,
    pub logistic_midpoint_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            tx_power_dbm: crate::channel::DEFAULT_TX_POWER_DBM,
            noise_power_dbm: crate::channel::DEFAULT_NOISE_POWER_DBM,
            packet_bits: crate::channel::DEFAULT_PACKET_BITS,
            ber_model: BerModel::BpskUncoded,
            logistic_slope_per_db: 1.0,
            logistic_midpoint_db: 5.0,
        }
    }
}

impl ChannelSection {
    pub fn radio(&self) -> Result<RadioSettings> {
        let link = match self.ber_model {
            BerModel::BpskUncoded => LinkModel::BpskUncoded,
            BerModel::Logistic => LinkModel::Logistic {
                slope_per_db: self.logistic_slope_per_db,
                midpoint_db: self.logistic_midpoint_db,
            },
        };
        link.validate()
            .map_err(|_| Error::config("channel.logistic_slope_per_db", "logistic parameters must be finite with positive slope"))?;
        if self.packet_bits == 0 {
            return Err(Error::config("channel.packet_bits", "must be at least 1"));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::config("channel.tx_power_dbm", "must be finite"));
        }
        if !self.noise_power_dbm.is_finite() {
            return Err(Error::config("channel.noise_power_dbm", "must be finite"));
        }
        Ok(RadioSettings {
            tx_power_dbm: self.tx_power_dbm,
            noise_power_dbm: self.noise_power_dbm,
            packet_bits: self.packet_bits,
            link,
        })
    }

    fn channel_params(&self, distance_km: f64, field: &str) -> Result<ChannelParams> {
        ChannelParams::new(distance_km, self.tx_power_dbm, self.noise_power_dbm, self.packet_bits)
            .map_err(|e| match e {
                Error::Config { reason, .. } => Error::config(field, reason),
                other => other,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Jeffreys,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingChoice {
    Auto,
    Joint,
    Factored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub names: Vec<String>,
    pub prior: PriorKind,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub epsilon_rate: f64,
    pub gain_bins: usize,
    pub gain_lo: f64,
    pub gain_hi: f64,
    pub counting_mode: CountingChoice,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            names: ["alsa-pi", "balsa", "balsa-po", "rr", "wmax"]
                .map(String::from)
                .to_vec(),
            prior: PriorKind::Jeffreys,
            prior_shape: 1.0,
            prior_rate: 1.0,
            epsilon_rate: crate::bayes::DEFAULT_EPSILON_RATE,
            gain_bins: crate::bayes::DEFAULT_GAIN_BINS,
            gain_lo: crate::bayes::DEFAULT_GAIN_LO,
            gain_hi: crate::bayes::DEFAULT_GAIN_HI,
            counting_mode: CountingChoice::Auto,
        }
    }
}

impl SchedulerSection {
    pub fn kinds(&self) -> Result<Vec<SchedulerKind>> {
        if self.names.is_empty() {
            return Err(Error::config("scheduler.names", "need at least one scheduler"));
        }
        let mut kinds = Vec::with_capacity(self.names.len());
        for (i, name) in self.names.iter().enumerate() {
            let kind: SchedulerKind = name
                .parse()
                .map_err(|_| Error::config(format!("scheduler.names[{i}]"), format!("unknown scheduler `{name}`")))?;
            if kinds.contains(&kind) {
                return Err(Error::config(format!("scheduler.names[{i}]"), format!("duplicate scheduler `{name}`")));
            }
            kinds.push(kind);
        }
        Ok(kinds)
    }

    pub fn prior(&self) -> Result<Prior> {
        let prior = match self.prior {
            PriorKind::Jeffreys => Prior::Jeffreys {
                epsilon_rate: self.epsilon_rate,
            },
            PriorKind::Gamma => Prior::Gamma {
                shape: self.prior_shape,
                rate: self.prior_rate,
            },
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn bayes_options(&self, num_devices: usize, n_max: u64) -> Result<BayesOptions> {
        let discretizer = StateDiscretizer::log_spaced(self.gain_bins, self.gain_lo, self.gain_hi, n_max)?;
        let counting = match self.counting_mode {
            CountingChoice::Auto => CountingMode::default_for(num_devices),
            CountingChoice::Joint => CountingMode::Joint,
            CountingChoice::Factored => CountingMode::Factored,
        };
        Ok(BayesOptions {
            prior: self.prior()?,
            counting,
            discretizer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub capacity: usize,
    pub gamma: f64,
    pub rounds: u64,
    pub instances: u64,
    pub base_seed: u64,
    pub learning: bool,
    pub snapshot_every: u64,
    pub target_accuracies: Vec<f64>,
    /// Scheduler whose mean reward per round serves as `J*` in the regret columns.
    pub regret_reference: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            capacity: crate::scheduler::DEFAULT_CAPACITY,
            gamma: crate::scheduler::DEFAULT_GAMMA,
            rounds: 2000,
            instances: 20,
            base_seed: 1,
            learning: true,
            snapshot_every: 5,
            target_accuracies: vec![0.8, 0.85, 0.9],
            regret_reference: "alsa-pi".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDeviceEntry {
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    /// Explicit bins; replaces the channel-derived ones when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<GainBin>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub capacity: usize,
    pub n_max: u64,
    pub m_max: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub gain_edges: Vec<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
    pub devices: Vec<OracleDeviceEntry>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            capacity: 1,
            n_max: 4,
            m_max: 2,
            gamma: None,
            gain_edges: vec![8e-12],
            tolerance: crate::oracle::DEFAULT_TOLERANCE,
            max_iter: crate::oracle::DEFAULT_MAX_ITER,
            devices: vec![
                OracleDeviceEntry {
                    rate: 0.5,
                    distance_km: Some(0.3),
                    distance_m: None,
                    bins: None,
                },
                OracleDeviceEntry {
                    rate: 0.8,
                    distance_km: Some(0.4),
                    distance_m: None,
                    bins: None,
                },
            ],
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub devices: DevicesSection,
    pub channel: ChannelSection,
    pub fl: FlHyperParams,
    pub task: SyntheticTaskParams,
    pub scheduler: SchedulerSection,
    pub experiment: ExperimentSection,
    pub oracle: OracleSection,
}

fn parse_error(path: &str, e: toml::de::Error) -> Error {
    Error::Parse {
        path: path.into(),
        message: e.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| parse_error("<string>", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| parse_error(&path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks every section; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let specs = self.devices.specs()?;
        if self.devices.shard_size == 0 {
            return Err(Error::config("devices.shard_size", "must be at least 1"));
        }
        let radio = self.channel.radio()?;
        for (i, d) in specs.iter().enumerate() {
            self.channel.channel_params(d.distance_km, &format!("devices[{i}].distance"))?;
        }
        let _ = radio;
        self.fl.validate()?;
        self.task.build()?;
        self.scheduler.kinds()?;
        self.scheduler.bayes_options(specs.len(), self.fl.n_max)?;
        let e = &self.experiment;
        if e.capacity == 0 || e.capacity > specs.len() {
            return Err(Error::config(
                "experiment.capacity",
                format!("must be in 1..={}", specs.len()),
            ));
        }
        if !(0.0..1.0).contains(&e.gamma) {
            return Err(Error::config("experiment.gamma", "must lie in [0, 1)"));
        }
        if e.instances == 0 {
            return Err(Error::config("experiment.instances", "must be at least 1"));
        }
        if e.snapshot_every == 0 {
            return Err(Error::config("experiment.snapshot_every", "must be at least 1"));
        }
        for (i, t) in e.target_accuracies.iter().enumerate() {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::config(format!("experiment.target_accuracies[{i}]"), "must lie in [0, 1]"));
            }
        }
        e.regret_reference
            .parse::<SchedulerKind>()
            .map_err(|_| Error::config("experiment.regret_reference", format!("unknown scheduler `{}`", e.regret_reference)))?;
        Ok(())
    }

    pub fn device_specs(&self) -> Result<Vec<DeviceSpec>> {
        self.devices.specs()
    }

    /// The learner shared by all instances; its test set depends only on `base_seed`.
    pub fn learning_setup(&self) -> Result<Option<LearningSetup>> {
        if !self.experiment.learning {
            return Ok(None);
        }
        let task = self.task.build()?;
        let mut rng = stream(self.experiment.base_seed, u64::MAX, NO_DEVICE, Purpose::TestSet);
        let test_set = task.draw_dataset(self.task.test_set_size, &mut rng);
        let sgd = SgdConfig {
            epochs: self.fl.local_epochs,
            batch_size: self.fl.local_batch,
            learning_rate: self.fl.sgd_lr,
            lambda: self.fl.lambda,
        };
        let learner = SoftmaxLearner::new(task.clone(), sgd, test_set);
        Ok(Some(LearningSetup {
            learner: Arc::new(learner),
            task: Arc::new(task),
            snapshot_every: self.experiment.snapshot_every,
        }))
    }

    /// World parameters for one scheduler; the backlog is hidden only from BALSA-PO.
    pub fn world_config(&self, kind: SchedulerKind, learning: Option<LearningSetup>) -> Result<WorldConfig> {
        Ok(WorldConfig {
            devices: self.device_specs()?,
            radio: self.channel.radio()?,
            capacity: self.experiment.capacity,
            gamma: self.experiment.gamma,
            hyper: self.fl,
            shard_size: self.devices.shard_size,
            backlog_observable: kind != SchedulerKind::BalsaPo,
            learning,
        })
    }

    /// The small instance described by the `[oracle]` section.
    pub fn small_instance(&self) -> Result<SmallInstance> {
        let o = &self.oracle;
        let link = self.channel.radio()?.link;
        let devices = o
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let field = format!("oracle.devices[{i}]");
                if let Some(bins) = &d.bins {
                    return Ok(OracleDevice {
                        rate: d.rate,
                        bins: bins.clone(),
                    });
                }
                let entry = DeviceEntry {
                    distance_km: d.distance_km,
                    distance_m: d.distance_m,
                    rate: d.rate,
                };
                let spec = entry.spec(&field)?;
                let ch = self.channel.channel_params(spec.distance_km, &format!("{field}.distance"))?;
                Ok(SmallInstance::device_from_channel(d.rate, &ch, &link, &o.gain_edges))
            })
            .collect::<Result<Vec<_>>>()?;
        if o.gain_edges.windows(2).any(|w| !(w[0] < w[1])) || o.gain_edges.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::config("oracle.gain_edges", "must be positive and strictly increasing"));
        }
        if !(o.tolerance > 0.0) {
            return Err(Error::config("oracle.tolerance", "must be positive"));
        }
        let inst = SmallInstance {
            devices,
            capacity: o.capacity,
            gamma: o.gamma.unwrap_or(self.experiment.gamma),
            n_max: o.n_max,
            m_max: o.m_max,
            gain_edges: o.gain_edges.clone(),
        };
        inst.validate()?;
        Ok(inst)
    }
}

//! One simulated network and its round loop: scheduling, local training on
//! every device, transmission, central aggregation, then the per-device
//! counter and gradient bookkeeping.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arrivals::{generate_shard, sample_arrivals, ArrivalParams, Shard, ShardBuffer};
use crate::channel::{sample_gain, ChannelGain, ChannelParams, LinkModel};
use crate::error::{Error, Result};
use crate::learner::{Evaluation, Learner, SyntheticTask};
use crate::rng::{stream, Purpose, SimRng};
use crate::scheduler::{effectivity_score, ObservedState, RoundFeedback, Scheduler};

pub const DEFAULT_N_MAX: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlHyperParams {
    pub lambda: f64,
    pub beta: f64,
    pub eta_d: f64,
    pub local_epochs: usize,
    pub local_batch: usize,
    pub sgd_lr: f64,
    pub n_max: u64,
    pub m_max: u32,
}

impl Default for FlHyperParams {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            beta: 0.001,
            eta_d: 0.01,
            local_epochs: 5,
            local_batch: 10,
            sgd_lr: 0.05,
            n_max: DEFAULT_N_MAX,
            m_max: crate::arrivals::DEFAULT_M_MAX,
        }
    }
}

impl FlHyperParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v >= 0.0;
        if !pos(self.lambda) {
            return Err(Error::config("fl.lambda", "must be nonnegative"));
        }
        if !pos(self.beta) {
            return Err(Error::config("fl.beta", "must be nonnegative"));
        }
        if !(self.eta_d.is_finite() && self.eta_d > 0.0) {
            return Err(Error::config("fl.eta_d", "must be positive"));
        }
        if !(self.sgd_lr.is_finite() && self.sgd_lr > 0.0) {
            return Err(Error::config("fl.sgd_lr", "must be positive"));
        }
        if self.local_batch == 0 {
            return Err(Error::config("fl.local_batch", "must be at least 1"));
        }
        Ok(())
    }
}

/// Dynamic local learning rate `eta_d * max(1, ln d)`.
pub fn dynamic_learning_rate(eta_d: f64, delay_rounds: u64) -> f64 {
    eta_d * (delay_rounds.max(1) as f64).ln().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralState {
    pub w: Vec<f64>,
    pub round: u64,
}

/// Per-device FL bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFlState {
    pub w_local: Vec<f64>,
    /// Aggregated (possibly delayed) local gradient.
    pub psi: Vec<f64>,
    /// Shards accumulated since the last successful delivery.
    pub n: u64,
    /// Shards already folded into the central model.
    pub total_used: u64,
    /// Rounds since the last successful delivery (at least 1).
    pub d: u64,
    pub m_last: u64,
}

impl DeviceFlState {
    pub fn new(num_params: usize) -> Self {
        Self {
            w_local: vec![0.0; num_params],
            psi: vec![0.0; num_params],
            n: 0,
            total_used: 0,
            d: 1,
            m_last: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub delta: Vec<f64>,
    /// `n + m` shards covered by this update.
    pub sample_report: u64,
}

/// `psi <- grad + beta * psi` in place.
pub fn aggregate_gradient(psi: &mut [f64], grad: &[f64], beta: f64) {
    for (p, g) in psi.iter_mut().zip(grad) {
        *p = g + beta * *p;
    }
}

/// Local update phase for one device: take the broadcast parameters, train on
/// this round's shards, fold the gradient into `psi`, and scale by the
/// delay-dependent learning rate.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    device_id: usize,
    device: &mut DeviceFlState,
    central: &CentralState,
    new_shards: &[Shard],
    m: u64,
    learner: &dyn Learner,
    hyper: &FlHyperParams,
    rng: &mut SimRng,
) -> Result<LocalUpdate> {
    device.w_local.clone_from(&central.w);
    device.m_last = m;
    let grad = if new_shards.is_empty() {
        vec![0.0; central.w.len()]
    } else {
        learner
            .local_gradient(&central.w, new_shards, rng)
            .ok_or(Error::NonFiniteGradient { device: device_id })?
    };
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { device: device_id });
    }
    aggregate_gradient(&mut device.psi, &grad, hyper.beta);
    Ok(make_update(device, hyper.eta_d))
}

/// `Delta = eta(d) * psi` with report `n + m_last`.
pub fn make_update(device: &DeviceFlState, eta_d: f64) -> LocalUpdate {
    let eta = dynamic_learning_rate(eta_d, device.d);
    LocalUpdate {
        delta: device.psi.iter().map(|p| eta * p).collect(),
        sample_report: device.n + device.m_last,
    }
}

/// On delivery the aggregated gradient is cleared and the delay resets;
/// otherwise the delay grows by one round.
pub fn reset_gradient_on_success(device: &mut DeviceFlState, delivered: bool) {
    if delivered {
        device.psi.iter_mut().for_each(|p| *p = 0.0);
        device.d = 1;
    } else {
        device.d += 1;
    }
}

/// Backlog / used-sample update. Returns the number of shards dropped by the
/// `n_max` cap.
pub fn update_sample_counters(
    device: &mut DeviceFlState,
    scheduled: bool,
    delivered: bool,
    m: u64,
    n_max: u64,
) -> u64 {
    if scheduled && delivered {
        device.total_used += device.n + m;
        device.n = 0;
        0
    } else {
        let raw = device.n + m;
        device.n = raw.min(n_max);
        raw - device.n
    }
}

/// Central learning weights `c_u` for the delivered devices, in input order.
pub fn central_weights(updates: &[(usize, &LocalUpdate)], total_used: &[u64]) -> Result<Vec<f64>> {
    let denom: u64 = total_used.iter().sum::<u64>()
        + updates.iter().map(|(_, up)| up.sample_report).sum::<u64>();
    if denom == 0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(updates
        .iter()
        .map(|(u, up)| (total_used[*u] + up.sample_report) as f64 / denom as f64)
        .collect())
}

/// `w <- w - sum_u c_u Delta_u` over delivered updates.
pub fn central_aggregate(
    central: &mut CentralState,
    updates: &[(usize, &LocalUpdate)],
    total_used: &[u64],
) -> Result<()> {
    if updates.is_empty() {
        return Ok(());
    }
    let weights = central_weights(updates, total_used)?;
    for ((_, up), c) in updates.iter().zip(weights) {
        for (w, d) in central.w.iter_mut().zip(&up.delta) {
            *w -= c * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub distance_km: f64,
    pub rate: f64,
}

/// Radio settings shared by all devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioSettings {
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub packet_bits: u32,
    pub link: LinkModel,
}

impl Default for RadioSettings {
    fn default() -> Self {
        Self {
            tx_power_dbm: crate::channel::DEFAULT_TX_POWER_DBM,
            noise_power_dbm: crate::channel::DEFAULT_NOISE_POWER_DBM,
            packet_bits: crate::channel::DEFAULT_PACKET_BITS,
            link: LinkModel::BpskUncoded,
        }
    }
}

/// Learner plumbing for a world that trains a model.
#[derive(Clone)]
pub struct LearningSetup {
    pub learner: Arc<dyn Learner>,
    pub task: Arc<SyntheticTask>,
    pub snapshot_every: u64,
}

impl std::fmt::Debug for LearningSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LearningSetup")
            .field("snapshot_every", &self.snapshot_every)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub devices: Vec<DeviceSpec>,
    pub radio: RadioSettings,
    pub capacity: usize,
    pub gamma: f64,
    pub hyper: FlHyperParams,
    pub shard_size: usize,
    /// Whether the AP sees the per-device backlog `n`.
    pub backlog_observable: bool,
    pub learning: Option<LearningSetup>,
}

#[derive(Debug)]
struct DeviceRuntime {
    channel: ChannelParams,
    arrivals: ArrivalParams,
    fl: DeviceFlState,
    buffer: ShardBuffer,
    rng_channel: SimRng,
    rng_arrivals: SimRng,
    rng_delivery: SimRng,
    rng_data: SimRng,
    rng_sgd: SimRng,
    arrived: u64,
    dropped: u64,
}

/// Everything observed in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub scheduled: Vec<bool>,
    pub delivered: Vec<bool>,
    /// Backlog at the start of the round.
    pub n: Vec<u64>,
    pub m: Vec<u64>,
    pub effectivity: f64,
    /// Total backlog after the round's bookkeeping.
    pub n_total: u64,
    /// Devices still holding undelivered shards after the round.
    pub stragglers: usize,
    pub eval: Option<Evaluation>,
}

/// A simulated network owned by one simulation instance.
#[derive(Debug)]
pub struct World {
    config: WorldConfig,
    devices: Vec<DeviceRuntime>,
    central: CentralState,
}

impl World {
    pub fn new(config: WorldConfig, base_seed: u64, instance: u64) -> Result<Self> {
        if config.devices.is_empty() {
            return Err(Error::config("devices", "need at least one device"));
        }
        if config.capacity == 0 || config.capacity > config.devices.len() {
            return Err(Error::config(
                "experiment.capacity",
                format!("must be in 1..={}", config.devices.len()),
            ));
        }
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::config("experiment.gamma", "must lie in [0, 1)"));
        }
        config.hyper.validate()?;
        config.radio.link.validate()?;
        let num_params = config
            .learning
            .as_ref()
            .map_or(0, |l| l.learner.num_params());
        let devices = config
            .devices
            .iter()
            .enumerate()
            .map(|(u, spec)| {
                let channel = ChannelParams::new(
                    spec.distance_km,
                    config.radio.tx_power_dbm,
                    config.radio.noise_power_dbm,
                    config.radio.packet_bits,
                )
                .map_err(|e| prefix_field(e, &format!("devices[{u}]")))?;
                let arrivals = ArrivalParams::new(spec.rate, config.shard_size)
                    .map_err(|e| prefix_field(e, &format!("devices[{u}]")))?;
                let id = u as u64;
                Ok(DeviceRuntime {
                    channel,
                    arrivals,
                    fl: DeviceFlState::new(num_params),
                    buffer: ShardBuffer::new(),
                    rng_channel: stream(base_seed, instance, id, Purpose::Channel),
                    rng_arrivals: stream(base_seed, instance, id, Purpose::Arrivals),
                    rng_delivery: stream(base_seed, instance, id, Purpose::Delivery),
                    rng_data: stream(base_seed, instance, id, Purpose::ShardData),
                    rng_sgd: stream(base_seed, instance, id, Purpose::LocalSgd),
                    arrived: 0,
                    dropped: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let w = config
            .learning
            .as_ref()
            .map_or_else(Vec::new, |l| l.learner.initial_params());
        Ok(Self {
            config,
            devices,
            central: CentralState { w, round: 0 },
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn central(&self) -> &CentralState {
        &self.central
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn device(&self, u: usize) -> &DeviceFlState {
        &self.devices[u].fl
    }

    pub fn channel(&self, u: usize) -> &ChannelParams {
        &self.devices[u].channel
    }

    pub fn true_rates(&self) -> Vec<f64> {
        self.devices.iter().map(|d| d.arrivals.rate()).collect()
    }

    pub fn backlog(&self) -> Vec<u64> {
        self.devices.iter().map(|d| d.fl.n).collect()
    }

    /// `(arrived, used + pending + dropped)` per device; the two must match.
    pub fn conservation(&self) -> Vec<(u64, u64)> {
        self.devices
            .iter()
            .map(|d| (d.arrived, d.fl.total_used + d.fl.n + d.dropped))
            .collect()
    }

    pub fn pending_shards(&self, u: usize) -> usize {
        self.devices[u].buffer.shard_count()
    }

    pub fn evaluate(&self) -> Option<Evaluation> {
        self.config
            .learning
            .as_ref()
            .map(|l| l.learner.evaluate(&self.central.w))
    }

    pub fn run_round(&mut self, scheduler: &mut dyn Scheduler) -> Result<RoundRecord> {
        let t = self.central.round + 1;
        let num = self.devices.len();
        let radio = self.config.radio;
        let hyper = self.config.hyper;

        // scheduling phase
        let gains: Vec<ChannelGain> = self
            .devices
            .iter_mut()
            .map(|d| sample_gain(&d.channel, &mut d.rng_channel))
            .collect();
        let success_probs: Vec<f64> = gains
            .iter()
            .zip(&self.devices)
            .map(|(&g, d)| radio.link.gain_success_probability(g, &d.channel))
            .collect();
        let n_start = self.backlog();
        let state = ObservedState {
            round: t,
            gains,
            success_probs,
            backlog: self.config.backlog_observable.then(|| n_start.clone()),
        };
        let decision = scheduler.decide(&state, self.config.capacity)?;
        if decision.mask().len() != num {
            return Err(Error::InvalidSchedule {
                selected: decision.mask().len(),
                capacity: num,
            });
        }
        decision.validate(self.config.capacity)?;
        let scheduled = decision.into_mask();

        // local update phase (every device trains, scheduled or not)
        let learning = self.config.learning.clone();
        let mut m = Vec::with_capacity(num);
        let mut updates: Vec<Option<LocalUpdate>> = Vec::with_capacity(num);
        for (u, dev) in self.devices.iter_mut().enumerate() {
            let arrived = u64::from(sample_arrivals(&dev.arrivals, hyper.m_max, &mut dev.rng_arrivals));
            dev.arrived += arrived;
            m.push(arrived);
            match &learning {
                Some(setup) => {
                    let shards: Vec<Shard> = (0..arrived)
                        .map(|_| generate_shard(&setup.task, dev.arrivals.shard_size(), &mut dev.rng_data))
                        .collect();
                    let update = local_train(
                        u,
                        &mut dev.fl,
                        &self.central,
                        &shards,
                        arrived,
                        setup.learner.as_ref(),
                        &hyper,
                        &mut dev.rng_sgd,
                    )?;
                    for shard in shards {
                        dev.buffer.push(shard);
                    }
                    updates.push(Some(update));
                }
                None => {
                    dev.fl.m_last = arrived;
                    updates.push(None);
                }
            }
        }

        // aggregation phase
        let forced = scheduler.forces_delivery();
        let delivered: Vec<bool> = self
            .devices
            .iter_mut()
            .zip(&scheduled)
            .zip(&state.success_probs)
            .map(|((dev, &a), &p)| {
                // one draw per device per round keeps streams aligned across schedulers
                let ok = crate::channel::sample_transmission(p, &mut dev.rng_delivery);
                a && (forced || ok)
            })
            .collect();
        if learning.is_some() {
            let total_used: Vec<u64> = self.devices.iter().map(|d| d.fl.total_used).collect();
            let delivered_updates: Vec<(usize, &LocalUpdate)> = updates
                .iter()
                .enumerate()
                .filter(|(u, _)| delivered[*u])
                .filter_map(|(u, up)| up.as_ref().map(|up| (u, up)))
                .collect();
            match central_aggregate(&mut self.central, &delivered_updates, &total_used) {
                Ok(()) | Err(Error::ZeroDenominator) => {}
                Err(e) => return Err(e),
            }
        }
        let n_plus_m: Vec<u64> = n_start.iter().zip(&m).map(|(n, m)| n + m).collect();
        let effectivity = effectivity_score(&n_plus_m, &scheduled, &delivered, self.config.gamma);

        let mut reported = vec![None; num];
        for (u, dev) in self.devices.iter_mut().enumerate() {
            if delivered[u] {
                reported[u] = Some(n_plus_m[u]);
                dev.buffer.drain();
            }
            dev.dropped += update_sample_counters(&mut dev.fl, scheduled[u], delivered[u], m[u], hyper.n_max);
            if learning.is_some() {
                dev.buffer.truncate_oldest(hyper.n_max as usize);
            }
            reset_gradient_on_success(&mut dev.fl, delivered[u]);
        }
        self.central.round = t;

        let next_backlog = self.backlog();
        let n_total = next_backlog.iter().sum();
        let stragglers = next_backlog.iter().filter(|&&n| n > 0).count();
        scheduler.observe(&RoundFeedback {
            round: t,
            scheduled: scheduled.clone(),
            delivered: delivered.clone(),
            reported,
            next_backlog: self.config.backlog_observable.then_some(next_backlog),
        });

        let eval = match &learning {
            Some(setup) if setup.snapshot_every > 0 && t.is_multiple_of(setup.snapshot_every) => {
                Some(setup.learner.evaluate(&self.central.w))
            }
            _ => None,
        };
        Ok(RoundRecord {
            round: t,
            scheduled,
            delivered,
            n: n_start,
            m,
            effectivity,
            n_total,
            stragglers,
            eval,
        })
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

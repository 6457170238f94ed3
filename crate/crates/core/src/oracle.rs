//! Exact average-reward MDP for tiny networks and its solvers.
//!
//! A state is, per device, a quantised gain bin and a truncated backlog
//! `n <= n_max`; an action is a `W`-subset of devices. Devices evolve
//! independently given the action, so the kernel is stored per device and
//! applied to value vectors mode by mode instead of as a dense matrix.
//!
//! Rewards are the expected effectivity score mapped affinely onto `[0, 1]`:
//! `r = (F + gamma * C) / ((1 + gamma) * C)` with `C = U * (n_max + m_max)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arrivals::clipped_poisson_pmf;
use crate::bayes::StateDiscretizer;
use crate::channel::{ChannelGain, ChannelParams, LinkModel};
use crate::error::{Error, Result};
use crate::scheduler::{top_k_by_score, ObservedState, RoundFeedback, Scheduler};

pub const MAX_DEVICES: usize = 3;
pub const MAX_GAIN_BINS: usize = 3;
pub const MAX_N: u64 = 4;
pub const MAX_M: u32 = 2;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// One quantised channel state of a device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBin {
    pub probability: f64,
    pub success_prob: f64,
    /// Gain reported to schedulers when the device is in this bin.
    pub representative_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDevice {
    pub rate: f64,
    pub bins: Vec<GainBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallInstance {
    pub devices: Vec<OracleDevice>,
    pub capacity: usize,
    pub gamma: f64,
    pub n_max: u64,
    pub m_max: u32,
    /// Gain thresholds separating the bins (one fewer than the bin count).
    pub gain_edges: Vec<f64>,
}

impl SmallInstance {
    /// Bins a device's Rayleigh channel at the given gain thresholds. Each bin
    /// carries its probability under unit-mean exponential fading and the
    /// delivery probability at the bin's conditional-mean gain.
    pub fn device_from_channel(
        rate: f64,
        channel: &ChannelParams,
        link: &LinkModel,
        gain_edges: &[f64],
    ) -> OracleDevice {
        let mean_gain = channel.mean_gain();
        let mut cuts: Vec<f64> = vec![0.0];
        cuts.extend(gain_edges.iter().map(|g| g / mean_gain));
        cuts.push(f64::INFINITY);
        let bins = cuts
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let (ea, eb) = ((-a).exp(), if b.is_finite() { (-b).exp() } else { 0.0 });
                let probability = ea - eb;
                let tail_b = if b.is_finite() { (b + 1.0) * eb } else { 0.0 };
                let fading = if probability > 0.0 {
                    ((a + 1.0) * ea - tail_b) / probability
                } else {
                    a
                };
                let gain = ChannelGain::new(fading * mean_gain).expect("nonnegative");
                GainBin {
                    probability,
                    success_prob: link.gain_success_probability(gain, channel),
                    representative_gain: gain.linear(),
                }
            })
            .collect();
        OracleDevice { rate, bins }
    }

    /// Random instance for verification sweeps: rates in `[0.2, 1.5]`, bin
    /// probabilities from normalised uniforms, success probabilities increasing
    /// across bins.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_devices: usize,
        bins: usize,
        capacity: usize,
        n_max: u64,
        m_max: u32,
        gamma: f64,
    ) -> Self {
        let devices = (0..num_devices)
            .map(|_| {
                let weights: Vec<f64> = (0..bins).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                let mut probs: Vec<f64> = (0..bins).map(|_| rng.random_range(0.0..1.0)).collect();
                probs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                OracleDevice {
                    rate: rng.random_range(0.2..1.5),
                    bins: (0..bins)
                        .map(|b| GainBin {
                            probability: weights[b] / total,
                            success_prob: probs[b],
                            representative_gain: 10f64.powi(b as i32 - 12),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            devices,
            capacity,
            gamma,
            n_max,
            m_max,
            gain_edges: (1..bins).map(|b| 10f64.powf(b as f64 - 12.5)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.devices.len();
        if u == 0 || u > MAX_DEVICES {
            return Err(Error::TooLarge(format!("{u} devices (limit {MAX_DEVICES})")));
        }
        if self.n_max > MAX_N {
            return Err(Error::TooLarge(format!("n_max {} (limit {MAX_N})", self.n_max)));
        }
        if self.m_max > MAX_M {
            return Err(Error::TooLarge(format!("m_max {} (limit {MAX_M})", self.m_max)));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if d.bins.is_empty() || d.bins.len() > MAX_GAIN_BINS {
                return Err(Error::TooLarge(format!(
                    "device {i} has {} gain bins (limit {MAX_GAIN_BINS})",
                    d.bins.len()
                )));
            }
            let total: f64 = d.bins.iter().map(|b| b.probability).sum();
            if (total - 1.0).abs() > 1e-9 || d.bins.iter().any(|b| b.probability < 0.0) {
                return Err(Error::config(format!("oracle.devices[{i}].bins"), "probabilities must sum to 1"));
            }
            if d.bins.iter().any(|b| !(0.0..=1.0).contains(&b.success_prob)) {
                return Err(Error::config(format!("oracle.devices[{i}].bins"), "success probabilities must lie in [0, 1]"));
            }
            if d.bins.len() != self.gain_edges.len() + 1 {
                return Err(Error::config(
                    format!("oracle.devices[{i}].bins"),
                    format!("expected {} bins to match gain_edges", self.gain_edges.len() + 1),
                ));
            }
            for (b, bin) in d.bins.iter().enumerate() {
                let g = bin.representative_gain;
                let above = b == 0 || g >= self.gain_edges[b - 1];
                let below = b == self.gain_edges.len() || g < self.gain_edges[b];
                if !(above && below) {
                    return Err(Error::config(
                        format!("oracle.devices[{i}].bins[{b}].representative_gain"),
                        "must lie inside its bin",
                    ));
                }
            }
            if !(d.rate.is_finite() && d.rate > 0.0) {
                return Err(Error::config(format!("oracle.devices[{i}].rate"), "must be positive"));
            }
        }
        if self.capacity == 0 || self.capacity > u {
            return Err(Error::config("oracle.capacity", format!("must be in 1..={u}")));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("oracle.gamma", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Discretizer whose bins coincide with the instance's gain bins.
    pub fn discretizer(&self) -> Result<StateDiscretizer> {
        StateDiscretizer::new(self.gain_edges.clone(), self.n_max)
    }

    /// Reward normalisation constant `(1 + gamma) * U * (n_max + m_max)`.
    pub fn reward_scale(&self) -> f64 {
        (1.0 + self.gamma) * self.devices.len() as f64 * (self.n_max + u64::from(self.m_max)) as f64
    }

    pub fn normalize_reward(&self, effectivity: f64) -> f64 {
        let c = self.devices.len() as f64 * (self.n_max + u64::from(self.m_max)) as f64;
        (effectivity + self.gamma * c) / self.reward_scale()
    }

    pub fn denormalize_reward(&self, reward: f64) -> f64 {
        let c = self.devices.len() as f64 * (self.n_max + u64::from(self.m_max)) as f64;
        reward * self.reward_scale() - self.gamma * c
    }
}

/// Per-device local state `(bin, n)` packed as `bin * (n_max + 1) + n`.
#[derive(Debug, Clone, PartialEq)]
struct DeviceKernel {
    local_states: usize,
    /// `kernel[a][from * local_states + to]` for `a` in {idle, scheduled}.
    kernel: [Vec<f64>; 2],
    /// Expected per-device contribution to F for `a` in {idle, scheduled}.
    reward: [Vec<f64>; 2],
    /// Greedy score `p * (n + E[m])` per local state.
    score: Vec<f64>,
}

/// Finite MDP with factored transitions.
#[derive(Debug, Clone)]
pub struct MdpModel {
    instance: SmallInstance,
    kernels: Vec<DeviceKernel>,
    /// Each action as a device bitmask, in lexicographic subset order.
    actions: Vec<u32>,
    num_states: usize,
    /// `rewards[s * A + a]`, normalised into `[0, 1]`.
    rewards: Vec<f64>,
}

fn subsets(n: usize, k: usize) -> Vec<u32> {
    fn rec(start: usize, n: usize, k: usize, mask: u32, out: &mut Vec<u32>) {
        if k == 0 {
            out.push(mask);
            return;
        }
        for i in start..n {
            rec(i + 1, n, k - 1, mask | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, 0, &mut out);
    out
}

/// Number of joint states the instance would have, without building it.
pub fn state_count(instance: &SmallInstance) -> u128 {
    instance
        .devices
        .iter()
        .map(|d| (d.bins.len() as u128) * u128::from(instance.n_max + 1))
        .product()
}

pub fn build_mdp(instance: &SmallInstance) -> Result<MdpModel> {
    instance.validate()?;
    let n_levels = instance.n_max as usize + 1;
    let gamma = instance.gamma;
    let kernels: Vec<DeviceKernel> = instance
        .devices
        .iter()
        .map(|dev| {
            let pmf = clipped_poisson_pmf(dev.rate, instance.m_max);
            let mean_m: f64 = pmf.iter().enumerate().map(|(m, p)| m as f64 * p).sum();
            let local = dev.bins.len() * n_levels;
            let mut kernel = [vec![0.0; local * local], vec![0.0; local * local]];
            let mut reward = [vec![0.0; local], vec![0.0; local]];
            let mut score = vec![0.0; local];
            for (b, bin) in dev.bins.iter().enumerate() {
                for n in 0..n_levels {
                    let from = b * n_levels + n;
                    let load = n as f64 + mean_m;
                    score[from] = bin.success_prob * load;
                    reward[0][from] = -gamma * load;
                    reward[1][from] = bin.success_prob * (1.0 + gamma) * load - gamma * load;
                    for (m, &pm) in pmf.iter().enumerate() {
                        let grown = (n + m).min(instance.n_max as usize);
                        for (b2, next_bin) in dev.bins.iter().enumerate() {
                            let pb = pm * next_bin.probability;
                            kernel[0][from * local + b2 * n_levels + grown] += pb;
                            kernel[1][from * local + b2 * n_levels] += pb * bin.success_prob;
                            kernel[1][from * local + b2 * n_levels + grown] +=
                                pb * (1.0 - bin.success_prob);
                        }
                    }
                }
            }
            DeviceKernel {
                local_states: local,
                kernel,
                reward,
                score,
            }
        })
        .collect();
    let num_states: usize = kernels.iter().map(|k| k.local_states).product();
    let actions = subsets(instance.devices.len(), instance.capacity);
    let mut model = MdpModel {
        instance: instance.clone(),
        kernels,
        actions,
        num_states,
        rewards: Vec::new(),
    };
    let mut rewards = Vec::with_capacity(num_states * model.actions.len());
    for s in 0..num_states {
        let locals = model.decode(s);
        for &mask in &model.actions {
            let f: f64 = locals
                .iter()
                .enumerate()
                .map(|(u, &l)| model.kernels[u].reward[((mask >> u) & 1) as usize][l])
                .sum();
            rewards.push(instance.normalize_reward(f));
        }
    }
    model.rewards = rewards;
    Ok(model)
}

impl MdpModel {
    pub fn instance(&self) -> &SmallInstance {
        &self.instance
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_mask(&self, a: usize) -> u32 {
        self.actions[a]
    }

    pub fn action_index(&self, mask: u32) -> Option<usize> {
        self.actions.iter().position(|&m| m == mask)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.actions.len() + a]
    }

    /// Per-device local indices, device 0 least significant.
    pub fn decode(&self, mut s: usize) -> Vec<usize> {
        self.kernels
            .iter()
            .map(|k| {
                let l = s % k.local_states;
                s /= k.local_states;
                l
            })
            .collect()
    }

    pub fn encode(&self, locals: &[usize]) -> usize {
        let mut s = 0;
        for (k, &l) in self.kernels.iter().zip(locals).rev() {
            s = s * k.local_states + l;
        }
        s
    }

    /// `(gain bin, n)` of each device in state `s`.
    pub fn device_states(&self, s: usize) -> Vec<(usize, u64)> {
        let levels = self.instance.n_max as usize + 1;
        self.decode(s)
            .into_iter()
            .map(|l| (l / levels, (l % levels) as u64))
            .collect()
    }

    pub fn state_of(&self, devices: &[(usize, u64)]) -> usize {
        let levels = self.instance.n_max as usize + 1;
        let locals: Vec<usize> = devices.iter().map(|&(b, n)| b * levels + n as usize).collect();
        self.encode(&locals)
    }

    /// Sparse transition row `P(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        let mask = self.actions[a];
        let locals = self.decode(s);
        let mut row = vec![(0usize, 1.0f64)];
        let mut stride = 1;
        for (u, k) in self.kernels.iter().enumerate() {
            let kern = &k.kernel[((mask >> u) & 1) as usize];
            let from = locals[u];
            let mut next = Vec::with_capacity(row.len() * k.local_states);
            for &(idx, p) in &row {
                for to in 0..k.local_states {
                    let q = kern[from * k.local_states + to];
                    if q > 0.0 {
                        next.push((idx + to * stride, p * q));
                    }
                }
            }
            row = next;
            stride *= k.local_states;
        }
        row
    }

    /// `(P_a h)(s)` for every state `s`, by contracting one device at a time.
    pub fn expected_next(&self, a: usize, h: &[f64]) -> Vec<f64> {
        let mask = self.actions[a];
        let mut cur = h.to_vec();
        let mut inner = 1;
        for (u, k) in self.kernels.iter().enumerate() {
            let kern = &k.kernel[((mask >> u) & 1) as usize];
            let l = k.local_states;
            let outer = self.num_states / (inner * l);
            let mut next = vec![0.0; self.num_states];
            for o in 0..outer {
                for i in 0..inner {
                    for from in 0..l {
                        let mut acc = 0.0;
                        for to in 0..l {
                            acc += kern[from * l + to] * cur[(o * l + to) * inner + i];
                        }
                        next[(o * l + from) * inner + i] = acc;
                    }
                }
            }
            cur = next;
            inner *= l;
        }
        cur
    }

    /// `x P_a` (row vector times kernel), restricted to the mass in `x`.
    fn propagate(&self, a: usize, x: &[f64]) -> Vec<f64> {
        let mask = self.actions[a];
        let mut cur = x.to_vec();
        let mut inner = 1;
        for (u, k) in self.kernels.iter().enumerate() {
            let kern = &k.kernel[((mask >> u) & 1) as usize];
            let l = k.local_states;
            let outer = self.num_states / (inner * l);
            let mut next = vec![0.0; self.num_states];
            for o in 0..outer {
                for i in 0..inner {
                    for from in 0..l {
                        let mass = cur[(o * l + from) * inner + i];
                        if mass == 0.0 {
                            continue;
                        }
                        for to in 0..l {
                            next[(o * l + to) * inner + i] += mass * kern[from * l + to];
                        }
                    }
                }
            }
            cur = next;
            inner *= l;
        }
        cur
    }

    /// Myopic policy: top-`W` devices by `p * (n + E[m])` (exact clipped mean).
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.num_states)
            .map(|s| {
                let locals = self.decode(s);
                let scores: Vec<f64> = locals
                    .iter()
                    .enumerate()
                    .map(|(u, &l)| self.kernels[u].score[l])
                    .collect();
                let mask = mask_of(&top_k_by_score(&scores, self.instance.capacity));
                self.action_index(mask).expect("top-k is a valid action")
            })
            .collect()
    }

    /// The action maximising the immediate expected reward (first on ties).
    pub fn myopic_policy(&self) -> Vec<usize> {
        (0..self.num_states)
            .map(|s| {
                (0..self.actions.len()).fold(0, |best, a| {
                    if self.reward(s, a) > self.reward(s, best) + 1e-15 {
                        a
                    } else {
                        best
                    }
                })
            })
            .collect()
    }
}

fn mask_of(decision: &crate::scheduler::ScheduleDecision) -> u32 {
    decision
        .indices()
        .into_iter()
        .fold(0u32, |m, i| m | (1 << i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    /// Optimal average reward per round (normalised).
    pub j_star: f64,
    /// Relative values with `v[0] = 0`.
    pub v: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub span: f64,
}

/// Mixing weight of the aperiodicity transform `P -> tau P + (1 - tau) I`.
const APERIODICITY_TAU: f64 = 0.5;

/// Relative value iteration on the span seminorm.
pub fn relative_value_iteration(model: &MdpModel, tol: f64, max_iter: usize) -> Result<ValueSolution> {
    let s_count = model.num_states;
    let a_count = model.actions.len();
    let mut h = vec![0.0; s_count];
    let mut span = f64::INFINITY;
    for iter in 1..=max_iter {
        let next: Vec<Vec<f64>> = (0..a_count).map(|a| model.expected_next(a, &h)).collect();
        let mut best = vec![f64::NEG_INFINITY; s_count];
        let mut policy = vec![0; s_count];
        for s in 0..s_count {
            for a in 0..a_count {
                let q = model.reward(s, a) + next[a][s];
                if q > best[s] + 1e-15 {
                    best[s] = q;
                    policy[s] = a;
                }
            }
        }
        let (lo, hi) = best
            .iter()
            .zip(&h)
            .map(|(b, v)| b - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        span = hi - lo;
        if span < tol {
            let base = best[0];
            return Ok(ValueSolution {
                j_star: 0.5 * (lo + hi),
                v: best.iter().map(|b| b - base).collect(),
                policy,
                iterations: iter,
                span,
            });
        }
        let base = (1.0 - APERIODICITY_TAU) * h[0] + APERIODICITY_TAU * best[0];
        for (v, b) in h.iter_mut().zip(&best) {
            *v = (1.0 - APERIODICITY_TAU) * *v + APERIODICITY_TAU * b - base;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        span,
    })
}

/// Stationary distribution of the chain induced by `policy` (lazy power
/// iteration from two different starts; disagreement means several
/// recurrent classes).
pub fn stationary_distribution(model: &MdpModel, policy: &[usize]) -> Result<Vec<f64>> {
    assert_eq!(policy.len(), model.num_states);
    let run = |mut pi: Vec<f64>| -> Vec<f64> {
        for _ in 0..200_000 {
            let mut next = vec![0.0; model.num_states];
            for a in 0..model.actions.len() {
                let part: Vec<f64> = pi
                    .iter()
                    .enumerate()
                    .map(|(s, &p)| if policy[s] == a { p } else { 0.0 })
                    .collect();
                if part.iter().all(|&p| p == 0.0) {
                    continue;
                }
                for (n, q) in next.iter_mut().zip(model.propagate(a, &part)) {
                    *n += q;
                }
            }
            let mut delta = 0.0;
            for (p, n) in pi.iter_mut().zip(&next) {
                let lazy = 0.5 * (*p + n);
                delta += (lazy - *p).abs();
                *p = lazy;
            }
            if delta < 1e-15 {
                break;
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter().map(|p| p / total).collect()
    };
    let n = model.num_states;
    let uniform = run(vec![1.0 / n as f64; n]);
    let mut corner = vec![0.0; n];
    corner[n - 1] = 1.0;
    let from_corner = run(corner);
    let gap: f64 = uniform.iter().zip(&from_corner).map(|(a, b)| (a - b).abs()).sum();
    if gap > 1e-9 {
        return Err(Error::SingularChain);
    }
    Ok(uniform)
}

/// Long-run average (normalised) reward of a stationary policy.
pub fn evaluate_policy(model: &MdpModel, policy: &[usize]) -> Result<f64> {
    let pi = stationary_distribution(model, policy)?;
    Ok(pi
        .iter()
        .enumerate()
        .map(|(s, p)| p * model.reward(s, policy[s]))
        .sum())
}

/// Result of solving one instance and comparing the greedy policy against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub num_states: usize,
    pub num_actions: usize,
    pub j_star: f64,
    pub j_greedy: f64,
    pub greedy_gap: f64,
    /// `J*` in effectivity-score units.
    pub j_star_effectivity: f64,
    pub iterations: usize,
    pub policy_disagreements: usize,
}

pub fn solve(instance: &SmallInstance, tol: f64, max_iter: usize) -> Result<(MdpModel, ValueSolution, OracleReport)> {
    let model = build_mdp(instance)?;
    let solution = relative_value_iteration(&model, tol, max_iter)?;
    let greedy = model.greedy_policy();
    let j_greedy = evaluate_policy(&model, &greedy)?;
    let disagreements = greedy
        .iter()
        .zip(&solution.policy)
        .filter(|(a, b)| a != b)
        .count();
    let report = OracleReport {
        num_states: model.num_states(),
        num_actions: model.num_actions(),
        j_star: solution.j_star,
        j_greedy,
        greedy_gap: solution.j_star - j_greedy,
        j_star_effectivity: instance.denormalize_reward(solution.j_star),
        iterations: solution.iterations,
        policy_disagreements: disagreements,
    };
    Ok((model, solution, report))
}

/// Simulator of the discretised network, for running schedulers against the
/// exact model (regret with known `J*`).
#[derive(Debug, Clone)]
pub struct OracleEnv<'a> {
    model: &'a MdpModel,
    state: usize,
    round: u64,
    pmfs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleStep {
    /// Expected normalised reward `r(s, a)` of the state-action pair taken.
    pub expected_reward: f64,
    /// Realised normalised reward.
    pub realized_reward: f64,
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl<'a> OracleEnv<'a> {
    /// Starts from empty backlogs and freshly drawn gain bins.
    pub fn new<R: Rng + ?Sized>(model: &'a MdpModel, rng: &mut R) -> Self {
        let inst = &model.instance;
        let start: Vec<(usize, u64)> = inst
            .devices
            .iter()
            .map(|d| {
                let probs: Vec<f64> = d.bins.iter().map(|b| b.probability).collect();
                (draw_index(&probs, rng), 0)
            })
            .collect();
        let pmfs = inst
            .devices
            .iter()
            .map(|d| clipped_poisson_pmf(d.rate, inst.m_max))
            .collect();
        Self {
            model,
            state: model.state_of(&start),
            round: 0,
            pmfs,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Runs one round with `scheduler` choosing the action.
    pub fn step<R: Rng + ?Sized>(&mut self, scheduler: &mut dyn Scheduler, rng: &mut R) -> Result<OracleStep> {
        let inst = &self.model.instance;
        let devs = self.model.device_states(self.state);
        self.round += 1;
        let obs = ObservedState {
            round: self.round,
            gains: devs
                .iter()
                .zip(&inst.devices)
                .map(|(&(b, _), d)| ChannelGain::new(d.bins[b].representative_gain).expect("valid"))
                .collect(),
            success_probs: devs
                .iter()
                .zip(&inst.devices)
                .map(|(&(b, _), d)| d.bins[b].success_prob)
                .collect(),
            backlog: Some(devs.iter().map(|&(_, n)| n).collect()),
        };
        let decision = scheduler.decide(&obs, inst.capacity)?;
        decision.validate(inst.capacity)?;
        let mask = mask_of(&decision);
        let a = self
            .model
            .action_index(mask)
            .ok_or(Error::InvalidSchedule {
                selected: decision.count(),
                capacity: inst.capacity,
            })?;
        let expected_reward = self.model.reward(self.state, a);

        let mut next = Vec::with_capacity(devs.len());
        let mut delivered = vec![false; devs.len()];
        let mut reported = vec![None; devs.len()];
        let mut n_plus_m = Vec::with_capacity(devs.len());
        for (u, (&(b, n), dev)) in devs.iter().zip(&inst.devices).enumerate() {
            let m = draw_index(&self.pmfs[u], rng) as u64;
            let ok = rng.random::<f64>() < dev.bins[b].success_prob;
            let scheduled = decision.is_scheduled(u);
            delivered[u] = scheduled && ok;
            n_plus_m.push(n + m);
            let n_next = if delivered[u] {
                reported[u] = Some(n + m);
                0
            } else {
                (n + m).min(inst.n_max)
            };
            let probs: Vec<f64> = dev.bins.iter().map(|b| b.probability).collect();
            next.push((draw_index(&probs, rng), n_next));
        }
        let f = crate::scheduler::effectivity_score(&n_plus_m, decision.mask(), &delivered, inst.gamma);
        self.state = self.model.state_of(&next);
        scheduler.observe(&RoundFeedback {
            round: self.round,
            scheduled: decision.mask().to_vec(),
            delivered,
            reported,
            next_backlog: Some(next.iter().map(|&(_, n)| n).collect()),
        });
        Ok(OracleStep {
            expected_reward,
            realized_reward: inst.normalize_reward(f),
        })
    }
}

//! Scheduler interface, the effectivity score, and the non-Bayesian policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelGain;
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_CAPACITY: usize = 5;

/// What the AP sees at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedState {
    /// 1-based round index.
    pub round: u64,
    pub gains: Vec<ChannelGain>,
    /// Delivery probability implied by each gain under the known PER curve.
    pub success_probs: Vec<f64>,
    /// Per-device backlog `n` in shards; `None` in the partially observable network.
    pub backlog: Option<Vec<u64>>,
}

impl ObservedState {
    pub fn num_devices(&self) -> usize {
        self.gains.len()
    }
}

/// What the AP learns once the round's transmissions are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundFeedback {
    pub round: u64,
    pub scheduled: Vec<bool>,
    pub delivered: Vec<bool>,
    /// `n + m` carried by each delivered update.
    pub reported: Vec<Option<u64>>,
    /// Backlog at the start of the next round, when observable.
    pub next_backlog: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDecision {
    scheduled: Vec<bool>,
    constraint_exempt: bool,
}

impl ScheduleDecision {
    pub fn from_mask(scheduled: Vec<bool>) -> Self {
        Self {
            scheduled,
            constraint_exempt: false,
        }
    }

    pub fn from_indices(num_devices: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut scheduled = vec![false; num_devices];
        for i in indices {
            scheduled[i] = true;
        }
        Self::from_mask(scheduled)
    }

    /// Schedules every device; exempt from the capacity constraint.
    pub fn all(num_devices: usize) -> Self {
        Self {
            scheduled: vec![true; num_devices],
            constraint_exempt: true,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.scheduled
    }

    pub fn into_mask(self) -> Vec<bool> {
        self.scheduled
    }

    pub fn is_scheduled(&self, device: usize) -> bool {
        self.scheduled[device]
    }

    pub fn count(&self) -> usize {
        self.scheduled.iter().filter(|&&a| a).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.scheduled.len()).filter(|&i| self.scheduled[i]).collect()
    }

    pub fn constraint_exempt(&self) -> bool {
        self.constraint_exempt
    }

    /// Checks `sum(a) == capacity` unless exempt.
    pub fn validate(&self, capacity: usize) -> Result<()> {
        if !self.constraint_exempt && self.count() != capacity {
            return Err(Error::InvalidSchedule {
                selected: self.count(),
                capacity,
            });
        }
        Ok(())
    }
}

/// Effectivity score: delivered sample mass minus `gamma` times the undelivered mass.
pub fn effectivity_score(n_plus_m: &[u64], scheduled: &[bool], delivered: &[bool], gamma: f64) -> f64 {
    let mut gain = 0.0;
    let mut penalty = 0.0;
    for ((&s, &a), &x) in n_plus_m.iter().zip(scheduled).zip(delivered) {
        debug_assert!(a || !x, "delivery without scheduling");
        if a && x {
            gain += s as f64;
        } else {
            penalty += s as f64;
        }
    }
    gain - gamma * penalty
}

/// The same score written as `sum a x (1+gamma)(n+m) - gamma sum (n+m)`.
pub fn effectivity_score_rearranged(
    n_plus_m: &[u64],
    scheduled: &[bool],
    delivered: &[bool],
    gamma: f64,
) -> f64 {
    n_plus_m
        .iter()
        .zip(scheduled)
        .zip(delivered)
        .map(|((&s, &a), &x)| {
            let s = s as f64;
            let ax = if a && x { 1.0 } else { 0.0 };
            ax * (1.0 + gamma) * s - gamma * s
        })
        .sum()
}

/// Top-`capacity` devices by `score`, ties to the lowest index.
pub fn top_k_by_score(scores: &[f64], capacity: usize) -> ScheduleDecision {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ScheduleDecision::from_indices(scores.len(), order.into_iter().take(capacity))
}

/// Greedy scores `p_u * (n_u + theta_u)`: expected delivered samples this round.
pub fn greedy_scores(backlog: &[f64], rates: &[f64], success_probs: &[f64]) -> Vec<f64> {
    backlog
        .iter()
        .zip(rates)
        .zip(success_probs)
        .map(|((&n, &theta), &p)| p * (n + theta))
        .collect()
}

/// Myopic policy maximising the expected effectivity score of the current round.
pub fn greedy_policy(backlog: &[f64], rates: &[f64], success_probs: &[f64], capacity: usize) -> ScheduleDecision {
    assert_eq!(backlog.len(), rates.len());
    assert_eq!(backlog.len(), success_probs.len());
    top_k_by_score(&greedy_scores(backlog, rates, success_probs), capacity)
}

/// Devices `(round * W + j) mod U` for `j < W`, with `round` starting at 0.
pub fn round_robin(round: u64, num_devices: usize, capacity: usize) -> ScheduleDecision {
    let u = num_devices as u64;
    let start = (round % u) * capacity as u64 % u;
    ScheduleDecision::from_indices(
        num_devices,
        (0..capacity as u64).map(|j| ((start + j) % u) as usize),
    )
}

/// The `capacity` strongest channels, ties to the lowest index.
pub fn w_max(gains: &[ChannelGain], capacity: usize) -> ScheduleDecision {
    let scores: Vec<f64> = gains.iter().map(|g| g.linear()).collect();
    top_k_by_score(&scores, capacity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "bench")]
    Bench,
    #[serde(rename = "rr")]
    RoundRobin,
    #[serde(rename = "wmax")]
    WMax,
    #[serde(rename = "alsa-pi")]
    AlsaPi,
    #[serde(rename = "balsa")]
    Balsa,
    #[serde(rename = "balsa-po")]
    BalsaPo,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::Bench,
        SchedulerKind::RoundRobin,
        SchedulerKind::WMax,
        SchedulerKind::AlsaPi,
        SchedulerKind::Balsa,
        SchedulerKind::BalsaPo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Bench => "bench",
            SchedulerKind::RoundRobin => "rr",
            SchedulerKind::WMax => "wmax",
            SchedulerKind::AlsaPi => "alsa-pi",
            SchedulerKind::Balsa => "balsa",
            SchedulerKind::BalsaPo => "balsa-po",
        }
    }

    /// Whether the scheduler reads the per-device backlog.
    pub fn needs_backlog(self) -> bool {
        matches!(self, SchedulerKind::AlsaPi | SchedulerKind::Balsa)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "scheduler.name",
                    format!("unknown scheduler `{s}` (expected bench|rr|wmax|alsa-pi|balsa|balsa-po)"),
                )
            })
    }
}

/// A transmission scheduler bound to one simulation instance.
pub trait Scheduler: Send {
    fn kind(&self) -> SchedulerKind;

    fn decide(&mut self, state: &ObservedState, capacity: usize) -> Result<ScheduleDecision>;

    fn observe(&mut self, _feedback: &RoundFeedback) {}

    /// Bench runs on an idealised link: every scheduled update is delivered.
    fn forces_delivery(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bench;

impl Scheduler for Bench {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::Bench
    }

    fn decide(&mut self, state: &ObservedState, _capacity: usize) -> Result<ScheduleDecision> {
        Ok(ScheduleDecision::all(state.num_devices()))
    }

    fn forces_delivery(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    next_round: u64,
}

impl Scheduler for RoundRobin {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::RoundRobin
    }

    fn decide(&mut self, state: &ObservedState, capacity: usize) -> Result<ScheduleDecision> {
        let decision = round_robin(self.next_round, state.num_devices(), capacity);
        self.next_round += 1;
        Ok(decision)
    }
}

#[derive(Debug, Clone, Default)]
pub struct WMax;

impl Scheduler for WMax {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::WMax
    }

    fn decide(&mut self, state: &ObservedState, capacity: usize) -> Result<ScheduleDecision> {
        Ok(w_max(&state.gains, capacity))
    }
}

/// Greedy policy with the true arrival rates.
#[derive(Debug, Clone)]
pub struct AlsaPi {
    rates: Vec<f64>,
}

impl AlsaPi {
    pub fn new(true_rates: Vec<f64>) -> Self {
        Self { rates: true_rates }
    }
}

pub fn alsa_pi(state: &ObservedState, true_rates: &[f64], capacity: usize) -> Result<ScheduleDecision> {
    let backlog = state
        .backlog
        .as_ref()
        .ok_or_else(|| Error::MissingStateInfo(SchedulerKind::AlsaPi.name().into()))?;
    let n: Vec<f64> = backlog.iter().map(|&v| v as f64).collect();
    Ok(greedy_policy(&n, true_rates, &state.success_probs, capacity))
}

impl Scheduler for AlsaPi {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::AlsaPi
    }

    fn decide(&mut self, state: &ObservedState, capacity: usize) -> Result<ScheduleDecision> {
        alsa_pi(state, &self.rates, capacity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gains(v: &[f64]) -> Vec<ChannelGain> {
        v.iter().map(|&g| ChannelGain::new(g).unwrap()).collect()
    }

    #[test]
    fn greedy_example() {
        // n + theta = (2, 10, 1) with n = 0
        let d = greedy_policy(&[0.0, 0.0, 0.0], &[2.0, 10.0, 1.0], &[0.9, 0.5, 0.99], 1);
        assert_eq!(d.indices(), vec![1]);
        let scores = greedy_scores(&[0.0, 0.0, 0.0], &[2.0, 10.0, 1.0], &[0.9, 0.5, 0.99]);
        assert!((scores[0] - 1.8).abs() < 1e-12 && (scores[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_saturation_and_ties() {
        let d = greedy_policy(&[5.0, 0.0, 1.0], &[1.0; 3], &[0.1, 0.9, 0.2], 3);
        assert_eq!(d.count(), 3);
        let d = greedy_policy(&[1.0; 5], &[1.0; 5], &[0.5; 5], 2);
        assert_eq!(d.indices(), vec![0, 1]);
    }

    #[test]
    fn round_robin_examples() {
        assert_eq!(round_robin(0, 25, 5).indices(), vec![0, 1, 2, 3, 4]);
        assert_eq!(round_robin(1, 25, 5).indices(), vec![5, 6, 7, 8, 9]);
        assert_eq!(round_robin(5, 25, 5).indices(), vec![0, 1, 2, 3, 4]);
        let mut counts = [0; 25];
        for r in 0..5 {
            for i in round_robin(r, 25, 5).indices() {
                counts[i] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 1));
        // W not dividing U still schedules W distinct devices
        assert_eq!(round_robin(1, 7, 3).indices(), vec![3, 4, 5]);
        assert_eq!(round_robin(2, 7, 3).indices(), vec![0, 1, 6]);
    }

    #[test]
    fn w_max_examples() {
        assert_eq!(w_max(&gains(&[1.0, 5.0, 3.0, 4.0]), 2).indices(), vec![1, 3]);
        assert_eq!(w_max(&gains(&[2.0; 4]), 2).indices(), vec![0, 1]);
    }

    #[test]
    fn bench_schedules_everyone() {
        let state = ObservedState {
            round: 1,
            gains: gains(&[0.0, 1.0, 2.0]),
            success_probs: vec![0.0, 0.5, 1.0],
            backlog: None,
        };
        let d = Bench.decide(&state, 1).unwrap();
        assert_eq!(d.count(), 3);
        assert!(d.constraint_exempt());
        assert!(d.validate(1).is_ok());
        assert!(ScheduleDecision::from_indices(3, [0]).validate(2).is_err());
    }

    #[test]
    fn alsa_pi_needs_backlog() {
        let mut state = ObservedState {
            round: 1,
            gains: gains(&[1.0]),
            success_probs: vec![0.3],
            backlog: None,
        };
        let mut s = AlsaPi::new(vec![1.0]);
        assert!(matches!(s.decide(&state, 1), Err(Error::MissingStateInfo(_))));
        state.backlog = Some(vec![4]);
        assert_eq!(s.decide(&state, 1).unwrap().indices(), vec![0]);
    }

    #[test]
    fn effectivity_examples() {
        assert_eq!(effectivity_score(&[4, 6], &[true, true], &[true, true], 0.01), 10.0);
        let f = effectivity_score(&[4, 6], &[true, true], &[true, false], 0.01);
        assert!((f - 3.94).abs() < 1e-12);
    }

    #[test]
    fn scheduler_names_round_trip() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("greedy".parse::<SchedulerKind>().is_err());
    }

    proptest! {
        #[test]
        fn score_rescaling_keeps_selection(
            scores in proptest::collection::vec(0.0f64..100.0, 1..20),
            scale in 0.01f64..100.0,
            w in 1usize..20,
        ) {
            let w = w.min(scores.len());
            let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
            let a = top_k_by_score(&scores, w);
            let b = top_k_by_score(&scaled, w);
            // rescaling can merge near-ties through rounding; compare selected scores
            let sa: f64 = a.indices().iter().map(|&i| scores[i]).sum();
            let sb: f64 = b.indices().iter().map(|&i| scores[i]).sum();
            prop_assert!((sa - sb).abs() <= 1e-9 * sa.abs().max(1.0));
            prop_assert_eq!(a.count(), w);
        }

        #[test]
        fn raising_backlog_never_unschedules(
            n in proptest::collection::vec(0u64..50, 2..12),
            rates in proptest::collection::vec(0.1f64..10.0, 12),
            probs in proptest::collection::vec(0.0f64..1.0, 12),
            pick in 0usize..12,
            bump in 1u64..50,
            w in 1usize..12,
        ) {
            let u = n.len();
            let w = w.min(u);
            let pick = pick % u;
            let nf: Vec<f64> = n.iter().map(|&v| v as f64).collect();
            let before = greedy_policy(&nf, &rates[..u], &probs[..u], w);
            let mut bumped = nf.clone();
            bumped[pick] += bump as f64;
            let after = greedy_policy(&bumped, &rates[..u], &probs[..u], w);
            if before.is_scheduled(pick) {
                prop_assert!(after.is_scheduled(pick));
            }
            prop_assert_eq!(after.count(), w);
        }

        #[test]
        fn effectivity_forms_agree(
            cases in proptest::collection::vec((0u64..1000, any::<bool>(), any::<bool>()), 1..30),
            gamma in 0.0f64..1.0,
        ) {
            let s: Vec<u64> = cases.iter().map(|c| c.0).collect();
            let a: Vec<bool> = cases.iter().map(|c| c.1).collect();
            let x: Vec<bool> = cases.iter().map(|c| c.1 && c.2).collect();
            let f1 = effectivity_score(&s, &a, &x, gamma);
            let f2 = effectivity_score_rearranged(&s, &a, &x, gamma);
            prop_assert!((f1 - f2).abs() <= 1e-9 * f1.abs().max(1.0));
        }
    }
}

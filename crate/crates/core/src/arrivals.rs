//! Per-device data arrivals: Poisson shard counts per round and the buffer of
//! shards that have arrived but not yet been delivered to the AP.
//!
//! All scheduler-facing quantities (n, m, N, effectivity score) are counted in
//! shards. Only the learner looks inside a shard.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::SyntheticTask;

pub const DEFAULT_M_MAX: u32 = 64;
pub const DEFAULT_SHARD_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalParams {
    rate: f64,
    shard_size: usize,
}

impl ArrivalParams {
    pub fn new(rate_shards_per_round: f64, shard_size: usize) -> Result<Self> {
        if !(rate_shards_per_round.is_finite() && rate_shards_per_round > 0.0) {
            return Err(Error::config(
                "rate",
                format!("arrival rate must be positive, got {rate_shards_per_round}"),
            ));
        }
        if shard_size == 0 {
            return Err(Error::config("shard_size", "must be at least 1"));
        }
        Ok(Self {
            rate: rate_shards_per_round,
            shard_size,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn shard_size(&self) -> usize {
        self.shard_size
    }
}

/// Shards arrived in one round: a Poisson draw clipped at `m_max`.
pub fn sample_arrivals<R: Rng + ?Sized>(params: &ArrivalParams, m_max: u32, rng: &mut R) -> u32 {
    let poisson = Poisson::new(params.rate).expect("rate validated at construction");
    let draw: f64 = poisson.sample(rng);
    (draw as u64).min(u64::from(m_max)) as u32
}

/// Probability mass of the clipped Poisson: `P[min(Poisson(rate), m_max) = k]`.
pub fn clipped_poisson_pmf(rate: f64, m_max: u32) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(m_max as usize + 1);
    let mut term = (-rate).exp();
    let mut below = 0.0;
    for k in 0..m_max {
        pmf.push(term);
        below += term;
        term *= rate / f64::from(k + 1);
    }
    pmf.push((1.0 - below).max(0.0));
    pmf
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Shard {
    pub samples: Vec<Sample>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn generate_shard<R: Rng + ?Sized>(task: &SyntheticTask, shard_size: usize, rng: &mut R) -> Shard {
    Shard {
        samples: (0..shard_size).map(|_| task.draw_sample(rng)).collect(),
    }
}

/// Shards that arrived since the device's last successful delivery.
#[derive(Debug, Clone, Default)]
pub struct ShardBuffer {
    pending: VecDeque<Shard>,
    total_pending_samples: usize,
}

impl ShardBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, shard: Shard) {
        self.total_pending_samples += shard.len();
        self.pending.push_back(shard);
    }

    /// Drops the oldest shards until at most `max_shards` remain.
    pub fn truncate_oldest(&mut self, max_shards: usize) {
        while self.pending.len() > max_shards {
            if let Some(old) = self.pending.pop_front() {
                self.total_pending_samples -= old.len();
            }
        }
    }

    pub fn drain(&mut self) -> Vec<Shard> {
        self.total_pending_samples = 0;
        self.pending.drain(..).collect()
    }

    pub fn shard_count(&self) -> usize {
        self.pending.len()
    }

    pub fn total_pending_samples(&self) -> usize {
        self.total_pending_samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &Shard> {
        self.pending.iter()
    }
}

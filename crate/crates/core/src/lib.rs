//! Learning-aware transmission scheduling for asynchronous federated learning
//! in a wireless distributed learning network (one access point, `U` devices,
//! `W` uplink slots per round).
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] draws Rayleigh/pathloss channel gains and turns them into
//!   delivery probabilities through a packet-error model.
//! * [`arrivals`] draws Poisson shard arrivals and keeps each device's
//!   pending-shard buffer.
//! * [`learner`] is a small softmax-regression learner on a synthetic
//!   Gaussian-mixture task.
//! * [`engine`] runs one round of asynchronous FL: scheduling, local update,
//!   aggregation and the per-device bookkeeping.
//! * [`scheduler`] holds the scheduler interface and the non-Bayesian
//!   policies (Bench, round robin, W-max, greedy / ALSA-PI); [`bayes`] holds
//!   the posterior-sampling schedulers BALSA and BALSA-PO.
//! * [`oracle`] builds the exact finite MDP for tiny instances and solves it
//!   with relative value iteration.
//! * [`harness`] drives seeded multi-instance experiments and writes CSV/JSON
//!   outputs.

pub mod arrivals;
pub mod bayes;
pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod learner;
pub mod oracle;
pub mod rng;
pub mod scheduler;

pub use error::{Error, Result};

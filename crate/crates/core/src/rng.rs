//! Seed derivation for independent random sub-streams.
//!
//! Every consumer of randomness (a device's channel, a device's arrivals, a
//! scheduler's posterior draws, ...) gets its own ChaCha stream keyed by
//! `(base_seed, instance, device, purpose)`. Two runs that differ only in the
//! scheduler therefore see the same channel and arrival realisations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    Arrivals = 2,
    Delivery = 3,
    ShardData = 4,
    LocalSgd = 5,
    Scheduler = 6,
    TestSet = 7,
    Init = 8,
}

/// Device slot used for streams that are not tied to a device.
pub const NO_DEVICE: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base_seed: u64, instance: u64, device: u64, purpose: Purpose) -> u64 {
    [instance, device, purpose as u64]
        .into_iter()
        .fold(splitmix64(base_seed), |acc, word| splitmix64(acc ^ splitmix64(word)))
}

pub fn stream(base_seed: u64, instance: u64, device: u64, purpose: Purpose) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base_seed, instance, device, purpose))
}

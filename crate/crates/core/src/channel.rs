//! Uplink channel: Rayleigh block fading on top of log-distance pathloss, and
//! the packet-error model that maps an SNR to a delivery probability.
//!
//! Interference is not modelled (scheduled devices use orthogonal resources),
//! so the SINR of the packet-error model is the plain SNR.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TX_POWER_DBM: f64 = 23.0;
pub const DEFAULT_NOISE_POWER_DBM: f64 = -96.0;
pub const DEFAULT_PACKET_BITS: u32 = 4096;

/// Large-scale pathloss in dB for a distance in km.
pub fn pathloss_db(distance_km: f64) -> f64 {
    128.1 + 37.6 * distance_km.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    distance_km: f64,
    tx_power_dbm: f64,
    noise_power_dbm: f64,
    packet_bits: u32,
}

impl ChannelParams {
    pub fn new(
        distance_km: f64,
        tx_power_dbm: f64,
        noise_power_dbm: f64,
        packet_bits: u32,
    ) -> Result<Self> {
        if !(distance_km.is_finite() && distance_km > 0.0) {
            return Err(Error::config(
                "distance_km",
                format!("must be positive, got {distance_km}"),
            ));
        }
        if !tx_power_dbm.is_finite() || !noise_power_dbm.is_finite() {
            return Err(Error::config("tx_power_dbm/noise_power_dbm", "must be finite"));
        }
        if packet_bits == 0 {
            return Err(Error::config("packet_bits", "must be at least 1"));
        }
        Ok(Self {
            distance_km,
            tx_power_dbm,
            noise_power_dbm,
            packet_bits,
        })
    }

    /// Paper-default radio budget (23 dBm transmit, -96 dBm noise, 4096-bit packets).
    pub fn with_distance(distance_km: f64) -> Result<Self> {
        Self::new(
            distance_km,
            DEFAULT_TX_POWER_DBM,
            DEFAULT_NOISE_POWER_DBM,
            DEFAULT_PACKET_BITS,
        )
    }

    pub fn distance_km(&self) -> f64 {
        self.distance_km
    }

    pub fn tx_power_dbm(&self) -> f64 {
        self.tx_power_dbm
    }

    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_power_dbm
    }

    pub fn packet_bits(&self) -> u32 {
        self.packet_bits
    }

    /// Mean (fading-averaged) linear power gain.
    pub fn mean_gain(&self) -> f64 {
        10f64.powf(-pathloss_db(self.distance_km) / 10.0)
    }

    /// Linear SNR per unit of channel gain.
    pub fn snr_scale(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - self.noise_power_dbm) / 10.0)
    }
}

/// Linear power gain `h` of one device in one round.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct ChannelGain(f64);

impl ChannelGain {
    pub fn new(gain_linear: f64) -> Result<Self> {
        if gain_linear.is_nan() || gain_linear < 0.0 {
            return Err(Error::config("gain_linear", "must be nonnegative"));
        }
        Ok(Self(gain_linear))
    }

    pub fn linear(self) -> f64 {
        self.0
    }
}

/// Gain for a given small-scale fading power `fading` (unit-mean exponential).
pub fn gain_from_fading(params: &ChannelParams, fading: f64) -> ChannelGain {
    ChannelGain(fading.max(0.0) * params.mean_gain())
}

/// Fresh gain draw: unit-mean exponential fading times the pathloss gain.
pub fn sample_gain<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> ChannelGain {
    let fading: f64 = rng.sample(Exp1);
    gain_from_fading(params, fading)
}

pub fn snr_linear(gain: ChannelGain, params: &ChannelParams) -> f64 {
    gain.0 * params.snr_scale()
}

/// Gaussian tail function `Q(x) = P[N(0,1) > x]`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Mapping from SNR to the probability that a local-update packet arrives intact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkModel {
    /// Uncoded BPSK, bit error rate `Q(sqrt(2 snr))`, packet success `(1 - ber)^bits`.
    #[default]
    BpskUncoded,
    /// Waterfall curve `PER = 1 / (1 + exp(slope_per_db * (snr_db - midpoint_db)))`,
    /// independent of packet length. Emulates a coded link.
    Logistic { slope_per_db: f64, midpoint_db: f64 },
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LinkModel::BpskUncoded => Ok(()),
            LinkModel::Logistic {
                slope_per_db,
                midpoint_db,
            } => {
                if !(slope_per_db.is_finite() && slope_per_db > 0.0) || !midpoint_db.is_finite() {
                    Err(Error::config(
                        "channel.ber_model",
                        "logistic model needs a positive slope and a finite midpoint",
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn bit_error_rate(&self, snr: f64) -> Option<f64> {
        match self {
            LinkModel::BpskUncoded => Some(q_function((2.0 * snr.max(0.0)).sqrt())),
            LinkModel::Logistic { .. } => None,
        }
    }

    pub fn success_probability(&self, snr: f64, packet_bits: u32) -> f64 {
        let snr = snr.max(0.0);
        match *self {
            LinkModel::BpskUncoded => {
                let ber = q_function((2.0 * snr).sqrt());
                packet_success_from_ber(ber, packet_bits)
            }
            LinkModel::Logistic {
                slope_per_db,
                midpoint_db,
            } => {
                if snr == 0.0 {
                    return 0.0;
                }
                let snr_db = 10.0 * snr.log10();
                let per = 1.0 / (1.0 + (slope_per_db * (snr_db - midpoint_db)).exp());
                (1.0 - per).clamp(0.0, 1.0)
            }
        }
    }

    /// Delivery probability for a device with the given gain.
    pub fn gain_success_probability(&self, gain: ChannelGain, params: &ChannelParams) -> f64 {
        self.success_probability(snr_linear(gain, params), params.packet_bits())
    }
}

/// `(1 - ber)^bits`, evaluated in log space.
pub fn packet_success_from_ber(ber: f64, packet_bits: u32) -> f64 {
    let ber = ber.clamp(0.0, 1.0);
    if ber >= 1.0 {
        return 0.0;
    }
    (f64::from(packet_bits) * (-ber).ln_1p()).exp().clamp(0.0, 1.0)
}

/// One Bernoulli delivery draw; `true` means the update reached the AP.
pub fn sample_transmission<R: Rng + ?Sized>(success_prob: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < success_prob
}

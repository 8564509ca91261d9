//! Channel profiles and the lossy wireless link model.
//!
//! Profile presets carry the ITU capability figures for the three 5G service
//! classes. The delay model is serialization (payload bits over uplink
//! capacity, floor microseconds) plus a propagation delay drawn uniformly
//! from `[budget/2, budget)` microseconds, so a delivery never leaves the
//! profile's latency budget. The uniform draw is a stand-in; only the upper
//! bound is contractual.

use crate::rng::stream_rng;
use crate::time::SimTime;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three ITU capability classes plus free-form custom profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Embb,
    Urllc,
    Mmtc,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: ProfileKind,
    pub downlink_capacity_bps: u64,
    pub uplink_capacity_bps: u64,
    pub per_user_rate_bps: u64,
    pub latency_budget_us: u64,
    pub loss_probability: f64,
    pub device_density_per_km2: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("channel profile {field} out of range: {message}")]
    InvalidProfile {
        field: &'static str,
        message: String,
    },
    #[error("link {0} is down")]
    LinkDown(String),
}

impl ChannelProfile {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("downlink_capacity_bps", self.downlink_capacity_bps),
            ("uplink_capacity_bps", self.uplink_capacity_bps),
            ("latency_budget_us", self.latency_budget_us),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ChannelError::InvalidProfile {
                    field,
                    message: "must be > 0".into(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(ChannelError::InvalidProfile {
                field: "loss_probability",
                message: format!("{} not in [0, 1]", self.loss_probability),
            });
        }
        Ok(())
    }
}

/// Preset constants for the ITU capability classes.
///
/// eMBB: 20 Gbit/s down (100 Mbit/s per user), 10 Gbit/s up, 4 ms budget.
/// URLLC: 1 ms budget.
/// mMTC: 1,000,000 devices per km2.
pub fn make_profile(kind: ProfileKind) -> ChannelProfile {
    match kind {
        ProfileKind::Embb => ChannelProfile {
            name: ProfileKind::Embb,
            downlink_capacity_bps: 20_000_000_000,
            uplink_capacity_bps: 10_000_000_000,
            per_user_rate_bps: 100_000_000,
            latency_budget_us: 4_000,
            loss_probability: 0.0,
            device_density_per_km2: 10_000,
        },
        ProfileKind::Urllc => ChannelProfile {
            name: ProfileKind::Urllc,
            downlink_capacity_bps: 10_000_000_000,
            uplink_capacity_bps: 10_000_000_000,
            per_user_rate_bps: 10_000_000,
            latency_budget_us: 1_000,
            loss_probability: 0.0,
            device_density_per_km2: 10_000,
        },
        ProfileKind::Mmtc => ChannelProfile {
            name: ProfileKind::Mmtc,
            downlink_capacity_bps: 10_000_000,
            uplink_capacity_bps: 1_000_000,
            per_user_rate_bps: 10_000,
            latency_budget_us: 10_000,
            loss_probability: 0.0,
            device_density_per_km2: 1_000_000,
        },
        ProfileKind::Custom => ChannelProfile {
            name: ProfileKind::Custom,
            downlink_capacity_bps: 1_000_000_000,
            uplink_capacity_bps: 1_000_000_000,
            per_user_rate_bps: 1_000_000,
            latency_budget_us: 10_000,
            loss_probability: 0.0,
            device_density_per_km2: 10_000,
        },
    }
}

/// One wireless interface with its own quality profile and random stream.
pub struct Link {
    pub id: String,
    pub channel: String,
    pub profile: ChannelProfile,
    pub up: bool,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransmitOutcome {
    Delivered { at: SimTime },
    Lost,
}

impl Link {
    pub fn new(id: &str, channel: &str, profile: ChannelProfile, scenario_seed: u64) -> Self {
        let rng = stream_rng(scenario_seed, &format!("link:{id}"));
        Link {
            id: id.to_string(),
            channel: channel.to_string(),
            profile,
            up: true,
            rng,
        }
    }

    /// Attempt one packet transmission at `now`.
    ///
    /// The outcome is decided at send time: a delivered packet arrives at
    /// `now + serialization + propagation` regardless of later link state, a
    /// lost one never arrives.
    pub fn transmit(
        &mut self,
        payload_bytes: usize,
        now: SimTime,
    ) -> Result<TransmitOutcome, ChannelError> {
        if !self.up {
            return Err(ChannelError::LinkDown(self.id.clone()));
        }
        if self.rng.random::<f64>() < self.profile.loss_probability {
            return Ok(TransmitOutcome::Lost);
        }
        let bits = payload_bytes as u64 * 8;
        let serialization_us = bits * 1_000_000 / self.profile.uplink_capacity_bps;
        let budget = self.profile.latency_budget_us;
        let propagation_us = if budget <= 1 {
            0
        } else {
            self.rng.random_range(budget / 2..budget)
        };
        Ok(TransmitOutcome::Delivered {
            at: now + serialization_us + propagation_us,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossy_link(loss: f64) -> Link {
        let mut p = make_profile(ProfileKind::Embb);
        p.loss_probability = loss;
        Link::new("l0", "A", p, 17)
    }

    #[test]
    fn preset_constants_match_itu_figures() {
        let embb = make_profile(ProfileKind::Embb);
        assert_eq!(embb.downlink_capacity_bps, 20_000_000_000);
        assert_eq!(embb.uplink_capacity_bps, 10_000_000_000);
        assert_eq!(embb.per_user_rate_bps, 100_000_000);
        assert_eq!(embb.latency_budget_us, 4_000);
        assert_eq!(make_profile(ProfileKind::Urllc).latency_budget_us, 1_000);
        assert_eq!(
            make_profile(ProfileKind::Mmtc).device_density_per_km2,
            1_000_000
        );
    }

    #[test]
    fn zero_loss_always_delivers() {
        let mut link = lossy_link(0.0);
        for _ in 0..1000 {
            let out = link.transmit(100, SimTime::ZERO).unwrap();
            assert!(matches!(out, TransmitOutcome::Delivered { .. }));
        }
    }

    #[test]
    fn certain_loss_always_loses() {
        let mut link = lossy_link(1.0);
        for _ in 0..1000 {
            assert_eq!(link.transmit(100, SimTime::ZERO).unwrap(), TransmitOutcome::Lost);
        }
    }

    #[test]
    fn empirical_loss_rate_tracks_probability() {
        // Binomial: at n=1e5, p=0.1 the sample rate lands within +-0.01
        // of p with overwhelming probability; the seed is fixed anyway.
        let mut link = lossy_link(0.1);
        let n = 100_000;
        let mut lost = 0;
        for _ in 0..n {
            if link.transmit(10, SimTime::ZERO).unwrap() == TransmitOutcome::Lost {
                lost += 1;
            }
        }
        let rate = lost as f64 / n as f64;
        assert!((rate - 0.1).abs() <= 0.01, "loss rate {rate}");
    }

    #[test]
    fn down_link_rejects_traffic() {
        let mut link = lossy_link(0.0);
        link.up = false;
        assert!(matches!(
            link.transmit(10, SimTime::ZERO),
            Err(ChannelError::LinkDown(_))
        ));
    }

    #[test]
    fn urllc_small_packets_stay_inside_budget() {
        let mut link = Link::new("u", "A", make_profile(ProfileKind::Urllc), 3);
        for _ in 0..10_000 {
            match link.transmit(125, SimTime::from_micros(50)).unwrap() {
                TransmitOutcome::Delivered { at } => {
                    let delay = at - SimTime::from_micros(50);
                    assert!(delay < 1_000, "URLLC delay {delay}us");
                }
                TransmitOutcome::Lost => unreachable!("lossless preset"),
            }
        }
    }

    #[test]
    fn profile_validation_catches_bad_ranges() {
        let mut p = make_profile(ProfileKind::Embb);
        p.loss_probability = 1.5;
        assert!(p.validate().is_err());
        let mut p = make_profile(ProfileKind::Embb);
        p.uplink_capacity_bps = 0;
        assert!(p.validate().is_err());
    }
}

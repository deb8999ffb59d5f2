//! Differential-privacy accounting for the uploaded knowledge.
//!
//! Replacing one sample of a device's dataset moves its class-`k` knowledge
//! anywhere inside the probability simplex, whose diameter is `sqrt(2)`. The
//! disclosed signal `h P1 sqrt(K) q` therefore has l2 sensitivity at most
//! `sqrt(2K) |h P1| / B`. Composing `T` Gaussian releases gives the per-round
//! noise standard deviation `Delta sqrt(2 T ln(1/delta)) / epsilon`, and
//! because the DP noise of all devices and the receiver noise superpose, the
//! requirement of every device is met iff, for each class,
//!
//! ```text
//! sum_j |h_j P2_j|^2 + sigma_n^2 >= max_i 4 T K |h_i P1_i|^2 rho_i,
//! rho_i = ln(1/delta_i) / (B_i^2 epsilon_i^2).
//! ```
//!
//! Neighbouring datasets differ by replacing one sample; `B` is the size of
//! the device's dataset. Logarithms are natural.

use alloc::vec::Vec;

use crate::channel::ChannelRealization;
use crate::transceiver::TransceiverDesign;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrivacyRequirement {
    pub epsilon: f64,
    pub delta: f64,
    pub dataset_size: u64,
}

impl PrivacyRequirement {
    pub fn new(epsilon: f64, delta: f64, dataset_size: u64) -> Result<Self> {
        let req = PrivacyRequirement { epsilon, delta, dataset_size };
        req.validate()?;
        Ok(req)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.epsilon.is_nan() {
            return Err(Error::domain("epsilon must be positive"));
        }
        if self.delta == 0.0 {
            return Err(Error::domain("delta = 0 makes the stringency infinite"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::domain("delta must lie in (0, 1]"));
        }
        if self.dataset_size == 0 {
            return Err(Error::domain("dataset size must be at least one"));
        }
        Ok(())
    }
}

/// `rho = ln(1/delta) / (B^2 epsilon^2)`; zero means no effective privacy
/// constraint.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct PrivacyStringency(f64);

impl PrivacyStringency {
    /// A device without privacy requirement.
    pub const NONE: Self = PrivacyStringency(0.0);

    pub fn from_rho(rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::domain("stringency must be finite and non-negative"));
        }
        Ok(PrivacyStringency(rho))
    }

    pub fn rho(self) -> f64 {
        self.0
    }
}

pub fn stringency(req: &PrivacyRequirement) -> Result<PrivacyStringency> {
    req.validate()?;
    let b = req.dataset_size as f64;
    let rho = libm::log(1.0 / req.delta) / (b * b * req.epsilon * req.epsilon);
    Ok(PrivacyStringency(rho))
}

/// Largest stringency over devices (0 for an empty slice).
pub fn max_stringency(stringencies: &[PrivacyStringency]) -> f64 {
    stringencies.iter().map(|s| s.0).fold(0.0, f64::max)
}

/// Upper bound on the l2 sensitivity of one class of the disclosed signal.
pub fn sensitivity_bound(h_mag_times_p1: f64, num_classes: usize, dataset_size: u64) -> Result<f64> {
    if dataset_size == 0 {
        return Err(Error::domain("dataset size must be at least one"));
    }
    if num_classes == 0 {
        return Err(Error::domain("need at least one class"));
    }
    if !(h_mag_times_p1 >= 0.0) {
        return Err(Error::domain("|h P1| must be non-negative"));
    }
    Ok(libm::sqrt(2.0 * num_classes as f64) * h_mag_times_p1 / dataset_size as f64)
}

/// Per-round Gaussian noise standard deviation that keeps `T` releases
/// `(epsilon, delta)`-private.
pub fn gaussian_sigma(sensitivity: f64, rounds: u64, req: &PrivacyRequirement) -> Result<f64> {
    req.validate()?;
    if rounds == 0 {
        return Err(Error::domain("need at least one round"));
    }
    Ok(sensitivity * libm::sqrt(2.0 * rounds as f64 * libm::log(1.0 / req.delta)) / req.epsilon)
}

/// Right-hand side of the aggregate-noise condition for one class:
/// `max_i 4 T K |h_i P1_i|^2 rho_i`. Each entry is `(|h_i P1_i|, rho_i)`.
pub fn required_aggregate_noise(rounds: u64, num_classes: usize, per_device: &[(f64, f64)]) -> Result<f64> {
    if per_device.is_empty() {
        return Err(Error::Empty("device list"));
    }
    let scale = 4.0 * rounds as f64 * num_classes as f64;
    Ok(per_device.iter().map(|&(hp1, rho)| scale * hp1 * hp1 * rho).fold(f64::NEG_INFINITY, f64::max))
}

/// Left-hand side minus right-hand side of the aggregate-noise condition,
/// per class. Non-negative iff every device's requirement holds.
pub fn dp_margin(
    design: &TransceiverDesign,
    channel: &ChannelRealization,
    rounds: u64,
    num_classes: usize,
    stringencies: &[PrivacyStringency],
) -> Result<Vec<f64>> {
    let m = channel.num_devices();
    if design.num_devices() != m {
        return Err(Error::DimensionMismatch {
            what: "design devices vs channel",
            expected: m,
            found: design.num_devices(),
        });
    }
    if stringencies.len() != m {
        return Err(Error::DimensionMismatch {
            what: "stringencies vs channel",
            expected: m,
            found: stringencies.len(),
        });
    }
    if design.num_classes() != num_classes {
        return Err(Error::DimensionMismatch {
            what: "design classes",
            expected: num_classes,
            found: design.num_classes(),
        });
    }
    (0..num_classes)
        .map(|k| {
            let received_noise =
                (0..m).map(|j| channel.gain(j) * design.p2_mag(j, k) * design.p2_mag(j, k)).sum::<f64>()
                    + channel.noise_var();
            let per_device: Vec<(f64, f64)> =
                (0..m).map(|i| ((channel.coeff(i) * design.p1(i, k)).norm(), stringencies[i].rho())).collect();
            Ok(received_noise - required_aggregate_noise(rounds, num_classes, &per_device)?)
        })
        .collect()
}

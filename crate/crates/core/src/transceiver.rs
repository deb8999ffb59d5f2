//! Per-round transceiver design.
//!
//! Device `i` sends class `k` as `P1_ik sqrt(K) q_ik + P2_ik m_ik` under the
//! peak power budget `|P1_ik|^2 + |P2_ik|^2 <= P_i`; the server divides the
//! superposed class block by `lambda_k`. Two error functionals measure the
//! estimate: `Phi1` (misalignment of the weighted average) and `Phi2`
//! (effective noise variance).
//!
//! The optimal design zero-forces the misalignment,
//!
//! ```text
//! P1_ik = B_ik lambda_k conj(h_i) / (B_k sqrt(K) |h_i|^2)
//! ```
//!
//! so that `h_i P1_ik sqrt(K) / lambda_k = B_ik / B_k`, and then splits on
//! whether the receiver noise alone covers the privacy condition:
//!
//! - channel noise suffices: no artificial noise and the largest `lambda_k`
//!   the power budget allows, `min_i B_k sqrt(K) |h_i| sqrt(P_i) / B_ik`;
//! - otherwise the privacy condition holds with equality,
//!   `sum_j |h_j P2_jk|^2 + sigma^2 = 4 T lambda_k^2 max_i (B_ik/B_k)^2 rho_i`.
//!
//! The second case has a continuum of optima (`Phi2` is constant along the
//! equality). We pick, with `c_j = (B_jk / B_k)^2 / K` and
//! `a = 4 T max_i (B_ik/B_k)^2 rho_i`,
//!
//! ```text
//! lambda_k^2 = min( (sum_j |h_j|^2 P_j + sigma^2) / (a + sum_j c_j),
//!                   min_j |h_j|^2 P_j / c_j )
//! ```
//!
//! and share the required received noise power among devices in proportion
//! to their headroom `|h_j|^2 P_j - c_j lambda_k^2`. When the first term is
//! the smaller one every device ends up exactly at peak power.
//!
//! The split is decided per class: class `k` is in the channel-noise regime
//! iff `a lambda_I^2 <= sigma^2` with `lambda_I` the channel-noise optimum,
//! i.e. iff `T <= T0_k` (see [`class_threshold_rounds`]). The global
//! threshold [`threshold_rounds`] coincides with `T0_k` for a single device
//! and for balanced shares.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::privacy::{max_stringency, PrivacyStringency};
use crate::simplex::LocalKnowledge;
use crate::{Error, Result};

/// Per-device, per-class sample counts `B_ik`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<Vec<u64>>", into = "Vec<Vec<u64>>"))]
pub struct ClassPartition {
    counts: Vec<Vec<u64>>,
    device_totals: Vec<u64>,
    class_totals: Vec<u64>,
}

impl ClassPartition {
    /// `counts[i][k]` is the number of class-`k` samples on device `i`.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.first().map(Vec::len).ok_or(Error::Empty("partition"))?;
        if k == 0 {
            return Err(Error::Empty("partition classes"));
        }
        if let Some(row) = counts.iter().find(|row| row.len() != k) {
            return Err(Error::DimensionMismatch { what: "partition row", expected: k, found: row.len() });
        }
        let device_totals = counts.iter().map(|row| row.iter().sum()).collect();
        let class_totals = (0..k).map(|c| counts.iter().map(|row| row[c]).sum()).collect();
        Ok(ClassPartition { counts, device_totals, class_totals })
    }

    pub fn num_devices(&self) -> usize {
        self.counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_totals.len()
    }

    pub fn count(&self, device: usize, class: usize) -> u64 {
        self.counts[device][class]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn device_total(&self, device: usize) -> u64 {
        self.device_totals[device]
    }

    pub fn class_total(&self, class: usize) -> u64 {
        self.class_totals[class]
    }

    pub fn is_active(&self, class: usize) -> bool {
        self.class_totals[class] > 0
    }

    /// `B_ik / B_k`, zero for an inactive class.
    pub fn share(&self, device: usize, class: usize) -> f64 {
        match self.class_totals[class] {
            0 => 0.0,
            total => self.counts[device][class] as f64 / total as f64,
        }
    }

    /// `B_ik / B_i`, zero for an empty device.
    pub fn weight(&self, device: usize, class: usize) -> f64 {
        match self.device_totals[device] {
            0 => 0.0,
            total => self.counts[device][class] as f64 / total as f64,
        }
    }

    /// `sum_k (B_ik / B_k)^2`.
    pub fn share_energy(&self, device: usize) -> f64 {
        (0..self.num_classes())
            .map(|k| {
                let s = self.share(device, k);
                s * s
            })
            .sum()
    }
}

impl TryFrom<Vec<Vec<u64>>> for ClassPartition {
    type Error = Error;

    fn try_from(counts: Vec<Vec<u64>>) -> Result<Self> {
        ClassPartition::from_counts(counts)
    }
}

impl From<ClassPartition> for Vec<Vec<u64>> {
    fn from(p: ClassPartition) -> Self {
        p.counts
    }
}

/// How a class was served in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ClassRegime {
    /// No device holds the class; nothing is sent and `lambda = 1`.
    Inactive,
    /// Receiver noise alone satisfies the privacy condition; no DP noise.
    ChannelNoise,
    /// Artificial noise tops the receiver noise up to the privacy condition
    /// with equality. `full_power` marks the branch where every device
    /// transmits at its peak power.
    DpNoise { full_power: bool },
    /// Built by hand through [`TransceiverDesign::from_parts`].
    Manual,
}

/// `P1` (complex), `|P2|` and `lambda` for every device and class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransceiverDesign {
    p1: Vec<Vec<Complex64>>,
    p2_mag: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    regime: Vec<ClassRegime>,
}

impl TransceiverDesign {
    /// Device-major `p1` and `p2_mag`, one `lambda` per class.
    pub fn from_parts(p1: Vec<Vec<Complex64>>, p2_mag: Vec<Vec<f64>>, lambda: Vec<f64>) -> Result<Self> {
        let k = lambda.len();
        if k == 0 {
            return Err(Error::Empty("lambda"));
        }
        if p1.len() != p2_mag.len() {
            return Err(Error::DimensionMismatch { what: "p2_mag devices", expected: p1.len(), found: p2_mag.len() });
        }
        for row in &p1 {
            if row.len() != k {
                return Err(Error::DimensionMismatch { what: "p1 classes", expected: k, found: row.len() });
            }
        }
        for row in &p2_mag {
            if row.len() != k {
                return Err(Error::DimensionMismatch { what: "p2_mag classes", expected: k, found: row.len() });
            }
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::domain("p2 magnitudes must be non-negative"));
            }
        }
        if lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::domain("lambda must be positive and finite"));
        }
        Ok(TransceiverDesign { p1, p2_mag, lambda, regime: vec![ClassRegime::Manual; k] })
    }

    pub fn num_devices(&self) -> usize {
        self.p1.len()
    }

    pub fn num_classes(&self) -> usize {
        self.lambda.len()
    }

    pub fn p1(&self, device: usize, class: usize) -> Complex64 {
        self.p1[device][class]
    }

    pub fn p2_mag(&self, device: usize, class: usize) -> f64 {
        self.p2_mag[device][class]
    }

    pub fn lambda(&self, class: usize) -> f64 {
        self.lambda[class]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }

    pub fn regime(&self, class: usize) -> ClassRegime {
        self.regime[class]
    }

    /// `|P1|^2 + |P2|^2`.
    pub fn power_used(&self, device: usize, class: usize) -> f64 {
        self.p1[device][class].norm_sqr() + self.p2_mag[device][class] * self.p2_mag[device][class]
    }

    /// DP-noise factor with the phase of `conj(h)`, so that `h P2` is real
    /// and non-negative.
    pub fn p2_aligned(&self, device: usize, class: usize, h: Complex64) -> Complex64 {
        let mag = self.p2_mag[device][class];
        let abs = h.norm();
        if mag == 0.0 || abs == 0.0 {
            Complex64::new(mag, 0.0)
        } else {
            h.conj() * (mag / abs)
        }
    }

    /// Replaces `lambda_k` and re-derives the aligned `P1` for that class,
    /// leaving `P2` untouched.
    pub fn set_lambda(
        &mut self,
        class: usize,
        lambda: f64,
        partition: &ClassPartition,
        channel: &ChannelRealization,
    ) -> Result<()> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain("lambda must be positive and finite"));
        }
        self.lambda[class] = lambda;
        for i in 0..self.num_devices() {
            self.p1[i][class] = aligned_p1(partition, channel, i, class, lambda)?;
        }
        self.regime[class] = ClassRegime::Manual;
        Ok(())
    }

    pub fn set_p2_mag(&mut self, device: usize, class: usize, value: f64) -> Result<()> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::domain("p2 magnitude must be non-negative and finite"));
        }
        self.p2_mag[device][class] = value;
        self.regime[class] = ClassRegime::Manual;
        Ok(())
    }

    /// Drops all artificial noise.
    pub fn clear_dp_noise(&mut self) {
        for row in &mut self.p2_mag {
            row.iter_mut().for_each(|p| *p = 0.0);
        }
        self.regime.iter_mut().for_each(|r| {
            if matches!(r, ClassRegime::DpNoise { .. }) {
                *r = ClassRegime::Manual;
            }
        });
    }

    /// `sum_j |h_j P2_jk|^2 + sigma^2`.
    pub fn received_noise_power(&self, channel: &ChannelRealization, class: usize) -> f64 {
        (0..self.num_devices()).map(|j| channel.gain(j) * self.p2_mag[j][class] * self.p2_mag[j][class]).sum::<f64>()
            + channel.noise_var()
    }
}

/// A round count that may be unbounded (no privacy constraint).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Threshold {
    Finite(f64),
    Unbounded,
}

impl Threshold {
    /// Whether `rounds` falls in the channel-noise regime (boundary included).
    pub fn covers(self, rounds: u64) -> bool {
        match self {
            Threshold::Finite(t) => rounds as f64 <= t,
            Threshold::Unbounded => true,
        }
    }
}

fn check_powers(powers: &[f64], devices: usize) -> Result<()> {
    if powers.len() != devices {
        return Err(Error::DimensionMismatch { what: "power budgets", expected: devices, found: powers.len() });
    }
    if powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::domain("power budgets must be positive and finite"));
    }
    Ok(())
}

/// `T0 = sigma^2 / (4 K min_i |h_i|^2 P_i max_i rho_i)`.
pub fn threshold_rounds(
    channel: &ChannelRealization,
    powers: &[f64],
    num_classes: usize,
    stringencies: &[PrivacyStringency],
) -> Result<Threshold> {
    check_powers(powers, channel.num_devices())?;
    if num_classes == 0 {
        return Err(Error::domain("need at least one class"));
    }
    let max_rho = max_stringency(stringencies);
    if max_rho == 0.0 {
        return Ok(Threshold::Unbounded);
    }
    let min_rx = (0..channel.num_devices()).map(|i| channel.gain(i) * powers[i]).fold(f64::INFINITY, f64::min);
    if !(min_rx > 0.0) {
        return Err(Error::domain("every device needs a non-zero channel gain"));
    }
    Ok(Threshold::Finite(channel.noise_var() / (4.0 * num_classes as f64 * min_rx * max_rho)))
}

/// Per-class constants of the design problem.
struct ClassTerms {
    /// `(B_jk / B_k)^2 / K` per device.
    c: Vec<f64>,
    /// `max_i (B_ik/B_k)^2 rho_i`.
    privacy_weight: f64,
    /// Largest feasible `lambda` without artificial noise.
    lambda_silent: f64,
}

fn class_terms(
    class: usize,
    channel: &ChannelRealization,
    partition: &ClassPartition,
    powers: &[f64],
    stringencies: &[PrivacyStringency],
) -> Result<ClassTerms> {
    let m = partition.num_devices();
    let kf = partition.num_classes() as f64;
    let total = partition.class_total(class) as f64;
    let mut c = vec![0.0; m];
    let mut lambda_silent = f64::INFINITY;
    let mut privacy_weight: f64 = 0.0;
    for j in 0..m {
        let count = partition.count(j, class);
        if count == 0 {
            continue;
        }
        let abs_h = channel.coeff(j).norm();
        if abs_h == 0.0 {
            return Err(Error::DegenerateChannel { device: j, class, samples: count });
        }
        let share = count as f64 / total;
        c[j] = share * share / kf;
        // strict < keeps the lowest device index on ties
        let candidate = total * libm::sqrt(kf) * abs_h * libm::sqrt(powers[j]) / count as f64;
        if candidate < lambda_silent {
            lambda_silent = candidate;
        }
        privacy_weight = privacy_weight.max(share * share * stringencies[j].rho());
    }
    Ok(ClassTerms { c, privacy_weight, lambda_silent })
}

fn check_inputs(
    channel: &ChannelRealization,
    partition: &ClassPartition,
    powers: &[f64],
    stringencies: &[PrivacyStringency],
    num_classes: usize,
) -> Result<()> {
    let m = channel.num_devices();
    if partition.num_devices() != m {
        return Err(Error::DimensionMismatch {
            what: "partition devices vs channel",
            expected: m,
            found: partition.num_devices(),
        });
    }
    if partition.num_classes() != num_classes {
        return Err(Error::DimensionMismatch {
            what: "partition classes",
            expected: num_classes,
            found: partition.num_classes(),
        });
    }
    if stringencies.len() != m {
        return Err(Error::DimensionMismatch {
            what: "stringencies vs channel",
            expected: m,
            found: stringencies.len(),
        });
    }
    check_powers(powers, m)
}

/// Largest `T` for which class `k` needs no artificial noise:
/// `sigma^2 / (4 max_i (B_ik/B_k)^2 rho_i lambda_I^2)`.
pub fn class_threshold_rounds(
    channel: &ChannelRealization,
    partition: &ClassPartition,
    powers: &[f64],
    stringencies: &[PrivacyStringency],
) -> Result<Vec<Threshold>> {
    check_inputs(channel, partition, powers, stringencies, partition.num_classes())?;
    (0..partition.num_classes())
        .map(|k| {
            if !partition.is_active(k) {
                return Ok(Threshold::Unbounded);
            }
            let terms = class_terms(k, channel, partition, powers, stringencies)?;
            if terms.privacy_weight == 0.0 {
                return Ok(Threshold::Unbounded);
            }
            let l2 = terms.lambda_silent * terms.lambda_silent;
            Ok(Threshold::Finite(channel.noise_var() / (4.0 * terms.privacy_weight * l2)))
        })
        .collect()
}

fn aligned_p1(
    partition: &ClassPartition,
    channel: &ChannelRealization,
    device: usize,
    class: usize,
    lambda: f64,
) -> Result<Complex64> {
    let count = partition.count(device, class);
    if count == 0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let h = channel.coeff(device);
    let gain = h.norm_sqr();
    if gain == 0.0 {
        return Err(Error::DegenerateChannel { device, class, samples: count });
    }
    let kf = partition.num_classes() as f64;
    let scale = count as f64 * lambda / (partition.class_total(class) as f64 * libm::sqrt(kf) * gain);
    Ok(h.conj() * scale)
}

/// Zero-forcing knowledge factors for the given normalizers.
pub fn optimal_p1(
    partition: &ClassPartition,
    channel: &ChannelRealization,
    lambda: &[f64],
) -> Result<Vec<Vec<Complex64>>> {
    if partition.num_devices() != channel.num_devices() {
        return Err(Error::DimensionMismatch {
            what: "partition devices vs channel",
            expected: channel.num_devices(),
            found: partition.num_devices(),
        });
    }
    if lambda.len() != partition.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "lambda classes",
            expected: partition.num_classes(),
            found: lambda.len(),
        });
    }
    (0..partition.num_devices())
        .map(|i| (0..partition.num_classes()).map(|k| aligned_p1(partition, channel, i, k, lambda[k])).collect())
        .collect()
}

/// Optimal transceiver design for one round of a `rounds`-round run.
pub fn design_round(
    rounds: u64,
    channel: &ChannelRealization,
    partition: &ClassPartition,
    powers: &[f64],
    stringencies: &[PrivacyStringency],
    num_classes: usize,
) -> Result<TransceiverDesign> {
    if rounds == 0 {
        return Err(Error::domain("need at least one round"));
    }
    check_inputs(channel, partition, powers, stringencies, num_classes)?;
    let m = channel.num_devices();
    let sigma2 = channel.noise_var();
    let mut lambda = vec![1.0; num_classes];
    let mut regime = vec![ClassRegime::Inactive; num_classes];
    let mut p2_mag = vec![vec![0.0; num_classes]; m];

    for k in 0..num_classes {
        if !partition.is_active(k) {
            continue;
        }
        let terms = class_terms(k, channel, partition, powers, stringencies)?;
        let a = 4.0 * rounds as f64 * terms.privacy_weight;
        let silent_sq = terms.lambda_silent * terms.lambda_silent;
        if a * silent_sq <= sigma2 {
            lambda[k] = terms.lambda_silent;
            regime[k] = ClassRegime::ChannelNoise;
            continue;
        }

        let rx_budget: f64 = (0..m).map(|j| channel.gain(j) * powers[j]).sum();
        let c_sum: f64 = terms.c.iter().sum();
        let free_sq = (rx_budget + sigma2) / (a + c_sum);
        let full_power = free_sq <= silent_sq;
        let lambda_sq = if full_power { free_sq } else { silent_sq };
        let headroom: Vec<f64> =
            (0..m).map(|j| (channel.gain(j) * powers[j] - terms.c[j] * lambda_sq).max(0.0)).collect();
        let headroom_sum: f64 = headroom.iter().sum();
        let needed = a * lambda_sq - sigma2;
        let fill = if headroom_sum > 0.0 { needed / headroom_sum } else { 0.0 };
        for j in 0..m {
            let gain = channel.gain(j);
            if gain > 0.0 && headroom[j] > 0.0 {
                p2_mag[j][k] = libm::sqrt(fill * headroom[j] / gain);
            }
        }
        lambda[k] = libm::sqrt(lambda_sq);
        regime[k] = ClassRegime::DpNoise { full_power };
    }

    let p1 = optimal_p1(partition, channel, &lambda)?;
    Ok(TransceiverDesign { p1, p2_mag, lambda, regime })
}

fn check_design(design: &TransceiverDesign, channel: &ChannelRealization, partition: &ClassPartition) -> Result<()> {
    if design.num_devices() != channel.num_devices() || partition.num_devices() != channel.num_devices() {
        return Err(Error::DimensionMismatch {
            what: "devices",
            expected: channel.num_devices(),
            found: design.num_devices().min(partition.num_devices()),
        });
    }
    if design.num_classes() != partition.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "classes",
            expected: partition.num_classes(),
            found: design.num_classes(),
        });
    }
    Ok(())
}

/// Misalignment error per device:
/// `sum_k (B_ik/B_i) || sum_j (h_j P1_jk sqrt(K)/lambda_k - B_jk/B_k) q_jk ||`.
///
/// A device without knowledge for class `k` sends nothing for it, so its
/// term drops out.
pub fn phi1(
    design: &TransceiverDesign,
    channel: &ChannelRealization,
    partition: &ClassPartition,
    knowledge: &[LocalKnowledge],
) -> Result<Vec<f64>> {
    check_design(design, channel, partition)?;
    let m = channel.num_devices();
    let k_classes = partition.num_classes();
    if knowledge.len() != m {
        return Err(Error::DimensionMismatch { what: "knowledge devices", expected: m, found: knowledge.len() });
    }
    let sqrt_k = libm::sqrt(k_classes as f64);
    let mut class_error = vec![0.0; k_classes];
    for (k, err) in class_error.iter_mut().enumerate() {
        let mut residual = vec![Complex64::new(0.0, 0.0); k_classes];
        for j in 0..m {
            let Some(q) = knowledge[j].get(k).and_then(Option::as_ref) else {
                continue;
            };
            let coeff = channel.coeff(j) * design.p1(j, k) * (sqrt_k / design.lambda(k)) - partition.share(j, k);
            for (r, &qd) in residual.iter_mut().zip(q.as_slice()) {
                *r += coeff * qd;
            }
        }
        *err = libm::sqrt(residual.iter().map(Complex64::norm_sqr).sum());
    }
    Ok((0..m).map(|i| (0..k_classes).map(|k| partition.weight(i, k) * class_error[k]).sum()).collect())
}

/// Effective noise variance per device:
/// `sum_k (B_ik/B_i) K (sum_j |h_j P2_jk|^2 + sigma^2) / lambda_k^2`.
pub fn phi2(
    design: &TransceiverDesign,
    channel: &ChannelRealization,
    partition: &ClassPartition,
    num_classes: usize,
) -> Result<Vec<f64>> {
    check_design(design, channel, partition)?;
    if num_classes != partition.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "classes",
            expected: partition.num_classes(),
            found: num_classes,
        });
    }
    let kf = num_classes as f64;
    let per_class: Vec<f64> = (0..num_classes)
        .map(|k| {
            let l = design.lambda(k);
            kf * design.received_noise_power(channel, k) / (l * l)
        })
        .collect();
    Ok((0..channel.num_devices())
        .map(|i| (0..num_classes).map(|k| partition.weight(i, k) * per_class[k]).sum())
        .collect())
}

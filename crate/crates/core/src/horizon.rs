//! Convergence bound and choice of the training horizon.
//!
//! With step sizes `eta_t = eta0 / sqrt(t)` the expected squared gradient
//! norm of device `i` after `T` rounds is bounded by
//!
//! ```text
//! 8 gamma L2 S + 3 f_max,i / (eta0 sqrt(T))
//!   + sum_t 6 eta0 gamma^2 L2^2 L1 (Phi1^2 + Phi2) / T^{3/2}
//!   + sum_t 6 gamma eta0 L2 (L1 eta_t + 1) |grad F_i| Phi1 / (eta_t T^{3/2})
//! ```
//!
//! Under the optimal per-round design `Phi1 = 0` and, once artificial noise
//! is needed, the sum over devices collapses to `a / sqrt(T) + b sqrt(T)`,
//! minimized at `T = a / b`.

use alloc::vec::Vec;

use crate::learner::learning_rate;
use crate::privacy::{max_stringency, PrivacyStringency};
use crate::transceiver::ClassPartition;
use crate::{Error, Result};

/// Analysis constants of the convergence bound.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HyperParams {
    /// Distillation weight.
    pub gamma: f64,
    /// Initial learning rate.
    pub eta0: f64,
    /// Smoothness of the local loss.
    pub l1: f64,
    /// Lipschitz constant of the model output.
    pub l2: f64,
    /// Uniform gradient-norm bound.
    pub grad_bound: f64,
    /// Upper bound of each device's loss.
    pub f_max: Vec<f64>,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain("gamma must be non-negative"));
        }
        for (name, v) in [("eta0", self.eta0), ("l1", self.l1), ("l2", self.l2), ("grad_bound", self.grad_bound)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(alloc::format!("{name} must be positive")));
            }
        }
        if self.eta0 > 1.0 / self.l1 {
            return Err(Error::domain("eta0 must not exceed 1 / l1"));
        }
        if self.f_max.is_empty() {
            return Err(Error::Empty("f_max"));
        }
        if self.f_max.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::domain("f_max must be positive"));
        }
        Ok(())
    }

    /// `6 eta0 gamma^2 L2^2 L1`.
    pub fn noise_coefficient(&self) -> f64 {
        6.0 * self.eta0 * self.gamma * self.gamma * self.l2 * self.l2 * self.l1
    }
}

/// Logged per-round inputs of the bound, indexed `[device][s]` for
/// `s = 0..T` (round `s + 1`).
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundSummands {
    /// `Phi1^2 + Phi2`.
    pub phi1_sq_plus_phi2: Vec<Vec<f64>>,
    /// `|grad F_i| Phi1`.
    pub grad_times_phi1: Vec<Vec<f64>>,
}

impl BoundSummands {
    pub fn with_devices(devices: usize) -> Self {
        BoundSummands {
            phi1_sq_plus_phi2: alloc::vec![Vec::new(); devices],
            grad_times_phi1: alloc::vec![Vec::new(); devices],
        }
    }

    pub fn push(&mut self, device: usize, phi1: f64, phi2: f64, grad_norm: f64) {
        self.phi1_sq_plus_phi2[device].push(phi1 * phi1 + phi2);
        self.grad_times_phi1[device].push(grad_norm * phi1);
    }
}

/// The bound on `E |grad F_i|^2` after `rounds` rounds for `device`.
pub fn convergence_bound(rounds: u64, hyper: &HyperParams, summands: &BoundSummands, device: usize) -> Result<f64> {
    hyper.validate()?;
    if rounds == 0 {
        return Err(Error::domain("need at least one round"));
    }
    let t = rounds as usize;
    let f_max = *hyper.f_max.get(device).ok_or(Error::DimensionMismatch {
        what: "f_max devices",
        expected: device + 1,
        found: hyper.f_max.len(),
    })?;
    let noise = summands.phi1_sq_plus_phi2.get(device).map(Vec::as_slice).unwrap_or(&[]);
    let misalign = summands.grad_times_phi1.get(device).map(Vec::as_slice).unwrap_or(&[]);
    if noise.len() < t || misalign.len() < t {
        return Err(Error::DimensionMismatch {
            what: "bound summands rounds",
            expected: t,
            found: noise.len().min(misalign.len()),
        });
    }
    let (gamma, eta0, l1, l2) = (hyper.gamma, hyper.eta0, hyper.l1, hyper.l2);
    let t32 = libm::pow(rounds as f64, 1.5);
    let mut total = 8.0 * gamma * l2 * hyper.grad_bound + 3.0 * f_max / (eta0 * libm::sqrt(rounds as f64));
    total += noise[..t].iter().sum::<f64>() * hyper.noise_coefficient() / t32;
    for (s, &gp) in misalign[..t].iter().enumerate() {
        let eta = learning_rate(s as u64 + 1, eta0)?;
        total += 6.0 * gamma * eta0 * l2 * (l1 * eta + 1.0) * gp / (eta * t32);
    }
    Ok(total)
}

/// Coefficients `(a, b)` of the artificial-noise objective
/// `a / sqrt(T) + b sqrt(T)` summed over devices:
/// `a = 3 sum_i f_max,i / eta0`, `b = 4 A2 M rho* sum_k (B_i*k / B_k)^2`,
/// with `i*` the device of largest stringency and `A2 = 6 eta0 gamma^2 L2^2 L1`.
pub fn objective_coefficients(
    hyper: &HyperParams,
    partition: &ClassPartition,
    stringencies: &[PrivacyStringency],
) -> Result<Option<(f64, f64)>> {
    hyper.validate()?;
    let m = partition.num_devices();
    if stringencies.len() != m {
        return Err(Error::DimensionMismatch { what: "stringencies", expected: m, found: stringencies.len() });
    }
    if hyper.f_max.len() != m {
        return Err(Error::DimensionMismatch { what: "f_max devices", expected: m, found: hyper.f_max.len() });
    }
    let max_rho = max_stringency(stringencies);
    if max_rho == 0.0 {
        return Ok(None);
    }
    // lowest index among the devices attaining the max
    let strictest = stringencies.iter().position(|s| s.rho() == max_rho).unwrap_or(0);
    let energy = partition.share_energy(strictest);
    if energy == 0.0 {
        return Err(Error::domain("the strictest device holds no samples"));
    }
    let a = 3.0 * hyper.f_max.iter().sum::<f64>() / hyper.eta0;
    let b = 4.0 * hyper.noise_coefficient() * m as f64 * max_rho * energy;
    if !(b > 0.0) {
        return Ok(None);
    }
    Ok(Some((a, b)))
}

pub fn objective(a: f64, b: f64, rounds: f64) -> f64 {
    a / libm::sqrt(rounds) + b * libm::sqrt(rounds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Horizon {
    /// `rounds` is the nearest integer to `continuous` (at least 1).
    Finite { rounds: u64, continuous: f64 },
    /// No privacy constraint (or no distillation): the bound keeps
    /// improving with `T`, so the caller has to pick one.
    Unbounded,
}

/// Optimal number of training rounds under the optimal per-round design.
pub fn optimal_rounds(
    hyper: &HyperParams,
    partition: &ClassPartition,
    stringencies: &[PrivacyStringency],
    num_devices: usize,
    num_classes: usize,
) -> Result<Horizon> {
    if partition.num_devices() != num_devices {
        return Err(Error::DimensionMismatch {
            what: "partition devices",
            expected: num_devices,
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
    let Some((a, b)) = objective_coefficients(hyper, partition, stringencies)? else {
        return Ok(Horizon::Unbounded);
    };
    let continuous = a / b;
    let rounds = libm::round(continuous).max(1.0);
    // saturating cast for absurdly loose privacy
    let rounds = if rounds >= u64::MAX as f64 { u64::MAX } else { rounds as u64 };
    Ok(Horizon::Finite { rounds, continuous })
}

/// Exhaustive minimization of `a / sqrt(T) + b sqrt(T)` over `1..=t_max`.
/// An independent check of [`optimal_rounds`]; ties go to the smaller `T`.
pub fn brute_force_rounds(
    hyper: &HyperParams,
    partition: &ClassPartition,
    stringencies: &[PrivacyStringency],
    t_max: u64,
) -> Result<u64> {
    if t_max == 0 {
        return Err(Error::domain("t_max must be at least one"));
    }
    let Some((a, b)) = objective_coefficients(hyper, partition, stringencies)? else {
        return Ok(t_max);
    };
    let mut best = (1, objective(a, b, 1.0));
    for t in 2..=t_max {
        let v = objective(a, b, t as f64);
        if v < best.1 {
            best = (t, v);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn worked() -> (HyperParams, ClassPartition, Vec<PrivacyStringency>) {
        let hyper = HyperParams { gamma: 1.0, eta0: 0.01, l1: 1.0, l2: 1.0, grad_bound: 1.0, f_max: vec![1.0, 1.0] };
        let part = ClassPartition::from_counts(vec![vec![5, 5], vec![5, 5]]).unwrap();
        let rho = vec![PrivacyStringency::from_rho(0.2).unwrap(), PrivacyStringency::from_rho(0.05).unwrap()];
        (hyper, part, rho)
    }

    #[test]
    fn worked_instance() {
        let (hyper, part, rho) = worked();
        // 3 / (24 * 1e-4 * 0.2 * 0.5) = 12500
        match optimal_rounds(&hyper, &part, &rho, 2, 2).unwrap() {
            Horizon::Finite { rounds, continuous } => {
                assert_eq!(rounds, 12500);
                assert!((continuous - 12500.0).abs() < 1e-8);
            }
            Horizon::Unbounded => panic!(),
        }
        let oracle = brute_force_rounds(&hyper, &part, &rho, 20_000).unwrap();
        assert!(oracle.abs_diff(12500) <= 1);
    }

    fn continuous(h: Horizon) -> f64 {
        match h {
            Horizon::Finite { continuous, .. } => continuous,
            Horizon::Unbounded => panic!(),
        }
    }

    #[test]
    fn scaling_laws() {
        let (hyper, part, rho) = worked();
        let base = continuous(optimal_rounds(&hyper, &part, &rho, 2, 2).unwrap());
        let mut big = hyper.clone();
        big.f_max = vec![4.0, 4.0];
        let scaled = continuous(optimal_rounds(&big, &part, &rho, 2, 2).unwrap());
        assert!((scaled / base - 4.0).abs() < 1e-12);
        let doubled = vec![PrivacyStringency::from_rho(0.4).unwrap(), rho[1]];
        let halved = continuous(optimal_rounds(&hyper, &part, &doubled, 2, 2).unwrap());
        assert!((halved / base - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_privacy_is_unbounded() {
        let (hyper, part, _) = worked();
        let none = vec![PrivacyStringency::NONE; 2];
        assert_eq!(optimal_rounds(&hyper, &part, &none, 2, 2).unwrap(), Horizon::Unbounded);
    }

    #[test]
    fn clamped_to_one() {
        let (hyper, part, _) = worked();
        let harsh = vec![PrivacyStringency::from_rho(1e9).unwrap(); 2];
        match optimal_rounds(&hyper, &part, &harsh, 2, 2).unwrap() {
            Horizon::Finite { rounds, continuous } => {
                assert_eq!(rounds, 1);
                assert!(continuous < 0.5);
            }
            Horizon::Unbounded => panic!(),
        }
    }

    #[test]
    fn oracle_hits_boundary() {
        let (hyper, part, rho) = worked();
        assert_eq!(brute_force_rounds(&hyper, &part, &rho, 100).unwrap(), 100);
    }

    #[test]
    fn objective_minimum() {
        let (a, b) = (37.0, 0.013);
        let t_hat = a / b;
        let at_min = objective(a, b, t_hat);
        assert!((at_min - 2.0 * libm::sqrt(a * b)).abs() < 1e-12 * at_min);
        for t in [1.0, 10.0, 0.5 * t_hat, 0.99 * t_hat, 1.01 * t_hat, 3.0 * t_hat, 1e7] {
            assert!(objective(a, b, t) >= at_min);
        }
    }

    fn straight_line(t: u64, h: &HyperParams, s: &BoundSummands, i: usize) -> f64 {
        let tf = t as f64;
        let mut omega = 3.0 * h.f_max[i] / (h.eta0 * libm::sqrt(tf));
        for step in 0..t as usize {
            omega += 6.0 * h.eta0 * h.gamma * h.gamma * h.l2 * h.l2 * h.l1 * s.phi1_sq_plus_phi2[i][step]
                / libm::pow(tf, 1.5);
        }
        for step in 0..t as usize {
            let eta = h.eta0 / libm::sqrt((step + 1) as f64);
            omega += 6.0 * h.gamma * h.eta0 * h.l2 * (h.l1 * eta + 1.0) * s.grad_times_phi1[i][step]
                / (eta * libm::pow(tf, 1.5));
        }
        8.0 * h.gamma * h.l2 * h.grad_bound + omega
    }

    #[test]
    fn bound_matches_straight_line() {
        use crate::rng::{stream, Stream};
        use rand::Rng;
        let mut rng = stream(3, Stream::Setup, &[]);
        for _ in 0..20 {
            let t = rng.random_range(1..200u64);
            let hyper = HyperParams {
                gamma: rng.random_range(0.0..1.0),
                eta0: rng.random_range(0.001..0.05),
                l1: 10.0,
                l2: rng.random_range(0.5..2.0),
                grad_bound: rng.random_range(1.0..20.0),
                f_max: vec![rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)],
            };
            let mut s = BoundSummands::with_devices(2);
            for _ in 0..t {
                for i in 0..2 {
                    s.push(i, rng.random_range(0.0..0.1), rng.random_range(0.0..5.0), rng.random_range(0.0..3.0));
                }
            }
            for i in 0..2 {
                let got = convergence_bound(t, &hyper, &s, i).unwrap();
                let want = straight_line(t, &hyper, &s, i);
                assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn bound_special_cases() {
        let mut hyper = worked().0;
        hyper.eta0 = 0.5;
        let mut s = BoundSummands::with_devices(2);
        for _ in 0..50 {
            s.push(0, 0.2, 3.0, 1.5);
            s.push(1, 0.0, 0.0, 0.0);
        }
        hyper.gamma = 0.0;
        let got = convergence_bound(50, &hyper, &s, 0).unwrap();
        assert!((got - 3.0 / (0.5 * libm::sqrt(50.0))).abs() < 1e-14);
        hyper.gamma = 0.3;
        let got = convergence_bound(50, &hyper, &s, 1).unwrap();
        let want = 8.0 * 0.3 * 1.0 * 1.0 + 3.0 / (0.5 * libm::sqrt(50.0));
        assert!((got - want).abs() < 1e-14);
        let mut last = f64::INFINITY;
        for t in 1..=50 {
            let v = convergence_bound(t, &hyper, &s, 1).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(convergence_bound(51, &hyper, &s, 1).is_err());
    }

    #[test]
    fn hyper_validation() {
        let (mut hyper, ..) = worked();
        hyper.eta0 = 2.0;
        assert!(hyper.validate().is_err());
        hyper.eta0 = 0.01;
        hyper.f_max = vec![];
        assert!(hyper.validate().is_err());
    }
}

//! Block-fading uplink channel.
//!
//! Each coefficient is the square root of a large-scale power gain
//! `(c / (4 pi f_c d))^PL` times a circularly symmetric complex Gaussian
//! small-scale draw `g ~ CN(0, 1)`, so `E|h|^2` equals the path-loss gain.
//! Coefficients are constant within a round and redrawn independently across
//! rounds.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceGeometry {
    pub distance_m: f64,
    pub carrier_hz: f64,
    pub pathloss_exp: f64,
}

impl DeviceGeometry {
    pub fn new(distance_m: f64, carrier_hz: f64, pathloss_exp: f64) -> Result<Self> {
        let geom = DeviceGeometry { distance_m, carrier_hz, pathloss_exp };
        geom.validate()?;
        Ok(geom)
    }

    fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0 && self.distance_m.is_finite()) {
            return Err(Error::domain("distance must be positive and finite"));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::domain("carrier frequency must be positive and finite"));
        }
        if !(self.pathloss_exp >= 0.0 && self.pathloss_exp.is_finite()) {
            return Err(Error::domain("path-loss exponent must be non-negative"));
        }
        Ok(())
    }
}

/// Channel coefficients of every device for one round plus the receiver
/// noise variance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelRealization {
    coeffs: Vec<Complex64>,
    noise_var: f64,
}

impl ChannelRealization {
    /// `noise_var` may be zero (noise-free reference channel).
    pub fn new(coeffs: Vec<Complex64>, noise_var: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Empty("channel coefficients"));
        }
        if coeffs.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(Error::domain("channel coefficients must be finite"));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::domain("noise variance must be non-negative and finite"));
        }
        Ok(ChannelRealization { coeffs, noise_var })
    }

    /// Unit gains for every device.
    pub fn ideal(devices: usize, noise_var: f64) -> Result<Self> {
        Self::new(alloc::vec![Complex64::new(1.0, 0.0); devices], noise_var)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, device: usize) -> Complex64 {
        self.coeffs[device]
    }

    /// `|h_i|^2`.
    pub fn gain(&self, device: usize) -> f64 {
        self.coeffs[device].norm_sqr()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn num_devices(&self) -> usize {
        self.coeffs.len()
    }
}

pub fn path_loss_gain(geom: &DeviceGeometry) -> Result<f64> {
    geom.validate()?;
    let ratio = SPEED_OF_LIGHT / (4.0 * PI * geom.carrier_hz * geom.distance_m);
    Ok(libm::pow(ratio, geom.pathloss_exp))
}

/// One `CN(0, 1)` draw: real and imaginary parts each `N(0, 1/2)`.
pub fn sample_small_scale<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

pub fn realize_round<R: Rng + ?Sized>(
    geoms: &[DeviceGeometry],
    noise_var: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    realize_round_with(geoms, noise_var, |_| sample_small_scale(rng))
}

/// Like [`realize_round`] with the small-scale draw for device `i` supplied
/// by `small_scale(i)`.
pub fn realize_round_with<F>(geoms: &[DeviceGeometry], noise_var: f64, mut small_scale: F) -> Result<ChannelRealization>
where
    F: FnMut(usize) -> Complex64,
{
    if geoms.is_empty() {
        return Err(Error::Empty("device geometries"));
    }
    let coeffs = geoms
        .iter()
        .enumerate()
        .map(|(i, g)| Ok(small_scale(i) * libm::sqrt(path_loss_gain(g)?)))
        .collect::<Result<Vec<_>>>()?;
    ChannelRealization::new(coeffs, noise_var)
}

//! Sensor observation model, kinematic likelihood, and the Rayleigh
//! amplitude densities for clutter and unknown-SNR targets.
//!
//! Amplitudes are envelope-detector outputs normalised to unit noise power.
//! Clutter follows `g0(a) = a exp(-a^2/2)`. A target whose average SNR `d`
//! is only known to lie in `[d1, d2]` (uniform in `ln(1 + d)`) has the
//! marginal density
//!
//! ```text
//! g_a(a | d1, d2) = 2 (exp(-a^2 / 2(1+d2)) - exp(-a^2 / 2(1+d1))) / (a (ln(1+d2) - ln(1+d1)))
//! ```
//!
//! Both are renormalised over the detection threshold `tau` before use.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::quadrature;
use crate::state_space::{wrap_angle, KinematicState};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const QUAD_TOL: f64 = 1e-12;

/// How a sensor measures the kinematic part of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObservationKind {
    /// Range (m) and four-quadrant bearing (rad) relative to the sensor.
    Polar { range_sigma: f64, bearing_sigma: f64 },
    /// Direct position `(x, y)` with isotropic noise; a linear variant for oracle tests.
    Cartesian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub id: usize,
    pub position: [f64; 2],
    pub kind: ObservationKind,
    /// Amplitude detection threshold `tau`.
    pub tau: f64,
    /// Replaces the amplitude-derived detection probability when set.
    pub pd_override: Option<f64>,
}

impl SensorConfig {
    pub fn polar(id: usize, position: [f64; 2], range_sigma: f64, bearing_sigma: f64, tau: f64) -> Result<Self> {
        Self::new(id, position, ObservationKind::Polar { range_sigma, bearing_sigma }, tau)
    }

    pub fn new(id: usize, position: [f64; 2], kind: ObservationKind, tau: f64) -> Result<Self> {
        let sigmas_ok = match kind {
            ObservationKind::Polar { range_sigma, bearing_sigma } => range_sigma > 0.0 && bearing_sigma > 0.0,
            ObservationKind::Cartesian { sigma } => sigma > 0.0,
        };
        if !sigmas_ok {
            return Err(config_err(format!("sensor {id}: noise sigmas must be positive")));
        }
        if !(tau >= 0.0) {
            return Err(config_err(format!("sensor {id}: threshold must be non-negative, got {tau}")));
        }
        Ok(Self { id, position, kind, tau, pd_override: None })
    }

    pub fn with_pd_override(mut self, pd: f64) -> Self {
        self.pd_override = Some(pd);
        self
    }

    /// Detection probability for a target of the given SNR band.
    pub fn detection_probability(&self, band: &SnrBand) -> f64 {
        self.pd_override.unwrap_or_else(|| p_d(self.tau, band))
    }
}

/// One thresholded detection: kinematic part `z` plus amplitude feature.
///
/// For polar sensors `z = (range, bearing)`; for Cartesian sensors `z = (x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub z: [f64; 2],
    pub amplitude: f64,
    pub sensor: usize,
}

impl Detection {
    pub fn polar(range: f64, bearing: f64, amplitude: f64, sensor: usize) -> Self {
        Self { z: [range, wrap_angle(bearing)], amplitude, sensor }
    }

    pub fn range(&self) -> f64 {
        self.z[0]
    }

    pub fn bearing(&self) -> f64 {
        self.z[1]
    }
}

/// Average-SNR interval `[d1, d2]` as linear power ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrBand {
    d1: f64,
    d2: f64,
    ln_width: f64,
}

impl SnrBand {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !d1.is_finite() || !d2.is_finite() || d1 < 0.0 || d2 < d1 {
            return Err(config_err(format!("invalid SNR band [{d1}, {d2}]")));
        }
        if d2 == d1 {
            return Err(Error::DegenerateBand { d1, d2 });
        }
        Ok(Self { d1, d2, ln_width: d2.ln_1p() - d1.ln_1p() })
    }

    /// Band given in dB, converted by `d = 10^(dB/10)`.
    pub fn from_db(lo_db: f64, hi_db: f64) -> Result<Self> {
        Self::new(10f64.powf(lo_db / 10.0), 10f64.powf(hi_db / 10.0))
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn d2(&self) -> f64 {
        self.d2
    }

    /// `ln(1 + d2) - ln(1 + d1)`
    pub fn ln_width(&self) -> f64 {
        self.ln_width
    }
}

/// Uniform Poisson clutter over the sensor's surveillance region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterModel {
    /// Expected post-threshold clutter detections per sensor per scan.
    pub rate: f64,
    /// Maximum range of the `[0, 2pi] x [0, max_range]` region (polar), or the
    /// half-width of the square around the sensor (Cartesian).
    pub max_range: f64,
}

impl ClutterModel {
    pub fn new(rate: f64, max_range: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(config_err(format!("clutter rate must be non-negative, got {rate}")));
        }
        if !(max_range > 0.0) {
            return Err(config_err(format!("clutter region must have positive extent, got {max_range}")));
        }
        Ok(Self { rate, max_range })
    }

    /// Spatial density of a clutter point in the sensor's measurement coordinates.
    pub fn spatial_density(&self, sensor: &SensorConfig) -> f64 {
        match sensor.kind {
            ObservationKind::Polar { .. } => 1.0 / (2.0 * PI * self.max_range),
            ObservationKind::Cartesian { .. } => 1.0 / (4.0 * self.max_range * self.max_range),
        }
    }

    /// `ln kappa(z)`: rate times spatial density times thresholded clutter amplitude density.
    pub fn ln_intensity(&self, det: &Detection, sensor: &SensorConfig) -> f64 {
        if self.rate == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.rate.ln() + self.spatial_density(sensor).ln() + ln_clutter_amp_pdf_thresholded(det.amplitude, sensor.tau)
    }
}

/// Noise-free measurement of a target: `(range, bearing)` or `(x, y)`.
pub fn observe(kin: &KinematicState, sensor: &SensorConfig) -> Result<[f64; 2]> {
    let dx = kin.x - sensor.position[0];
    let dy = kin.y - sensor.position[1];
    match sensor.kind {
        ObservationKind::Polar { .. } => {
            let r = dx.hypot(dy);
            if r == 0.0 {
                return Err(Error::ZeroRange { sensor: sensor.id });
            }
            Ok([r, dy.atan2(dx)])
        }
        ObservationKind::Cartesian { .. } => Ok([kin.x, kin.y]),
    }
}

/// `ln g(z | x)`: bivariate Gaussian of the measurement residual, bearing wrapped.
pub fn ln_kinematic_likelihood(z: &[f64; 2], kin: &KinematicState, sensor: &SensorConfig) -> f64 {
    let dx = kin.x - sensor.position[0];
    let dy = kin.y - sensor.position[1];
    match sensor.kind {
        ObservationKind::Polar { range_sigma, bearing_sigma } => {
            let er = (z[0] - dx.hypot(dy)) / range_sigma;
            let eb = wrap_angle(z[1] - dy.atan2(dx)) / bearing_sigma;
            -LN_2PI - range_sigma.ln() - bearing_sigma.ln() - 0.5 * (er * er + eb * eb)
        }
        ObservationKind::Cartesian { sigma } => {
            let ex = (z[0] - kin.x) / sigma;
            let ey = (z[1] - kin.y) / sigma;
            -LN_2PI - 2.0 * sigma.ln() - 0.5 * (ex * ex + ey * ey)
        }
    }
}

pub fn kinematic_likelihood(z: &Detection, kin: &KinematicState, sensor: &SensorConfig) -> f64 {
    ln_kinematic_likelihood(&z.z, kin, sensor).exp()
}

/// Rayleigh(1) clutter amplitude density `g0`.
pub fn clutter_amp_pdf(a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    a * (-0.5 * a * a).exp()
}

pub fn ln_clutter_amp_pdf(a: f64) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a.ln() - 0.5 * a * a
}

/// `ln g0^tau(a) = ln g0(a) - ln p_fa(tau)`; `-inf` below the threshold.
pub fn ln_clutter_amp_pdf_thresholded(a: f64, tau: f64) -> f64 {
    if a < tau {
        return f64::NEG_INFINITY;
    }
    ln_clutter_amp_pdf(a) + 0.5 * tau * tau
}

/// Interval-marginalised Rayleigh density `g_a(a | d1, d2)` of an unknown-SNR target.
pub fn target_amp_pdf(a: f64, band: &SnrBand) -> f64 {
    ln_target_amp_pdf(a, band).exp()
}

pub fn ln_target_amp_pdf(a: f64, band: &SnrBand) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let x1 = a * a / (2.0 * (1.0 + band.d1));
    let x2 = a * a / (2.0 * (1.0 + band.d2));
    // exp(-x2) - exp(-x1) = exp(-x2) * (1 - exp(-(x1 - x2)))
    let gap = x1 - x2;
    let ln_diff = if gap < std::f64::consts::LN_2 {
        (-(-gap).exp_m1()).ln()
    } else {
        (-(-gap).exp()).ln_1p()
    };
    std::f64::consts::LN_2 - a.ln() - x2 + ln_diff - band.ln_width.ln()
}

/// False-alarm probability `exp(-tau^2 / 2)`.
pub fn p_fa(tau: f64) -> f64 {
    (-0.5 * tau * tau).exp()
}

/// Detection probability: the mass of `g_a` above `tau`.
pub fn p_d(tau: f64, band: &SnrBand) -> f64 {
    if tau <= 0.0 {
        return 1.0;
    }
    let head = quadrature::integrate(|a| target_amp_pdf(a, band), 0.0, tau, QUAD_TOL);
    if head < 0.5 {
        return (1.0 - head).clamp(0.0, 1.0);
    }
    // Most of the mass lies below tau: integrate the tail directly. Beyond
    // 40 broad-scale widths the remaining mass is below exp(-800).
    let upper = tau + 40.0 * (1.0 + band.d2).sqrt();
    quadrature::integrate(|a| target_amp_pdf(a, band), tau, upper, QUAD_TOL).clamp(0.0, 1.0)
}

/// Clutter and target amplitude densities conditioned on exceeding `tau`.
pub fn amp_likelihoods_thresholded(a: f64, tau: f64, band: &SnrBand) -> Result<(f64, f64)> {
    if a < tau {
        return Err(Error::BelowThreshold { amplitude: a, tau });
    }
    let clutter = clutter_amp_pdf(a) / p_fa(tau);
    let target = target_amp_pdf(a, band) / p_d(tau, band);
    Ok((clutter, target))
}

/// Draw a Poisson number of clutter detections, uniform over the region, with
/// amplitudes from `g0^tau` by inverse CDF.
pub fn sample_clutter<R: Rng + ?Sized>(model: &ClutterModel, sensor: &SensorConfig, rng: &mut R) -> Vec<Detection> {
    if model.rate == 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(model.rate).map(|p| p.sample(rng) as usize).unwrap_or(0);
    (0..count)
        .map(|_| {
            let z = match sensor.kind {
                ObservationKind::Polar { .. } => {
                    let r = rng.random::<f64>() * model.max_range;
                    let b = wrap_angle(-PI + 2.0 * PI * rng.random::<f64>());
                    [r, b]
                }
                ObservationKind::Cartesian { .. } => [
                    sensor.position[0] + model.max_range * (2.0 * rng.random::<f64>() - 1.0),
                    sensor.position[1] + model.max_range * (2.0 * rng.random::<f64>() - 1.0),
                ],
            };
            Detection { z, amplitude: threshold_rayleigh(sensor.tau, 1.0, rng), sensor: sensor.id }
        })
        .collect()
}

/// Rayleigh draw with power `scale2` conditioned on exceeding `tau`.
pub(crate) fn threshold_rayleigh<R: Rng + ?Sized>(tau: f64, scale2: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    (tau * tau - 2.0 * scale2 * u.ln()).sqrt()
}

/// Unconditioned Rayleigh draw with power `scale2`.
pub(crate) fn rayleigh<R: Rng + ?Sized>(scale2: f64, rng: &mut R) -> f64 {
    threshold_rayleigh(0.0, scale2, rng)
}

/// Noisy measurement of `kin`; re-draws negative ranges.
pub(crate) fn noisy_observation<R: Rng + ?Sized>(kin: &KinematicState, sensor: &SensorConfig, rng: &mut R) -> Result<[f64; 2]> {
    let z = observe(kin, sensor)?;
    Ok(match sensor.kind {
        ObservationKind::Polar { range_sigma, bearing_sigma } => {
            let range = loop {
                let r = z[0] + range_sigma * rng.sample::<f64, _>(StandardNormal);
                if r >= 0.0 {
                    break r;
                }
            };
            [range, wrap_angle(z[1] + bearing_sigma * rng.sample::<f64, _>(StandardNormal))]
        }
        ObservationKind::Cartesian { sigma } => [
            z[0] + sigma * rng.sample::<f64, _>(StandardNormal),
            z[1] + sigma * rng.sample::<f64, _>(StandardNormal),
        ],
    })
}

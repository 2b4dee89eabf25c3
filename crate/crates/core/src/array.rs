//! Uniform linear array geometry and the spherical-wavefront line-of-sight
//! channel model.
//!
//! Elements sit on the y-axis, centred on the origin. User locations are
//! in-plane polar coordinates: the boresight angle `psi` is measured from the
//! array broadside (+x), positive toward +y, and `range` from the array centre.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 2.998e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub num_elements: usize,
    #[serde(rename = "element_spacing_m")]
    pub element_spacing: f64,
    #[serde(rename = "carrier_frequency_hz")]
    pub carrier_frequency: f64,
}

impl ArrayConfig {
    pub fn new(num_elements: usize, element_spacing: f64, carrier_frequency: f64) -> Result<Self> {
        let config = Self {
            num_elements,
            element_spacing,
            carrier_frequency,
        };
        let problems = config.violations();
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// The 1x24, 4 cm, 3.5 GHz array used throughout the experiments.
    pub fn xl_ula_24() -> Self {
        Self {
            num_elements: 24,
            element_spacing: 0.04,
            carrier_frequency: 3.5e9,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_elements < 2 {
            out.push(format!("array.num_elements must be >= 2 (got {})", self.num_elements));
        }
        if !(self.element_spacing > 0.0 && self.element_spacing.is_finite()) {
            out.push(format!("array.element_spacing_m must be > 0 (got {})", self.element_spacing));
        }
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency.is_finite()) {
            out.push(format!(
                "array.carrier_frequency_hz must be > 0 (got {})",
                self.carrier_frequency
            ));
        }
        out
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn propagation_constant(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    /// Largest aperture, (N - 1) d.
    pub fn aperture(&self) -> f64 {
        (self.num_elements - 1) as f64 * self.element_spacing
    }

    /// y-coordinate of element `n`; x is always zero.
    pub fn element_y(&self, n: usize) -> f64 {
        (n as f64 - (self.num_elements - 1) as f64 / 2.0) * self.element_spacing
    }

    pub fn element_positions(&self) -> Vec<[f64; 2]> {
        (0..self.num_elements).map(|n| [0.0, self.element_y(n)]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserLocation {
    /// Boresight angle in radians.
    pub psi: f64,
    /// Range from the array centre in metres.
    pub range: f64,
}

impl UserLocation {
    pub fn new(psi: f64, range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::invalid(format!("user range must be > 0 (got {range})")));
        }
        if !(psi > -PI / 2.0 && psi < PI / 2.0) {
            return Err(Error::invalid(format!(
                "user angle must lie in (-90, 90) degrees (got {})",
                psi.to_degrees()
            )));
        }
        Ok(Self { psi, range })
    }

    pub fn from_degrees(psi_deg: f64, range: f64) -> Result<Self> {
        Self::new(psi_deg.to_radians(), range)
    }

    pub fn psi_deg(&self) -> f64 {
        self.psi.to_degrees()
    }

    pub fn cartesian(&self) -> [f64; 2] {
        [self.range * self.psi.cos(), self.range * self.psi.sin()]
    }
}

/// Array response at one location: one complex entry per element.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector(pub Vec<Complex64>);

impl ChannelVector {
    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Array response to weights `w`, i.e. h^H w.
    pub fn response(&self, weights: &[Complex64]) -> Complex64 {
        inner(&self.0, weights)
    }
}

/// Conjugate-linear inner product a^H b.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Free-space isotropic response at distance `distance`: lambda/(4 pi r) e^{j beta r}.
pub fn point_response(wavelength: f64, distance: f64) -> Complex64 {
    let beta = 2.0 * PI / wavelength;
    Complex64::from_polar(wavelength / (4.0 * PI * distance), beta * distance)
}

/// Euclidean distance from `loc` to each element.
pub fn element_distances(config: &ArrayConfig, loc: &UserLocation) -> Vec<f64> {
    let [x, y] = loc.cartesian();
    (0..config.num_elements)
        .map(|n| {
            let dy = y - config.element_y(n);
            (x * x + dy * dy).sqrt()
        })
        .collect()
}

pub fn channel_vector(config: &ArrayConfig, loc: &UserLocation) -> ChannelVector {
    let lambda = config.wavelength();
    ChannelVector(
        element_distances(config, loc)
            .into_iter()
            .map(|r| point_response(lambda, r))
            .collect(),
    )
}

/// Normalized correlation |h_a^H h_b| / (|h_a| |h_b|).
pub fn correlation(a: &ChannelVector, b: &ChannelVector) -> f64 {
    let denom = a.norm() * b.norm();
    (a.response(&b.0).norm() / denom).min(1.0)
}

pub fn channel_correlation(config: &ArrayConfig, a: &UserLocation, b: &UserLocation) -> f64 {
    correlation(&channel_vector(config, a), &channel_vector(config, b))
}

/// Rayleigh distance 2 D^2 / lambda.
pub fn rayleigh_distance(config: &ArrayConfig) -> f64 {
    let d = config.aperture();
    2.0 * d * d / config.wavelength()
}

/// Fresnel distance (D^4 / (8 lambda))^(1/3).
pub fn fresnel_distance(config: &ArrayConfig) -> f64 {
    (config.aperture().powi(4) / (8.0 * config.wavelength())).cbrt()
}

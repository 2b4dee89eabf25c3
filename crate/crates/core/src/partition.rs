//! Correlation-based partition of the coverage area into polar sectors.
//!
//! Angular edges are the ULA's orthogonal directional cosines
//! u_n = (2n - N + 1) / N (boresight angle psi_n = asin u_n). Within each
//! angular column the range edges are
//!
//! ```text
//! r_s = (1/s) * N^2 d^2 cos(psi) / (2 lambda beta_delta),   s = 1, 2, ...
//! ```
//!
//! evaluated at the column's centre angle. For adjacent rings the
//! quadratic-phase argument of the Fresnel correlation is sqrt(beta_delta cos psi),
//! so a correlation target rho maps to beta_delta = x^2 with g(x) = rho.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayConfig, UserLocation};
use crate::error::{Error, Result};
use crate::fresnel::beta_from_correlation;

/// Coverage rectangle in (psi, r). Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub r_min: f64,
    pub r_max: f64,
    pub psi_min: f64,
    pub psi_max: f64,
}

impl Coverage {
    pub fn from_degrees(r_min: f64, r_max: f64, psi_min_deg: f64, psi_max_deg: f64) -> Self {
        Self {
            r_min,
            r_max,
            psi_min: psi_min_deg.to_radians(),
            psi_max: psi_max_deg.to_radians(),
        }
    }

    /// 0.5 m to 6 m, -40 to 40 degrees.
    pub fn reference() -> Self {
        Self::from_degrees(0.5, 6.0, -40.0, 40.0)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            out.push(format!(
                "coverage requires 0 < r_min < r_max (got r_min = {}, r_max = {})",
                self.r_min, self.r_max
            ));
        }
        let lim = std::f64::consts::FRAC_PI_2;
        if !(self.psi_min < self.psi_max && self.psi_min > -lim && self.psi_max < lim) {
            out.push(format!(
                "coverage requires -90 < psi_min < psi_max < 90 degrees (got {} .. {})",
                self.psi_min.to_degrees(),
                self.psi_max.to_degrees()
            ));
        }
        out
    }

    pub fn contains(&self, loc: &UserLocation) -> bool {
        (self.psi_min..=self.psi_max).contains(&loc.psi) && (self.r_min..=self.r_max).contains(&loc.range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub coverage: Coverage,
    /// Target adjacent-ring correlation, if beta_delta was derived from one.
    pub correlation: Option<f64>,
    pub beta_delta: f64,
}

impl PartitionSpec {
    pub fn from_correlation(coverage: Coverage, rho: f64) -> Result<Self> {
        let spec = Self {
            coverage,
            correlation: Some(rho),
            beta_delta: sampling_beta(rho)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_beta(coverage: Coverage, beta_delta: f64) -> Result<Self> {
        let spec = Self {
            coverage,
            correlation: None,
            beta_delta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.coverage.violations();
        if let Some(rho) = self.correlation {
            if !(rho > 0.0 && rho < 1.0) {
                out.push(format!("partition.correlation must lie in (0, 1) (got {rho})"));
            }
        }
        if !(self.beta_delta > 0.0 && self.beta_delta.is_finite()) {
            out.push(format!("partition.beta_delta must be > 0 (got {})", self.beta_delta));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Ring parameter for a correlation target: the square of the Fresnel root.
pub fn sampling_beta(rho: f64) -> Result<f64> {
    let x = beta_from_correlation(rho)?;
    Ok(x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularSample {
    pub u: f64,
    pub psi: f64,
}

/// The N orthogonal directional cosines, ascending.
pub fn angular_samples(config: &ArrayConfig) -> Vec<AngularSample> {
    let n = config.num_elements as f64;
    (0..config.num_elements)
        .map(|i| {
            let u = (2.0 * i as f64 - n + 1.0) / n;
            AngularSample { u, psi: u.asin() }
        })
        .collect()
}

/// Plane-wave steering vector for directional cosine `u`.
pub fn far_field_steering(config: &ArrayConfig, u: f64) -> Vec<Complex64> {
    let beta = config.propagation_constant();
    (0..config.num_elements)
        .map(|n| Complex64::from_polar(1.0, -beta * config.element_y(n) * u))
        .collect()
}

/// Outermost ring radius r_1 at boresight angle `psi`.
pub fn first_ring(config: &ArrayConfig, beta_delta: f64, psi: f64) -> f64 {
    let nd = config.num_elements as f64 * config.element_spacing;
    nd * nd * psi.cos() / (2.0 * config.wavelength() * beta_delta)
}

/// Ring radii r_s = r_1 / s that fall in [r_min, r_max], decreasing.
pub fn radial_samples(config: &ArrayConfig, beta_delta: f64, psi: f64, r_min: f64, r_max: f64) -> Vec<f64> {
    let r1 = first_ring(config, beta_delta, psi);
    if !(r1 > 0.0) || !r1.is_finite() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut s = ((r1 / r_max).floor() as u64).max(1);
    loop {
        let r = r1 / s as f64;
        if r < r_min {
            break;
        }
        if r <= r_max {
            out.push(r);
        }
        s += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub id: usize,
    pub column: usize,
    pub row: usize,
    pub psi_lo: f64,
    pub psi_hi: f64,
    pub r_lo: f64,
    pub r_hi: f64,
}

impl Sector {
    pub fn center(&self) -> UserLocation {
        UserLocation {
            psi: 0.5 * (self.psi_lo + self.psi_hi),
            range: 0.5 * (self.r_lo + self.r_hi),
        }
    }

    pub fn contains(&self, loc: &UserLocation) -> bool {
        (self.psi_lo..=self.psi_hi).contains(&loc.psi) && (self.r_lo..=self.r_hi).contains(&loc.range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorGrid {
    pub array: ArrayConfig,
    pub spec: PartitionSpec,
    /// Angular column edges (boresight angles), ascending.
    pub angular_edges: Vec<f64>,
    /// Directional cosines of the angular edges.
    pub angular_edges_u: Vec<f64>,
    /// Per column: range edges, strictly decreasing from r_max to r_min.
    pub radial_edges: Vec<Vec<f64>>,
    pub sectors: Vec<Sector>,
    column_offsets: Vec<usize>,
}

pub fn build_grid(spec: &PartitionSpec, config: &ArrayConfig) -> Result<SectorGrid> {
    spec.validate()?;
    let cov = spec.coverage;

    let mut angular_edges = vec![cov.psi_min];
    angular_edges.extend(
        angular_samples(config)
            .into_iter()
            .map(|a| a.psi)
            .filter(|&p| p > cov.psi_min && p < cov.psi_max),
    );
    angular_edges.push(cov.psi_max);

    let mut radial_edges = Vec::new();
    let mut sectors = Vec::new();
    let mut column_offsets = Vec::new();
    for (column, w) in angular_edges.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let centre = 0.5 * (lo + hi);
        let mut edges = vec![cov.r_max];
        edges.extend(
            radial_samples(config, spec.beta_delta, centre, cov.r_min, cov.r_max)
                .into_iter()
                .filter(|&r| r > cov.r_min && r < cov.r_max),
        );
        edges.push(cov.r_min);

        column_offsets.push(sectors.len());
        for (row, rw) in edges.windows(2).enumerate() {
            sectors.push(Sector {
                id: sectors.len(),
                column,
                row,
                psi_lo: lo,
                psi_hi: hi,
                r_lo: rw[1],
                r_hi: rw[0],
            });
        }
        radial_edges.push(edges);
    }
    if sectors.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(SectorGrid {
        array: *config,
        spec: *spec,
        angular_edges_u: angular_edges.iter().map(|p| p.sin()).collect(),
        angular_edges,
        radial_edges,
        sectors,
        column_offsets,
    })
}

impl SectorGrid {
    pub fn num_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn num_columns(&self) -> usize {
        self.radial_edges.len()
    }

    pub fn coverage(&self) -> &Coverage {
        &self.spec.coverage
    }

    pub fn sector(&self, id: usize) -> Result<&Sector> {
        self.sectors.get(id).ok_or(Error::UnknownSector(id))
    }

    /// Sector containing `loc`. Intervals are closed below and open above,
    /// except that the coverage's own upper edges are included.
    pub fn locate(&self, loc: &UserLocation) -> Result<usize> {
        let cov = self.coverage();
        if !cov.contains(loc) {
            return Err(Error::OutOfCoverage {
                psi_deg: loc.psi.to_degrees(),
                range: loc.range,
            });
        }
        let column = (self.angular_edges.partition_point(|&e| e <= loc.psi) - 1).min(self.num_columns() - 1);
        let edges = &self.radial_edges[column];
        // edges decrease; row i covers [edges[i + 1], edges[i])
        let rows = edges.len() - 1;
        let row = edges.partition_point(|&e| e > loc.range).saturating_sub(1).min(rows - 1);
        Ok(self.column_offsets[column] + row)
    }

    /// Plain-text sector table: id, angular interval in degrees, range interval in metres.
    pub fn to_table(&self) -> String {
        let mut out = String::from("sector,column,row,psi_lo_deg,psi_hi_deg,r_lo_m,r_hi_m\n");
        for s in &self.sectors {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                s.id,
                s.column,
                s.row,
                s.psi_lo.to_degrees(),
                s.psi_hi.to_degrees(),
                s.r_lo,
                s.r_hi
            );
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let grid: SectorGrid = serde_json::from_str(&fs::read_to_string(path)?)?;
        if grid.sectors.is_empty() || grid.column_offsets.len() != grid.radial_edges.len() {
            return Err(Error::corrupt(path, "inconsistent grid descriptor"));
        }
        Ok(grid)
    }
}

/// Smallest ring parameter on a fine scan whose grid has exactly `target`
/// sectors, if any.
pub fn calibrate_beta(coverage: Coverage, config: &ArrayConfig, target: usize) -> Option<f64> {
    (1..=4000)
        .map(|i| i as f64 * 0.005)
        .find(|&b| {
            PartitionSpec::with_beta(coverage, b)
                .and_then(|s| build_grid(&s, config))
                .is_ok_and(|g| g.num_sectors() == target)
        })
}

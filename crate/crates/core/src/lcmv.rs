//! Closed-form linearly constrained minimum variance (LCMV) weights.
//!
//! The beamformer response at location p is h(p)^H w. With the constraint
//! matrix C = [h(p_1), ..., h(p_K)] (desired user first) and desired response
//! d = [1, 0, ..., 0], the weights
//!
//! ```text
//! w = R^-1 C (C^H R^-1 C)^-1 d
//! ```
//!
//! satisfy C^H w = d exactly: unit gain at the desired user and nulls at every
//! interferer.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{channel_vector, correlation, inner, ArrayConfig, ChannelVector, UserLocation};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Cholesky};

/// Pairwise channel correlation above which two users count as coincident.
pub const COINCIDENCE_LIMIT: f64 = 0.95;

/// Gram-matrix condition number above which the constraints are singular.
pub const SINGULARITY_LIMIT: f64 = 1e12;

/// One desired user plus K - 1 interferers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcbfScenario {
    pub desired: UserLocation,
    pub interferers: Vec<UserLocation>,
}

impl NcbfScenario {
    pub fn new(desired: UserLocation, interferers: Vec<UserLocation>) -> Self {
        Self { desired, interferers }
    }

    pub fn num_users(&self) -> usize {
        1 + self.interferers.len()
    }

    /// All users, desired first.
    pub fn users(&self) -> impl Iterator<Item = &UserLocation> {
        std::iter::once(&self.desired).chain(self.interferers.iter())
    }
}

#[derive(Debug, Clone)]
pub enum Covariance {
    Identity,
    Matrix(CMatrix),
}

#[derive(Debug, Clone)]
pub struct LcmvInputs {
    /// N x K, column k is h(p_k).
    pub constraints: CMatrix,
    pub desired_response: Vec<f64>,
    pub covariance: Covariance,
}

impl LcmvInputs {
    pub fn with_covariance(mut self, r: CMatrix) -> Self {
        self.covariance = Covariance::Matrix(r);
        self
    }
}

pub fn build_constraints(config: &ArrayConfig, scenario: &NcbfScenario) -> Result<LcmvInputs> {
    build_constraints_with_limit(config, scenario, COINCIDENCE_LIMIT)
}

/// As [`build_constraints`] with a caller-chosen coincidence limit; a limit
/// of 1 leaves only the singularity check in the solver.
pub fn build_constraints_with_limit(config: &ArrayConfig, scenario: &NcbfScenario, limit: f64) -> Result<LcmvInputs> {
    let channels: Vec<ChannelVector> = scenario.users().map(|u| channel_vector(config, u)).collect();
    for i in 0..channels.len() {
        for j in i + 1..channels.len() {
            let rho = correlation(&channels[i], &channels[j]);
            if rho > limit {
                return Err(Error::CoincidentUsers {
                    first: i,
                    second: j,
                    correlation: rho,
                    limit,
                });
            }
        }
    }
    let k = channels.len();
    let mut desired_response = vec![0.0; k];
    desired_response[0] = 1.0;
    let columns: Vec<Vec<Complex64>> = channels.into_iter().map(|c| c.0).collect();
    Ok(LcmvInputs {
        constraints: CMatrix::from_columns(&columns),
        desired_response,
        covariance: Covariance::Identity,
    })
}

/// Unnormalized LCMV weights and the condition number of C^H R^-1 C.
#[derive(Debug, Clone)]
pub struct LcmvSolution {
    pub raw: Vec<Complex64>,
    pub condition: f64,
}

pub fn solve_lcmv_raw(inputs: &LcmvInputs) -> Result<LcmvSolution> {
    let c = &inputs.constraints;
    let (n, k) = (c.rows(), c.cols());
    if inputs.desired_response.len() != k {
        return Err(Error::ShapeMismatch {
            expected: k,
            got: inputs.desired_response.len(),
        });
    }

    let columns: Vec<Vec<Complex64>> = (0..k).map(|j| c.column(j)).collect();
    let whitened: Vec<Vec<Complex64>> = match &inputs.covariance {
        Covariance::Identity => columns.clone(),
        Covariance::Matrix(r) => {
            if r.rows() != n || r.cols() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: r.rows(),
                });
            }
            if !r.is_hermitian(1e-12) {
                return Err(Error::NotPositiveDefinite);
            }
            let chol = Cholesky::factor(r)?;
            columns.iter().map(|col| chol.solve(col)).collect()
        }
    };

    let gram = CMatrix::from_fn(k, k, |i, j| inner(&columns[i], &whitened[j]));
    let chol = Cholesky::factor(&gram).map_err(|_| Error::SingularConstraints {
        condition: f64::INFINITY,
    })?;
    let condition = chol.condition_1(&gram);
    if !(condition <= SINGULARITY_LIMIT) {
        return Err(Error::SingularConstraints { condition });
    }

    let d: Vec<Complex64> = inputs.desired_response.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let coeffs = chol.solve(&d);
    let mut raw = vec![Complex64::new(0.0, 0.0); n];
    for (col, a) in whitened.iter().zip(&coeffs) {
        for (w, z) in raw.iter_mut().zip(col) {
            *w += z * a;
        }
    }
    Ok(LcmvSolution { raw, condition })
}

/// Unit-power, phase-referenced LCMV weights.
pub fn solve_lcmv(inputs: &LcmvInputs) -> Result<BeamWeights> {
    BeamWeights::new(solve_lcmv_raw(inputs)?.raw).normalize_and_reference()
}

pub fn lcmv_weights(config: &ArrayConfig, scenario: &NcbfScenario) -> Result<BeamWeights> {
    solve_lcmv(&build_constraints(config, scenario)?)
}

/// Complex beamforming weights, one per element.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights(Vec<Complex64>);

impl BeamWeights {
    pub fn new(weights: Vec<Complex64>) -> Self {
        Self(weights)
    }

    pub fn from_polar(magnitudes: &[f64], phases: &[f64]) -> Self {
        Self(
            magnitudes
                .iter()
                .zip(phases)
                .map(|(&a, &phi)| Complex64::from_polar(a, phi))
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm()).collect()
    }

    /// Phases wrapped to [-pi, pi).
    pub fn phases(&self) -> Vec<f64> {
        self.0.iter().map(|z| wrap_phase(z.arg())).collect()
    }

    /// Rotates the global phase so element 1 has phase 0 and scales to unit power.
    pub fn normalize_and_reference(&self) -> Result<Self> {
        let power = self.power();
        if !(power > 0.0) {
            return Err(Error::ZeroVector);
        }
        if !power.is_finite() {
            return Err(Error::NonFinite("beam weights"));
        }
        let first = self.0[0];
        let rotation = if first.norm() > 0.0 {
            first.conj() / first.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let scale = 1.0 / power.sqrt();
        let mut out: Vec<Complex64> = self.0.iter().map(|z| z * rotation * scale).collect();
        // remove rounding residue so phi_1 is exactly zero
        out[0] = Complex64::new(out[0].norm(), 0.0);
        Ok(Self(out))
    }
}

/// Wraps an angle to [-pi, pi).
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayConfig;

    fn loc(deg: f64, r: f64) -> UserLocation {
        UserLocation::from_degrees(deg, r).unwrap()
    }

    fn fig5_first() -> NcbfScenario {
        NcbfScenario::new(loc(-32.0, 3.4), vec![loc(-10.0, 3.7), loc(-40.0, 4.6)])
    }

    #[test]
    fn single_user_is_matched_filter() {
        let cfg = ArrayConfig::xl_ula_24();
        let sc = NcbfScenario::new(loc(5.0, 2.0), vec![]);
        let inputs = build_constraints(&cfg, &sc).unwrap();
        assert_eq!((inputs.constraints.rows(), inputs.constraints.cols()), (24, 1));
        assert_eq!(inputs.desired_response, vec![1.0]);
        let sol = solve_lcmv_raw(&inputs).unwrap();
        let h = channel_vector(&cfg, &sc.desired);
        let resp = h.response(&sol.raw);
        assert!((resp - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        // w = h / |h|^2
        let hh = h.norm().powi(2);
        for (w, z) in sol.raw.iter().zip(h.as_slice()) {
            assert!((w - z / hh).norm() < 1e-9 * w.norm());
        }
    }

    #[test]
    fn fig5_constraint_shape() {
        let cfg = ArrayConfig::xl_ula_24();
        let inputs = build_constraints(&cfg, &fig5_first()).unwrap();
        assert_eq!((inputs.constraints.rows(), inputs.constraints.cols()), (24, 3));
        assert_eq!(inputs.desired_response, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn coincident_users_rejected() {
        let cfg = ArrayConfig::xl_ula_24();
        let sc = NcbfScenario::new(loc(3.0, 2.0), vec![loc(3.0, 2.0)]);
        assert!(matches!(
            build_constraints(&cfg, &sc),
            Err(Error::CoincidentUsers { first: 0, second: 1, .. })
        ));
    }

    #[test]
    fn nulls_and_unit_gain() {
        let cfg = ArrayConfig::xl_ula_24();
        let sc = fig5_first();
        let inputs = build_constraints(&cfg, &sc).unwrap();
        let sol = solve_lcmv_raw(&inputs).unwrap();
        let g = channel_vector(&cfg, &sc.desired).response(&sol.raw);
        assert!((g.re - 1.0).abs() < 1e-10 && g.im.abs() < 1e-10);
        let w = solve_lcmv(&inputs).unwrap();
        let gd = channel_vector(&cfg, &sc.desired).response(w.as_slice()).norm();
        for i in &sc.interferers {
            let gi = channel_vector(&cfg, i).response(w.as_slice()).norm();
            assert!(gi / gd < 1e-10);
        }
    }

    #[test]
    fn covariance_scale_invariance() {
        let cfg = ArrayConfig::xl_ula_24();
        let base = build_constraints(&cfg, &fig5_first()).unwrap();
        // a non-trivial Hermitian PD covariance: I + small Toeplitz coupling
        let r = CMatrix::from_fn(24, 24, |i, j| {
            let d = i as f64 - j as f64;
            if i == j {
                Complex64::new(2.0, 0.0)
            } else {
                Complex64::from_polar(0.3f64.powf(d.abs()), 0.2 * d)
            }
        });
        let a = solve_lcmv_raw(&base.clone().with_covariance(r.clone())).unwrap().raw;
        let b = solve_lcmv_raw(&base.with_covariance(r.scale(37.5))).unwrap().raw;
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn normalize_examples() {
        let w = BeamWeights::new(vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        ]);
        let n = w.normalize_and_reference().unwrap();
        assert_eq!(n.as_slice()[0], Complex64::new(1.0, 0.0));
        assert!(n.as_slice()[1..].iter().all(|z| z.norm() == 0.0));

        let uniform = BeamWeights::new(vec![Complex64::from_polar(1.0 / 8.0, PI / 4.0); 8]);
        let n = uniform.normalize_and_reference().unwrap();
        for z in n.as_slice() {
            assert!(z.arg().abs() < 1e-15);
            assert!((z.norm() - 1.0 / 8f64.sqrt()).abs() < 1e-15);
        }

        let zero = BeamWeights::new(vec![Complex64::new(0.0, 0.0); 3]);
        assert!(matches!(zero.normalize_and_reference(), Err(Error::ZeroVector)));
    }

    #[test]
    fn normalize_keeps_pattern_ratios() {
        let cfg = ArrayConfig::xl_ula_24();
        let sc = fig5_first();
        let raw = BeamWeights::new(solve_lcmv_raw(&build_constraints(&cfg, &sc).unwrap()).unwrap().raw);
        let norm = raw.normalize_and_reference().unwrap();
        let hd = channel_vector(&cfg, &sc.desired);
        let probe = channel_vector(&cfg, &loc(12.0, 2.2));
        let before = probe.response(raw.as_slice()).norm() / hd.response(raw.as_slice()).norm();
        let after = probe.response(norm.as_slice()).norm() / hd.response(norm.as_slice()).norm();
        assert!((before / after - 1.0).abs() < 1e-12);
        assert!((norm.power() - 1.0).abs() < 1e-12);
        assert_eq!(norm.phases()[0], 0.0);
    }

    #[test]
    fn normalize_is_idempotent() {
        let cfg = ArrayConfig::xl_ula_24();
        let w = lcmv_weights(&cfg, &fig5_first()).unwrap();
        let again = w.normalize_and_reference().unwrap();
        for (a, b) in w.as_slice().iter().zip(again.as_slice()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), -PI);
        assert_eq!(wrap_phase(-PI), -PI);
        assert!((wrap_phase(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
        assert!((wrap_phase(0.25) - 0.25).abs() < 1e-15);
    }
}

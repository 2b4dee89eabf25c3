//! Beam patterns, interference suppression against the LCMV reference,
//! and loss statistics across sectors.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{channel_vector, ArrayConfig, UserLocation};
use crate::codebook::{predict_with, BeamEstimator};
use crate::dataset::{sample_scenario, DB_FLOOR};
use crate::error::{Error, Result};
use crate::lcmv::{build_constraints_with_limit, solve_lcmv, BeamWeights, NcbfScenario};
use crate::partition::SectorGrid;

/// Null depths beyond this are reported as this value.
pub const SUPPRESSION_CAP_DB: f64 = 160.0;

/// Gain at `loc` relative to the gain at `desired`, in dB.
pub fn relative_gain(config: &ArrayConfig, weights: &BeamWeights, loc: &UserLocation, desired: &UserLocation) -> Result<f64> {
    let g0 = channel_vector(config, desired).response(weights.as_slice()).norm();
    if !(g0 > 0.0) {
        return Err(Error::ZeroDesiredGain);
    }
    let g = channel_vector(config, loc).response(weights.as_slice()).norm();
    Ok(if g > 0.0 { (20.0 * (g / g0).log10()).max(DB_FLOOR) } else { DB_FLOOR })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutMode {
    /// Sweep the angle (radians) at a fixed range.
    Angular { range: f64 },
    /// Sweep the range at a fixed angle (radians).
    Radial { psi: f64 },
}

/// Relative gain sampled uniformly over `[from, to]` along a cut. The
/// returned coordinate is degrees for angular cuts and metres for radial ones.
pub fn pattern_cut(
    config: &ArrayConfig,
    weights: &BeamWeights,
    desired: &UserLocation,
    mode: CutMode,
    (from, to): (f64, f64),
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    (0..samples)
        .map(|i| {
            let t = if samples > 1 { i as f64 / (samples - 1) as f64 } else { 0.0 };
            let x = from + t * (to - from);
            let (loc, coord) = match mode {
                CutMode::Angular { range } => (UserLocation { psi: x, range }, x.to_degrees()),
                CutMode::Radial { psi } => (UserLocation { psi, range: x }, x),
            };
            Ok((coord, relative_gain(config, weights, &loc, desired)?))
        })
        .collect()
}

pub fn pattern_csv(mode: CutMode, rows: &[(f64, f64)]) -> String {
    let mut s = match mode {
        CutMode::Angular { .. } => String::from("psi_deg,gain_db\n"),
        CutMode::Radial { .. } => String::from("range_m,gain_db\n"),
    };
    for (x, g) in rows {
        let _ = writeln!(s, "{x},{g}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionReport {
    pub scenario: NcbfScenario,
    /// One per user, desired first (always 0 dB).
    pub relative_gain_db: Vec<f64>,
    /// Per interferer, capped at [`SUPPRESSION_CAP_DB`].
    pub suppression_db: Vec<f64>,
    pub lcmv_suppression_db: Vec<f64>,
    /// Estimator suppression minus LCMV suppression.
    pub gap_db: Vec<f64>,
}

impl SuppressionReport {
    pub fn min_suppression(&self) -> f64 {
        self.suppression_db.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn suppression_report(
    config: &ArrayConfig,
    scenario: &NcbfScenario,
    weights: &BeamWeights,
    lcmv: &BeamWeights,
) -> Result<SuppressionReport> {
    let d = &scenario.desired;
    let relative_gain_db = scenario
        .users()
        .map(|u| relative_gain(config, weights, u, d))
        .collect::<Result<Vec<_>>>()?;
    let cap = |g: f64| (-g).min(SUPPRESSION_CAP_DB);
    let suppression_db: Vec<f64> = relative_gain_db[1..].iter().map(|&g| cap(g)).collect();
    let lcmv_suppression_db = scenario
        .interferers
        .iter()
        .map(|u| relative_gain(config, lcmv, u, d).map(cap))
        .collect::<Result<Vec<_>>>()?;
    let gap_db = suppression_db
        .iter()
        .zip(&lcmv_suppression_db)
        .map(|(a, b)| a - b)
        .collect();
    Ok(SuppressionReport {
        scenario: scenario.clone(),
        relative_gain_db,
        suppression_db,
        lcmv_suppression_db,
        gap_db,
    })
}

/// LCMV weights used as the comparison reference. Only the singularity
/// check applies, so collinear users beyond the sampling guard still get a
/// reference.
pub fn lcmv_reference(config: &ArrayConfig, scenario: &NcbfScenario) -> Result<BeamWeights> {
    solve_lcmv(&build_constraints_with_limit(config, scenario, 1.0)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutcome {
    Report { sector: usize, report: SuppressionReport },
    Skipped { scenario: NcbfScenario, reason: String },
}

/// Runs every scenario through `estimator`; scenarios that cannot be served
/// (outside coverage, missing sector, degenerate reference) are skipped with
/// the reason.
pub fn evaluate_scenarios<E: BeamEstimator + ?Sized>(
    estimator: &E,
    grid: &SectorGrid,
    num_users: usize,
    scenarios: &[NcbfScenario],
) -> Result<Vec<EvalOutcome>> {
    let config = grid.array;
    scenarios
        .iter()
        .map(|sc| {
            let served = predict_with(estimator, grid, num_users, sc)
                .and_then(|p| Ok((p.sector, p.weights, lcmv_reference(&config, sc)?)));
            match served {
                Ok((sector, w, reference)) => Ok(EvalOutcome::Report {
                    sector,
                    report: suppression_report(&config, sc, &w, &reference)?,
                }),
                Err(
                    e @ (Error::OutOfCoverage { .. }
                    | Error::IncompleteCodebook(_)
                    | Error::KMismatch { .. }
                    | Error::SingularConstraints { .. }
                    | Error::ZeroDesiredGain),
                ) => Ok(EvalOutcome::Skipped {
                    scenario: sc.clone(),
                    reason: e.to_string(),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub evaluated: usize,
    pub skipped: usize,
    pub median_suppression_db: f64,
    pub min_suppression_db: f64,
    /// Fraction of evaluated scenarios with every interferer at or above `threshold_db`.
    pub fraction_all_above: f64,
    pub threshold_db: f64,
    pub max_abs_gap_db: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn summarize(outcomes: &[EvalOutcome], threshold_db: f64) -> SweepSummary {
    let reports: Vec<&SuppressionReport> = outcomes
        .iter()
        .filter_map(|o| match o {
            EvalOutcome::Report { report, .. } => Some(report),
            _ => None,
        })
        .collect();
    let mut all: Vec<f64> = reports.iter().flat_map(|r| r.suppression_db.iter().copied()).collect();
    let passing = reports.iter().filter(|r| r.min_suppression() >= threshold_db).count();
    SweepSummary {
        evaluated: reports.len(),
        skipped: outcomes.len() - reports.len(),
        min_suppression_db: all.iter().copied().fold(f64::INFINITY, f64::min),
        median_suppression_db: median(&mut all),
        fraction_all_above: if reports.is_empty() { 0.0 } else { passing as f64 / reports.len() as f64 },
        threshold_db,
        max_abs_gap_db: reports
            .iter()
            .flat_map(|r| r.gap_db.iter().map(|g| g.abs()))
            .fold(0.0, f64::max),
    }
}

/// One row per scenario: evaluated rows carry per-interferer columns,
/// skipped rows carry the reason.
pub fn sweep_csv(outcomes: &[EvalOutcome], num_users: usize) -> String {
    let mut s = String::from("scenario,status,sector,desired_psi_deg,desired_range_m");
    for j in 1..num_users {
        let _ = write!(
            s,
            ",i{j}_psi_deg,i{j}_range_m,i{j}_suppression_db,i{j}_lcmv_suppression_db,i{j}_gap_db"
        );
    }
    s.push_str(",reason\n");
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            EvalOutcome::Report { sector, report } => {
                let d = report.scenario.desired;
                let _ = write!(s, "{i},ok,{sector},{},{}", d.psi_deg(), d.range);
                for (j, u) in report.scenario.interferers.iter().enumerate() {
                    let _ = write!(
                        s,
                        ",{},{},{},{},{}",
                        u.psi_deg(),
                        u.range,
                        report.suppression_db[j],
                        report.lcmv_suppression_db[j],
                        report.gap_db[j]
                    );
                }
                s.push_str(",\n");
            }
            EvalOutcome::Skipped { scenario, reason } => {
                let d = scenario.desired;
                let _ = write!(s, "{i},skipped,,{},{}", d.psi_deg(), d.range);
                for _ in 1..num_users {
                    s.push_str(",,,,,");
                }
                let _ = writeln!(s, ",\"{}\"", reason.replace('"', "'"));
            }
        }
    }
    s
}

/// Random evaluation scenarios: the desired user is uniform over the
/// coverage (or over the listed sectors, chosen uniformly), interferers
/// follow the training-data placement rule. Streams are disjoint from the
/// per-sector dataset streams.
pub fn random_scenarios(
    grid: &SectorGrid,
    num_users: usize,
    count: usize,
    seed: u64,
    sectors: Option<&[usize]>,
) -> Result<Vec<NcbfScenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 40);
    let cov = *grid.coverage();
    (0..count)
        .map(|_| {
            let sector = match sectors {
                Some(list) if !list.is_empty() => list[rng.gen_range(0..list.len())],
                _ => {
                    let loc = UserLocation {
                        psi: rng.gen_range(cov.psi_min..cov.psi_max),
                        range: rng.gen_range(cov.r_min..cov.r_max),
                    };
                    grid.locate(&loc)?
                }
            };
            sample_scenario(&grid.array, grid, sector, num_users, &mut rng)
        })
        .collect()
}

/// A user location in boundary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub psi_deg: f64,
    pub range_m: f64,
}

/// One line of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub desired: LocationRecord,
    #[serde(default)]
    pub interferers: Vec<LocationRecord>,
}

impl ScenarioRecord {
    pub fn to_scenario(&self) -> Result<NcbfScenario> {
        let conv = |l: &LocationRecord| UserLocation::from_degrees(l.psi_deg, l.range_m);
        Ok(NcbfScenario::new(
            conv(&self.desired)?,
            self.interferers.iter().map(conv).collect::<Result<_>>()?,
        ))
    }
}

/// Parses JSON-lines scenarios; blank lines and `#` comments are ignored.
pub fn parse_scenarios(text: &str) -> Result<Vec<NcbfScenario>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let rec: ScenarioRecord = serde_json::from_str(l)
                .map_err(|e| Error::invalid(format!("scenario line {}: {e}", i + 1)))?;
            rec.to_scenario()
        })
        .collect()
}

/// Final losses of one sector's two models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorLosses {
    pub sector: usize,
    pub phase_train: f64,
    pub phase_test: f64,
    pub magnitude_train: f64,
    pub magnitude_test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Population convention: divides by the count.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub sectors: Vec<SectorLosses>,
    pub phase_train: MeanSd,
    pub phase_test: MeanSd,
    pub magnitude_train: MeanSd,
    pub magnitude_test: MeanSd,
}

pub fn loss_statistics(sectors: &[SectorLosses]) -> Result<LossStats> {
    if sectors.is_empty() {
        return Err(Error::invalid("loss statistics need at least one sector"));
    }
    let col = |f: fn(&SectorLosses) -> f64| MeanSd::of(&sectors.iter().map(f).collect::<Vec<_>>());
    Ok(LossStats {
        sectors: sectors.to_vec(),
        phase_train: col(|s| s.phase_train),
        phase_test: col(|s| s.phase_test),
        magnitude_train: col(|s| s.magnitude_train),
        magnitude_test: col(|s| s.magnitude_test),
    })
}

impl LossStats {
    /// Table with one row per estimator: train/test mean and SD.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# sd: population (divide by sector count)\n");
        let _ = writeln!(s, "# sectors: {}", self.sectors.len());
        s.push_str("estimator,unit,train_mean,train_sd,test_mean,test_sd\n");
        let _ = writeln!(
            s,
            "phase,rad,{},{},{},{}",
            self.phase_train.mean, self.phase_train.sd, self.phase_test.mean, self.phase_test.sd
        );
        let _ = writeln!(
            s,
            "magnitude,dB,{},{},{},{}",
            self.magnitude_train.mean, self.magnitude_train.sd, self.magnitude_test.mean, self.magnitude_test.sd
        );
        s
    }

    pub fn sectors_csv(&self) -> String {
        let mut s = String::from("sector,phase_train_rad,phase_test_rad,magnitude_train_db,magnitude_test_db\n");
        for r in &self.sectors {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.sector, r.phase_train, r.phase_test, r.magnitude_train, r.magnitude_test
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcmv::lcmv_weights;
    use num_complex::Complex64;

    fn loc(d: f64, r: f64) -> UserLocation {
        UserLocation::from_degrees(d, r).unwrap()
    }

    #[test]
    fn self_gain_is_zero_db() {
        let c = ArrayConfig::xl_ula_24();
        let w = lcmv_weights(&c, &NcbfScenario::new(loc(10.0, 2.0), vec![])).unwrap();
        assert_eq!(relative_gain(&c, &w, &loc(10.0, 2.0), &loc(10.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn matched_filter_peaks_at_focus() {
        let c = ArrayConfig::xl_ula_24();
        let focus = loc(-12.0, 1.8);
        let w = BeamWeights::new(channel_vector(&c, &focus).0);
        for i in 0..60 {
            for j in 0..40 {
                let p = loc(-40.0 + i as f64 * 80.0 / 59.0, 0.5 + j as f64 * 5.5 / 39.0);
                // Cauchy-Schwarz bounds |h^H h_focus| by |h| |h_focus|, and
                // closer points have larger |h|; normalize for a fair peak test
                let g = relative_gain(&c, &w, &p, &focus).unwrap();
                let norm_ratio = 20.0 * (channel_vector(&c, &p).norm() / channel_vector(&c, &focus).norm()).log10();
                assert!(g - norm_ratio <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_weights_fail() {
        let c = ArrayConfig::xl_ula_24();
        let w = BeamWeights::new(vec![Complex64::new(0.0, 0.0); 24]);
        assert!(matches!(relative_gain(&c, &w, &loc(0.0, 1.0), &loc(1.0, 1.0)), Err(Error::ZeroDesiredGain)));
    }

    #[test]
    fn scale_invariance() {
        let c = ArrayConfig::xl_ula_24();
        let w = lcmv_weights(&c, &NcbfScenario::new(loc(3.0, 3.0), vec![loc(-20.0, 1.0)])).unwrap();
        let z = Complex64::from_polar(3.7, 1.1);
        let ws = BeamWeights::new(w.as_slice().iter().map(|x| x * z).collect());
        let p = loc(15.0, 4.0);
        let a = relative_gain(&c, &w, &p, &loc(3.0, 3.0)).unwrap();
        let b = relative_gain(&c, &ws, &p, &loc(3.0, 3.0)).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn uniform_weights_peak_at_boresight() {
        let c = ArrayConfig::xl_ula_24();
        let w = BeamWeights::new(vec![Complex64::new(1.0, 0.0); 24]);
        let cut = pattern_cut(&c, &w, &loc(0.0, 2000.0), CutMode::Angular { range: 2000.0 }, (-0.7, 0.7), 141).unwrap();
        let peak = cut.iter().copied().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        assert!(peak.0.abs() < 1e-9);
        assert!(peak.1.abs() < 1e-9);
        assert_eq!(pattern_cut(&c, &w, &loc(0.0, 1.0), CutMode::Radial { psi: 0.0 }, (1.0, 2.0), 1).unwrap().len(), 1);
    }

    #[test]
    fn null_shows_in_cut() {
        let c = ArrayConfig::xl_ula_24();
        let sc = NcbfScenario::new(loc(-32.0, 3.4), vec![loc(-10.0, 3.7), loc(-40.0, 4.6)]);
        let w = lcmv_weights(&c, &sc).unwrap();
        // radial cut that hits the null exactly at one sample
        let rows = pattern_cut(&c, &w, &sc.desired, CutMode::Radial { psi: (-10f64).to_radians() }, (3.2, 4.2), 11).unwrap();
        let (imin, min) = rows.iter().enumerate().fold((0, f64::INFINITY), |a, (i, r)| if r.1 < a.1 { (i, r.1) } else { a });
        assert!(min <= -60.0);
        assert!((rows[imin].0 - 3.7).abs() <= 0.1 + 1e-9);
        assert!(pattern_csv(CutMode::Radial { psi: 0.0 }, &rows).starts_with("range_m,gain_db\n"));
    }

    #[test]
    fn identical_weights_have_zero_gap() {
        let c = ArrayConfig::xl_ula_24();
        let sc = NcbfScenario::new(loc(-32.0, 3.4), vec![loc(-10.0, 3.7), loc(-40.0, 4.6)]);
        let w = lcmv_weights(&c, &sc).unwrap();
        let r = suppression_report(&c, &sc, &w, &w).unwrap();
        assert_eq!(r.gap_db, vec![0.0, 0.0]);
        assert_eq!(r.relative_gain_db[0], 0.0);
        assert!(r.suppression_db.iter().all(|&s| s >= 120.0));
    }

    #[test]
    fn collinear_reference_exists() {
        let c = ArrayConfig::xl_ula_24();
        let sc = NcbfScenario::new(loc(-10.0, 4.75), vec![loc(38.0, 3.65), loc(38.0, 5.8)]);
        let w = lcmv_reference(&c, &sc).unwrap();
        let r = suppression_report(&c, &sc, &w, &w).unwrap();
        assert!(r.suppression_db.iter().all(|&s| s >= 120.0));
    }

    #[test]
    fn loss_stat_examples() {
        let mk = |s, v| SectorLosses {
            sector: s,
            phase_train: v,
            phase_test: v,
            magnitude_train: 1.0,
            magnitude_test: 1.0,
        };
        let one = loss_statistics(&[mk(0, 0.3)]).unwrap();
        assert_eq!(one.phase_test.sd, 0.0);
        let two = loss_statistics(&[mk(0, 0.08), mk(1, 0.09)]).unwrap();
        assert!((two.phase_test.mean - 0.085).abs() < 1e-15);
        assert!((two.phase_test.sd - 0.005).abs() < 1e-15);
        assert!(loss_statistics(&[]).is_err());
        assert!(two.to_csv().contains("population"));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn scenario_lines() {
        let text = "# fig 5\n{\"desired\":{\"psi_deg\":-32,\"range_m\":3.4},\"interferers\":[{\"psi_deg\":-10,\"range_m\":3.7}]}\n\n";
        let v = parse_scenarios(text).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0].desired.psi + 32f64.to_radians()).abs() < 1e-15);
        assert!(parse_scenarios("{bad").is_err());
    }
}

//! The DNN codebook: one phase model and one magnitude model per sector,
//! routed by the sector grid.
//!
//! On disk a codebook is a directory holding `grid.json`, `manifest.json`,
//! `sector_XXX_phase.mlpw` / `sector_XXX_magnitude.mlpw` and per-model loss
//! curves (`sector_XXX_phase_loss.csv`, ...).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::ArrayConfig;
use crate::dataset::{generate_dataset, label_scenario, load_dataset, normalize_inputs, Dataset};
use crate::error::{Error, Result};
use crate::lcmv::{BeamWeights, NcbfScenario};
use crate::mlp::{init_model, load_model, save_model, train, LossKind, MlpModel, Samples, TrainConfig, TrainReport};
use crate::partition::SectorGrid;

pub const MANIFEST_VERSION: u32 = 1;

/// Beam weights from predicted phases (rad) and magnitudes (dB): magnitudes
/// are renormalized to unit power and the first phase is pinned to zero.
pub fn reconstruct(phases: &[f64], magnitudes_db: &[f64]) -> Result<BeamWeights> {
    if phases.len() != magnitudes_db.len() {
        return Err(Error::ShapeMismatch {
            expected: magnitudes_db.len(),
            got: phases.len(),
        });
    }
    if phases.is_empty() {
        return Err(Error::ZeroVector);
    }
    if !phases.iter().chain(magnitudes_db).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("estimator output"));
    }
    let amps: Vec<f64> = magnitudes_db.iter().map(|db| 10f64.powf(db / 20.0)).collect();
    let power: f64 = amps.iter().map(|a| a * a).sum();
    if !(power > 0.0) {
        return Err(Error::ZeroVector);
    }
    if !power.is_finite() {
        return Err(Error::NonFinite("estimator output"));
    }
    let scale = power.sqrt().recip();
    let amps: Vec<f64> = amps.iter().map(|a| a * scale).collect();
    let mut phi = phases.to_vec();
    phi[0] = 0.0;
    Ok(BeamWeights::from_polar(&amps, &phi))
}

/// Anything that maps a located scenario to (phases, magnitudes in dB).
pub trait BeamEstimator {
    fn estimate(&self, sector: usize, scenario: &NcbfScenario, inputs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Oracle estimator: replays the LCMV labels at their stored (f32) precision.
#[derive(Debug, Clone, Copy)]
pub struct LabelReplay {
    pub array: ArrayConfig,
}

impl BeamEstimator for LabelReplay {
    fn estimate(&self, _sector: usize, scenario: &NcbfScenario, _inputs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (p, m) = label_scenario(&self.array, scenario)?;
        let f32_round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
        Ok((f32_round(p), f32_round(m)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub phase: MlpModel,
    pub magnitude: MlpModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sector: usize,
    pub phases: Vec<f64>,
    pub magnitudes_db: Vec<f64>,
    pub weights: BeamWeights,
}

/// Locates the desired user, normalizes the inputs, queries `estimator`
/// and reconstructs the weights.
pub fn predict_with<E: BeamEstimator + ?Sized>(
    estimator: &E,
    grid: &SectorGrid,
    num_users: usize,
    scenario: &NcbfScenario,
) -> Result<Prediction> {
    if scenario.num_users() != num_users {
        return Err(Error::KMismatch {
            expected: num_users,
            got: scenario.num_users(),
        });
    }
    let sector = grid.locate(&scenario.desired)?;
    let inputs = normalize_inputs(scenario, grid.coverage());
    let (phases, magnitudes_db) = estimator.estimate(sector, scenario, &inputs)?;
    let weights = reconstruct(&phases, &magnitudes_db)?;
    Ok(Prediction {
        sector,
        phases,
        magnitudes_db,
        weights,
    })
}

/// Dataset and training settings shared by every sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub num_users: usize,
    pub hidden_layers: Vec<usize>,
    pub dataset_size: usize,
    pub split: f64,
    pub dataset_seed: u64,
    /// Loss kind is overridden per model.
    pub training: TrainConfig,
}

impl TrainingPlan {
    pub fn dims(&self, num_elements: usize) -> Vec<usize> {
        let mut d = vec![2 * self.num_users];
        d.extend(&self.hidden_layers);
        d.push(num_elements);
        d
    }

    /// Training config for one model; seeds differ per sector and estimator.
    pub fn model_config(&self, sector: usize, loss: LossKind) -> TrainConfig {
        TrainConfig {
            loss,
            seed: model_seed(self.training.seed, sector, loss),
            ..self.training
        }
    }
}

fn model_seed(base: u64, sector: usize, loss: LossKind) -> u64 {
    let which = match loss {
        LossKind::CircularMae => 0,
        LossKind::Rmse => 1,
    };
    base.wrapping_add(((sector as u64) << 1) | which)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Phase,
    Magnitude,
}

pub fn samples(ds: &Dataset, target: Target) -> Result<Samples> {
    let inputs = ds.inputs.iter().map(|&x| x as f64).collect();
    let targets = match target {
        Target::Phase => &ds.phases,
        Target::Magnitude => &ds.magnitudes_db,
    };
    Samples::new(
        inputs,
        targets.iter().map(|&x| x as f64).collect(),
        ds.input_width(),
        ds.num_elements,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub file: String,
    pub sha256: String,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorEntry {
    pub sector: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub phase: ModelEntry,
    pub magnitude: ModelEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub num_users: usize,
    pub num_elements: usize,
    pub dims: Vec<usize>,
    pub grid_sha256: String,
    pub plan: TrainingPlan,
    pub sectors: Vec<SectorEntry>,
    pub complete: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn model_file(sector: usize, target: Target) -> String {
    match target {
        Target::Phase => format!("sector_{sector:03}_phase.mlpw"),
        Target::Magnitude => format!("sector_{sector:03}_magnitude.mlpw"),
    }
}

fn loss_file(sector: usize, target: Target) -> String {
    match target {
        Target::Phase => format!("sector_{sector:03}_phase_loss.csv"),
        Target::Magnitude => format!("sector_{sector:03}_magnitude_loss.csv"),
    }
}

/// Outcome of training one sector.
#[derive(Debug)]
pub struct SectorOutcome {
    pub sector: usize,
    pub result: Result<(SectorEntry, TrainReport, TrainReport)>,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub outcomes: Vec<SectorOutcome>,
    pub manifest: Manifest,
}

impl TrainSummary {
    pub fn failures(&self) -> Vec<(usize, String)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.sector, e.to_string())))
            .collect()
    }
}

/// Reuses a persisted dataset when it matches the plan, otherwise generates one.
fn sector_dataset(
    array: &ArrayConfig,
    grid: &SectorGrid,
    plan: &TrainingPlan,
    sector: usize,
    data_dir: &Path,
) -> Result<(Dataset, Dataset)> {
    if let Ok((train, test, meta)) = load_dataset(data_dir, sector) {
        let matches = meta.num_users == plan.num_users
            && meta.num_elements == array.num_elements
            && meta.seed == plan.dataset_seed
            && meta.split == plan.split
            && meta.train_count + meta.test_count == plan.dataset_size
            && meta.bounds == *grid.coverage();
        if matches {
            return Ok((train, test));
        }
    }
    let (train, test, _) = generate_dataset(
        array,
        grid,
        sector,
        plan.num_users,
        plan.dataset_size,
        plan.split,
        plan.dataset_seed,
        data_dir,
    )?;
    Ok((train, test))
}

fn train_one(
    grid: &SectorGrid,
    plan: &TrainingPlan,
    sector: usize,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<(SectorEntry, TrainReport, TrainReport)> {
    let array = grid.array;
    grid.sector(sector)?;
    let (train_ds, test_ds) = sector_dataset(&array, grid, plan, sector, data_dir)?;
    let dims = plan.dims(array.num_elements);
    let fit = |target: Target, loss: LossKind| -> Result<(ModelEntry, TrainReport)> {
        let cfg = plan.model_config(sector, loss);
        let init = init_model(&dims, cfg.seed)?;
        let (model, report) = train(&init, &samples(&train_ds, target)?, &samples(&test_ds, target)?, &cfg)?;
        let file = model_file(sector, target);
        let path = out_dir.join(&file);
        save_model(&model, &path)?;
        fs::write(out_dir.join(loss_file(sector, target)), report.to_csv())?;
        let entry = ModelEntry {
            sha256: sha256_hex(&fs::read(&path)?),
            file,
            final_train_loss: report.final_train_loss(),
            final_test_loss: report.final_test_loss(),
        };
        Ok((entry, report))
    };
    let (phase, phase_report) = fit(Target::Phase, LossKind::CircularMae)?;
    let (magnitude, mag_report) = fit(Target::Magnitude, LossKind::Rmse)?;
    Ok((
        SectorEntry {
            sector,
            train_count: train_ds.len(),
            test_count: test_ds.len(),
            phase,
            magnitude,
        },
        phase_report,
        mag_report,
    ))
}

fn grid_bytes(grid: &SectorGrid) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(grid)? + "\n").into_bytes())
}

/// Trains the selected sectors (`None` = all) on `workers` threads and
/// writes models plus an updated manifest into `out_dir`. A failing sector
/// is reported in the summary without stopping the others.
pub fn train_codebook(
    grid: &SectorGrid,
    plan: &TrainingPlan,
    sectors: Option<&[usize]>,
    workers: usize,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<TrainSummary> {
    let selected: Vec<usize> = match sectors {
        Some(s) => s.to_vec(),
        None => (0..grid.num_sectors()).collect(),
    };
    for &s in &selected {
        grid.sector(s)?;
    }
    fs::create_dir_all(out_dir)?;
    fs::create_dir_all(data_dir)?;
    let gbytes = grid_bytes(grid)?;
    fs::write(out_dir.join("grid.json"), &gbytes)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<SectorOutcome> = pool.install(|| {
        selected
            .par_iter()
            .map(|&sector| SectorOutcome {
                sector,
                result: train_one(grid, plan, sector, data_dir, out_dir),
            })
            .collect()
    });

    let n = grid.array.num_elements;
    let grid_sha = sha256_hex(&gbytes);
    let mut entries: BTreeMap<usize, SectorEntry> = BTreeMap::new();
    if let Ok(old) = read_manifest(out_dir) {
        if old.grid_sha256 == grid_sha && old.plan == *plan && old.num_elements == n {
            entries.extend(old.sectors.into_iter().map(|e| (e.sector, e)));
        }
    }
    for o in &outcomes {
        match &o.result {
            Ok((entry, _, _)) => {
                entries.insert(o.sector, entry.clone());
            }
            Err(_) => {
                entries.remove(&o.sector);
            }
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        num_users: plan.num_users,
        num_elements: n,
        dims: plan.dims(n),
        grid_sha256: grid_sha,
        plan: plan.clone(),
        complete: entries.len() == grid.num_sectors(),
        sectors: entries.into_values().collect(),
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(TrainSummary { outcomes, manifest })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::IncompatibleVersion {
            path,
            found: m.format_version,
            supported: MANIFEST_VERSION,
        });
    }
    Ok(m)
}

/// A loaded codebook. Sectors without a model pair are rejected at
/// prediction time.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub dir: PathBuf,
    pub grid: SectorGrid,
    pub manifest: Manifest,
    pub models: BTreeMap<usize, ModelPair>,
}

impl Codebook {
    /// Loads every model listed in the manifest, verifying hashes and shapes.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let gpath = dir.join("grid.json");
        let grid = SectorGrid::load_json(&gpath)?;
        if sha256_hex(&fs::read(&gpath)?) != manifest.grid_sha256 {
            return Err(Error::corrupt(&gpath, "grid hash does not match the manifest"));
        }
        let mut models = BTreeMap::new();
        for e in &manifest.sectors {
            grid.sector(e.sector)?;
            let load = |m: &ModelEntry| -> Result<MlpModel> {
                let p = dir.join(&m.file);
                let model = load_model(&p)?;
                if sha256_hex(&fs::read(&p)?) != m.sha256 {
                    return Err(Error::corrupt(&p, "hash does not match the manifest"));
                }
                if model.dims() != manifest.dims {
                    return Err(Error::corrupt(&p, "model dims differ from the manifest"));
                }
                Ok(model)
            };
            models.insert(
                e.sector,
                ModelPair {
                    phase: load(&e.phase)?,
                    magnitude: load(&e.magnitude)?,
                },
            );
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            grid,
            manifest,
            models,
        })
    }

    /// Like [`Codebook::load`] but fails unless every sector has a model pair.
    pub fn load_complete(dir: &Path) -> Result<Self> {
        let cb = Self::load(dir)?;
        let missing = cb.missing_sectors();
        if missing.is_empty() {
            Ok(cb)
        } else {
            Err(Error::IncompleteCodebook(missing))
        }
    }

    pub fn missing_sectors(&self) -> Vec<usize> {
        (0..self.grid.num_sectors())
            .filter(|s| !self.models.contains_key(s))
            .collect()
    }

    pub fn num_users(&self) -> usize {
        self.manifest.num_users
    }

    pub fn predict(&self, scenario: &NcbfScenario) -> Result<Prediction> {
        predict_with(self, &self.grid, self.num_users(), scenario)
    }
}

impl BeamEstimator for Codebook {
    fn estimate(&self, sector: usize, _scenario: &NcbfScenario, inputs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pair = self
            .models
            .get(&sector)
            .ok_or_else(|| Error::IncompleteCodebook(vec![sector]))?;
        Ok((pair.phase.predict(inputs)?, pair.magnitude.predict(inputs)?))
    }
}

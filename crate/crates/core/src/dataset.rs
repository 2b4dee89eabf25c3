//! Per-sector training data: scenario sampling, LCMV labelling, input
//! normalization and the binary record format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "NCBF" | u32 version | u32 N | u32 K | u64 record_count
//! record_count x { f32 inputs[2K], f32 phases[N], f32 magnitudes_db[N] }
//! ```
//!
//! A JSON sidecar carries [`DatasetMeta`].

use std::f32::consts::PI as PI_F32;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{channel_vector, correlation, ArrayConfig, ChannelVector, UserLocation};
use crate::error::{Error, Result};
use crate::lcmv::{lcmv_weights, NcbfScenario, COINCIDENCE_LIMIT};
use crate::partition::{Coverage, SectorGrid};

pub const MAGIC: [u8; 4] = *b"NCBF";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_RETRIES: usize = 100;
pub const DB_FLOOR: f64 = -300.0;
const HEADER_LEN: usize = 24;

/// Per-sector RNG: one ChaCha stream per sector under a shared seed.
pub fn sector_rng(seed: u64, sector: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sector as u64);
    rng
}

fn uniform_in<R: Rng>(rng: &mut R, psi: (f64, f64), range: (f64, f64)) -> UserLocation {
    UserLocation {
        psi: if psi.1 > psi.0 { rng.gen_range(psi.0..psi.1) } else { psi.0 },
        range: if range.1 > range.0 { rng.gen_range(range.0..range.1) } else { range.0 },
    }
}

/// True if `candidate` stays at or below the coincidence limit with every accepted user.
pub fn interferer_acceptable(accepted: &[ChannelVector], candidate: &ChannelVector) -> bool {
    accepted.iter().all(|h| correlation(h, candidate) <= COINCIDENCE_LIMIT)
}

/// Desired user uniform over the sector's (psi, r) box, interferers uniform
/// over the whole coverage, each redrawn while too correlated with an
/// already placed user.
pub fn sample_scenario<R: Rng>(
    config: &ArrayConfig,
    grid: &SectorGrid,
    sector: usize,
    k: usize,
    rng: &mut R,
) -> Result<NcbfScenario> {
    if k == 0 {
        return Err(Error::invalid("number of users must be >= 1"));
    }
    let s = grid.sector(sector)?;
    let cov = grid.coverage();
    let desired = uniform_in(rng, (s.psi_lo, s.psi_hi), (s.r_lo, s.r_hi));
    let mut placed = vec![channel_vector(config, &desired)];
    let mut interferers = Vec::with_capacity(k - 1);
    for _ in 1..k {
        let mut found = None;
        for _ in 0..MAX_RETRIES {
            let cand = uniform_in(rng, (cov.psi_min, cov.psi_max), (cov.r_min, cov.r_max));
            let h = channel_vector(config, &cand);
            if interferer_acceptable(&placed, &h) {
                found = Some((cand, h));
                break;
            }
        }
        let (loc, h) = found.ok_or(Error::SamplingExhausted { retries: MAX_RETRIES })?;
        placed.push(h);
        interferers.push(loc);
    }
    Ok(NcbfScenario::new(desired, interferers))
}

/// Phase labels referenced to element 1 and wrapped to [-pi, pi); magnitude
/// labels of the unit-power weights in dB.
pub fn label_scenario(config: &ArrayConfig, scenario: &NcbfScenario) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = lcmv_weights(config, scenario)?;
    let phases = w.phases();
    let mags = w.magnitudes().into_iter().map(to_db).collect();
    Ok((phases, mags))
}

pub fn to_db(a: f64) -> f64 {
    if a > 0.0 {
        (20.0 * a.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Interferers in canonical order: ascending angle, then range.
pub fn canonical_interferers(scenario: &NcbfScenario) -> Vec<UserLocation> {
    let mut v = scenario.interferers.clone();
    v.sort_by(|a, b| a.psi.total_cmp(&b.psi).then(a.range.total_cmp(&b.range)));
    v
}

/// 2K inputs: (psi, r) of each user min-max scaled over the coverage,
/// desired user first, interferers in canonical order.
pub fn normalize_inputs(scenario: &NcbfScenario, coverage: &Coverage) -> Vec<f64> {
    let scale = |u: &UserLocation| {
        [
            (u.psi - coverage.psi_min) / (coverage.psi_max - coverage.psi_min),
            (u.range - coverage.r_min) / (coverage.r_max - coverage.r_min),
        ]
    };
    std::iter::once(scenario.desired)
        .chain(canonical_interferers(scenario))
        .flat_map(|u| scale(&u))
        .collect()
}

/// Inverse of [`normalize_inputs`]; interferers come back in canonical order.
pub fn denormalize_inputs(inputs: &[f64], coverage: &Coverage) -> Result<NcbfScenario> {
    if inputs.is_empty() || inputs.len() % 2 != 0 {
        return Err(Error::ShapeMismatch {
            expected: 2 * (inputs.len() / 2).max(1),
            got: inputs.len(),
        });
    }
    let mut users = inputs.chunks(2).map(|p| UserLocation {
        psi: coverage.psi_min + p[0] * (coverage.psi_max - coverage.psi_min),
        range: coverage.r_min + p[1] * (coverage.r_max - coverage.r_min),
    });
    let desired = users.next().expect("non-empty");
    Ok(NcbfScenario::new(desired, users.collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    pub scenario: NcbfScenario,
    pub inputs: Vec<f64>,
    pub phases: Vec<f64>,
    pub magnitudes_db: Vec<f64>,
}

impl ScenarioSample {
    pub fn new(config: &ArrayConfig, coverage: &Coverage, scenario: NcbfScenario) -> Result<Self> {
        let (phases, magnitudes_db) = label_scenario(config, &scenario)?;
        Ok(Self {
            inputs: normalize_inputs(&scenario, coverage),
            scenario,
            phases,
            magnitudes_db,
        })
    }
}

/// `count` labelled samples for one sector, drawn from `rng`.
pub fn generate_samples<R: Rng>(
    config: &ArrayConfig,
    grid: &SectorGrid,
    sector: usize,
    k: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ScenarioSample>> {
    (0..count)
        .map(|_| {
            let sc = sample_scenario(config, grid, sector, k, rng)?;
            ScenarioSample::new(config, grid.coverage(), sc)
        })
        .collect()
}

/// Records stored as f32, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_elements: usize,
    pub num_users: usize,
    pub inputs: Vec<f32>,
    pub phases: Vec<f32>,
    pub magnitudes_db: Vec<f32>,
}

fn store_phase(phi: f64) -> f32 {
    let v = phi as f32;
    // rounding can land exactly on +pi
    if v >= PI_F32 {
        -PI_F32
    } else {
        v
    }
}

impl Dataset {
    pub fn empty(num_elements: usize, num_users: usize) -> Self {
        Self {
            num_elements,
            num_users,
            inputs: Vec::new(),
            phases: Vec::new(),
            magnitudes_db: Vec::new(),
        }
    }

    pub fn from_samples(num_elements: usize, num_users: usize, samples: &[ScenarioSample]) -> Self {
        let mut ds = Self::empty(num_elements, num_users);
        for s in samples {
            ds.push(s);
        }
        ds
    }

    pub fn push(&mut self, s: &ScenarioSample) {
        debug_assert_eq!(s.inputs.len(), 2 * self.num_users);
        debug_assert_eq!(s.phases.len(), self.num_elements);
        self.inputs.extend(s.inputs.iter().map(|&x| x as f32));
        self.phases.extend(s.phases.iter().map(|&p| store_phase(p)));
        self.magnitudes_db.extend(s.magnitudes_db.iter().map(|&m| m as f32));
    }

    pub fn len(&self) -> usize {
        if self.num_elements == 0 {
            0
        } else {
            self.phases.len() / self.num_elements
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        2 * self.num_users
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let w = self.input_width();
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn phase(&self, i: usize) -> &[f32] {
        &self.phases[i * self.num_elements..(i + 1) * self.num_elements]
    }

    pub fn magnitude_db(&self, i: usize) -> &[f32] {
        &self.magnitudes_db[i * self.num_elements..(i + 1) * self.num_elements]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.num_elements;
        let w = self.input_width();
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (w + 2 * n) * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_users as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for v in self.input(i).iter().chain(self.phase(i)).chain(self.magnitude_db(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::corrupt(path, "truncated header"));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::corrupt(path, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleVersion {
                path: path.to_path_buf(),
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let n = u32_at(8) as usize;
        let k = u32_at(12) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let width = 2 * k + 2 * n;
        let expected = count
            .checked_mul(width * 4)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::corrupt(path, "record count overflows"))?;
        if bytes.len() != expected {
            return Err(Error::corrupt(
                path,
                format!("expected {expected} bytes for {count} records, found {}", bytes.len()),
            ));
        }
        let mut ds = Self::empty(n, k);
        let floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for (j, v) in floats.enumerate() {
            let col = j % width;
            if col < 2 * k {
                ds.inputs.push(v);
            } else if col < 2 * k + n {
                ds.phases.push(v);
            } else {
                ds.magnitudes_db.push(v);
            }
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sector_id: usize,
    pub num_users: usize,
    pub num_elements: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub split: f64,
    pub bounds: Coverage,
    pub seed: u64,
    pub format_version: u32,
}

impl DatasetMeta {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub meta: PathBuf,
}

pub fn dataset_paths(dir: &Path, sector: usize) -> DatasetPaths {
    DatasetPaths {
        train: dir.join(format!("sector_{sector:03}_train.bin")),
        test: dir.join(format!("sector_{sector:03}_test.bin")),
        meta: dir.join(format!("sector_{sector:03}_meta.json")),
    }
}

/// Number of training records for a split: ceil(split * size).
pub fn train_count(size: usize, split: f64) -> usize {
    ((split * size as f64).ceil() as usize).min(size)
}

/// Generates, splits and persists one sector's dataset.
pub fn generate_dataset(
    config: &ArrayConfig,
    grid: &SectorGrid,
    sector: usize,
    k: usize,
    size: usize,
    split: f64,
    seed: u64,
    dir: &Path,
) -> Result<(Dataset, Dataset, DatasetMeta)> {
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::invalid(format!("dataset split must lie in (0, 1] (got {split})")));
    }
    let mut rng = sector_rng(seed, sector);
    let samples = generate_samples(config, grid, sector, k, size, &mut rng)?;
    let n_train = train_count(size, split);
    let n = config.num_elements;
    let train = Dataset::from_samples(n, k, &samples[..n_train]);
    let test = Dataset::from_samples(n, k, &samples[n_train..]);
    let meta = DatasetMeta {
        sector_id: sector,
        num_users: k,
        num_elements: n,
        train_count: train.len(),
        test_count: test.len(),
        split,
        bounds: *grid.coverage(),
        seed,
        format_version: FORMAT_VERSION,
    };
    fs::create_dir_all(dir)?;
    let paths = dataset_paths(dir, sector);
    train.write(&paths.train)?;
    test.write(&paths.test)?;
    fs::write(&paths.meta, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok((train, test, meta))
}

/// Loads a persisted dataset pair and checks it against its sidecar.
pub fn load_dataset(dir: &Path, sector: usize) -> Result<(Dataset, Dataset, DatasetMeta)> {
    let paths = dataset_paths(dir, sector);
    let meta = DatasetMeta::load(&paths.meta)?;
    let train = Dataset::read(&paths.train)?;
    let test = Dataset::read(&paths.test)?;
    if train.len() != meta.train_count || test.len() != meta.test_count {
        return Err(Error::corrupt(&paths.meta, "record counts disagree with the data files"));
    }
    Ok((train, test, meta))
}

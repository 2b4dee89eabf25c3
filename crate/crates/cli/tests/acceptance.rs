//! Acceptance suite. Each test prints one `acceptance PASS|FAIL <name>: ...`
//! line straight to stderr so the verdicts show up even when output is
//! captured. The desk-training checks share one trained codebook.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};
use ncbf::array::{channel_correlation, fresnel_distance, rayleigh_distance, ArrayConfig, UserLocation};
use ncbf::codebook::{model_file, reconstruct, train_codebook, Codebook, LabelReplay, Target, TrainSummary};
use ncbf::config::{ConfigFile, Overrides, Profile, RunConfig};
use ncbf::dataset::{dataset_paths, generate_dataset, label_scenario, Dataset};
use ncbf::eval::{evaluate_scenarios, random_scenarios, relative_gain, EvalOutcome};
use ncbf::lcmv::{build_constraints, build_constraints_with_limit, lcmv_weights, solve_lcmv_raw, BeamWeights, NcbfScenario};
use ncbf::mlp::{cmae, init_model, load_model, model_to_bytes, rmse, save_model, LossKind, MlpModel};
use ncbf::partition::{build_grid, radial_samples, sampling_beta, Coverage, PartitionSpec, SectorGrid};
use ncbf::Error;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(name: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {tag} {name}: {detail}");
    pass
}

fn reference_array() -> ArrayConfig {
    ArrayConfig::xl_ula_24()
}

fn uniform_location(rng: &mut ChaCha8Rng, cov: &Coverage) -> UserLocation {
    UserLocation {
        psi: rng.gen_range(cov.psi_min..cov.psi_max),
        range: rng.gen_range(cov.r_min..cov.r_max),
    }
}

fn reference_grid(rho: f64) -> SectorGrid {
    let spec = PartitionSpec::from_correlation(Coverage::reference(), rho).unwrap();
    build_grid(&spec, &reference_array()).unwrap()
}

#[test]
fn lcmv_null_depth() {
    let start = Instant::now();
    let config = reference_array();
    let cov = Coverage::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut skipped, mut worst) = (0, 0, f64::NEG_INFINITY);
    for _ in 0..500 {
        let desired = uniform_location(&mut rng, &cov);
        let interferers = vec![uniform_location(&mut rng, &cov), uniform_location(&mut rng, &cov)];
        let sc = NcbfScenario::new(desired, interferers);
        let solution = build_constraints_with_limit(&config, &sc, 1.0).and_then(|c| solve_lcmv_raw(&c));
        let sol = match solution {
            Ok(s) if s.condition <= 1e8 => s,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let w = BeamWeights::new(sol.raw).normalize_and_reference().unwrap();
        for loc in &sc.interferers {
            worst = worst.max(relative_gain(&config, &w, loc, &sc.desired).unwrap());
        }
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= -120.0 && elapsed < 30.0 && checked > 0;
    let detail = format!("{checked} scenarios checked, {skipped} ill-conditioned, worst interferer gain {worst:.1} dB, {elapsed:.2} s");
    assert!(verdict("lcmv_null_depth", pass, &detail), "{detail}");
}

/// Minimum-norm solve of C^H w = d through the full KKT system
/// [I C; C^H 0] [w; mu] = [0; d].
fn kkt_solve(columns: &[Vec<Complex64>], d: &[f64]) -> Vec<Complex64> {
    let n = columns[0].len();
    let k = columns.len();
    let c = |i: usize, j: usize| Complex::new(columns[j][i].re, columns[j][i].im);
    let mut m = DMatrix::<Complex<f64>>::zeros(n + k, n + k);
    for i in 0..n {
        m[(i, i)] = Complex::new(1.0, 0.0);
        for j in 0..k {
            m[(i, n + j)] = c(i, j);
            m[(n + j, i)] = c(i, j).conj();
        }
    }
    let mut rhs = DVector::<Complex<f64>>::zeros(n + k);
    for (j, &v) in d.iter().enumerate() {
        rhs[n + j] = Complex::new(v, 0.0);
    }
    let x = m.lu().solve(&rhs).expect("KKT system is singular");
    (0..n).map(|i| Complex64::new(x[i].re, x[i].im)).collect()
}

#[test]
fn lcmv_matches_kkt_solve() {
    let start = Instant::now();
    let cov = Coverage::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut trials = 0;
    for n in [4, 6, 8] {
        let config = ArrayConfig::new(n, 0.04, 3.5e9).unwrap();
        for k in 1..=3 {
            let mut done = 0;
            while done < 100 {
                let users: Vec<UserLocation> = (0..k).map(|_| uniform_location(&mut rng, &cov)).collect();
                let sc = NcbfScenario::new(users[0], users[1..].to_vec());
                let inputs = match build_constraints(&config, &sc) {
                    Ok(i) => i,
                    Err(Error::CoincidentUsers { .. }) => continue,
                    Err(e) => panic!("{e}"),
                };
                let closed = solve_lcmv_raw(&inputs).unwrap().raw;
                let columns: Vec<Vec<Complex64>> = (0..k).map(|j| inputs.constraints.column(j)).collect();
                let brute = kkt_solve(&columns, &inputs.desired_response);
                let num: f64 = closed.iter().zip(&brute).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
                let den: f64 = brute.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
                worst = worst.max(num / den);
                done += 1;
                trials += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && elapsed < 10.0;
    let detail = format!("{trials} trials, worst relative error {worst:.2e}, {elapsed:.2} s");
    assert!(verdict("lcmv_matches_kkt_solve", pass, &detail), "{detail}");
}

#[test]
fn reference_array_geometry() {
    let config = reference_array();
    let rd = rayleigh_distance(&config);
    let ratio = config.element_spacing / config.wavelength();
    let pass = (rd - 19.75).abs() <= 0.02 && (ratio - 0.467).abs() <= 0.001;
    let detail = format!("Rayleigh distance {rd:.4} m, d/lambda {ratio:.5}");
    assert!(verdict("reference_array_geometry", pass, &detail), "{detail}");
}

#[test]
fn partition_structure() {
    let start = Instant::now();
    let config = reference_array();
    let cov = Coverage::reference();
    let rhos = [0.7, 0.6, 0.4];
    let grids: Vec<SectorGrid> = rhos.iter().map(|&r| reference_grid(r)).collect();
    let counts: Vec<usize> = grids.iter().map(|g| g.num_sectors()).collect();
    let decreasing = counts.windows(2).all(|w| w[0] > w[1]);

    // Adjacent rings, outer ring at or beyond the Fresnel distance.
    let d_f = fresnel_distance(&config);
    let mut worst_dev = 0.0f64;
    let mut pairs = 0;
    for &rho in &rhos {
        let beta = sampling_beta(rho).unwrap();
        for psi_deg in [0.0f64, 30.0, -30.0] {
            let psi = psi_deg.to_radians();
            let rings = radial_samples(&config, beta, psi, cov.r_min, cov.r_max);
            for w in rings.windows(2) {
                let (a, b) = (w[0].max(w[1]), w[0].min(w[1]));
                if a < d_f {
                    continue;
                }
                let c = channel_correlation(&config, &UserLocation { psi, range: a }, &UserLocation { psi, range: b });
                worst_dev = worst_dev.max((c - rho).abs());
                pairs += 1;
            }
        }
    }

    // Tiling: every in-coverage point lands in exactly one sector box (up to
    // shared edges), every outside point is rejected.
    let grid = &grids[0];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut tiling_errors = 0;
    for _ in 0..10_000 {
        let loc = uniform_location(&mut rng, &cov);
        let owners = grid.sectors.iter().filter(|s| s.contains(&loc)).count();
        match grid.locate(&loc) {
            Ok(id) if grid.sectors[id].contains(&loc) && owners == 1 => {}
            _ => tiling_errors += 1,
        }
    }
    for _ in 0..1000 {
        let outside = UserLocation {
            psi: rng.gen_range(-1.2..1.2),
            range: rng.gen_range(0.1..10.0),
        };
        if !cov.contains(&outside) && grid.locate(&outside).is_ok() {
            tiling_errors += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = decreasing && pairs > 0 && worst_dev <= 0.15 && tiling_errors == 0 && elapsed < 60.0;
    let detail = format!(
        "M_C {counts:?} (reference 75/60/45, reported only), {pairs} ring pairs beyond {d_f:.3} m, worst |corr - rho| {worst_dev:.3}, tiling errors {tiling_errors}, {elapsed:.2} s"
    );
    assert!(verdict("partition_structure", pass, &detail), "{detail}");
}

#[test]
fn loss_function_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = rng.gen_range(1..5);
        let n = 24;
        let pred: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-PI..PI)).collect();
        let target: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-PI..PI)).collect();
        let mut circ = 0.0;
        let mut sq = 0.0;
        for j in 0..rows {
            for i in 0..n {
                let diff = (pred[j * n + i] - target[j * n + i]).abs();
                circ += diff.min(2.0 * PI - diff);
                sq += diff * diff;
            }
        }
        let total = (rows * n) as f64;
        worst = worst.max((cmae(&pred, &target).unwrap() - circ / total).abs());
        worst = worst.max((rmse(&pred, &target).unwrap() - (sq / total).sqrt()).abs());
    }
    let wrap = cmae(&[3.1], &[-3.1]).unwrap();
    let pass = worst <= 1e-12 && (wrap - 0.08319).abs() <= 1e-5;
    let detail = format!("worst deviation {worst:.2e}, wrap case {wrap:.6}");
    assert!(verdict("loss_function_oracles", pass, &detail), "{detail}");
}

fn branch_of(model: &MlpModel, inputs: &[f64], targets: &[f64], rows: usize) -> Vec<bool> {
    let out = model.forward(inputs, rows).unwrap();
    out.iter()
        .zip(targets)
        .map(|(p, t)| (p - t).rem_euclid(2.0 * PI) < PI)
        .collect()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let rows = 5;
    let inputs: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..rows * 6).map(|_| rng.gen_range(-PI..PI)).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for kind in [LossKind::CircularMae, LossKind::Rmse] {
        let mut model = init_model(&[4, 8, 6], 3).unwrap();
        // Non-zero biases so every ReLU is away from its kink.
        let mut params = model.params();
        for p in params.iter_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        model.set_params(&params).unwrap();
        let (_, grad) = model.loss_and_gradient(&inputs, &targets, rows, kind).unwrap();
        for i in 0..params.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut p = params.clone();
                p[i] += delta;
                m.set_params(&p).unwrap();
                m
            };
            let (plus, minus) = (eval(h), eval(-h));
            if kind == LossKind::CircularMae
                && branch_of(&plus, &inputs, &targets, rows) != branch_of(&minus, &inputs, &targets, rows)
            {
                continue;
            }
            let lp = plus.loss_and_gradient(&inputs, &targets, rows, kind).unwrap().0;
            let lm = minus.loss_and_gradient(&inputs, &targets, rows, kind).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && checked > 0 && elapsed < 10.0;
    let detail = format!("{checked} parameters checked, worst relative error {worst:.2e}, {elapsed:.2} s");
    assert!(verdict("analytic_gradients_match_finite_differences", pass, &detail), "{detail}");
}

/// Boresight sectors at 1.0 to 3.1 m under the default grid.
const DESK_SECTORS: [usize; 3] = [49, 50, 51];
const DESK_SECTOR: usize = 49;

struct DeskCodebook {
    grid: SectorGrid,
    dir: PathBuf,
    summary: TrainSummary,
    seconds: f64,
}

fn desk_codebook() -> &'static DeskCodebook {
    static CELL: OnceLock<DeskCodebook> = OnceLock::new();
    CELL.get_or_init(|| {
        let file = ConfigFile {
            profile: Some(Profile::CiSmall),
            ..ConfigFile::default()
        };
        let cfg = RunConfig::resolve(file, Overrides::default()).unwrap();
        let grid = build_grid(&cfg.partition_spec().unwrap(), &cfg.array).unwrap();
        for &s in &DESK_SECTORS {
            let sector = grid.sector(s).unwrap();
            assert!(sector.psi_lo <= 0.0 && sector.psi_hi >= 0.0, "sector {s} is not on boresight");
        }
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("desk_codebook");
        let _ = fs::remove_dir_all(&dir);
        let start = Instant::now();
        let summary = train_codebook(
            &grid,
            &cfg.training_plan(),
            Some(&DESK_SECTORS),
            1,
            &dir.join("data"),
            &dir.join("codebook"),
        )
        .unwrap();
        DeskCodebook {
            grid,
            dir,
            summary,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn desk_scale_training() {
    let desk = desk_codebook();
    let outcome = desk.summary.outcomes.iter().find(|o| o.sector == DESK_SECTOR).unwrap();
    let (entry, _, _) = outcome.result.as_ref().expect("training failed");
    let phase = entry.phase.final_test_loss;
    let magnitude = entry.magnitude.final_test_loss;
    let pass = phase <= 0.15 && magnitude <= 1.2;
    let detail = format!(
        "sector {DESK_SECTOR}: test CMAE {phase:.4} rad (train {:.4}), test RMSE {magnitude:.4} dB (train {:.4}); {} sectors trained in {:.0} s",
        entry.phase.final_train_loss,
        entry.magnitude.final_train_loss,
        DESK_SECTORS.len(),
        desk.seconds
    );
    assert!(verdict("desk_scale_training", pass, &detail), "{detail}");
}

fn suppressions(outcomes: &[EvalOutcome]) -> (Vec<f64>, Vec<f64>, usize) {
    let mut all = Vec::new();
    let mut minima = Vec::new();
    let mut skipped = 0;
    for o in outcomes {
        match o {
            EvalOutcome::Report { report, .. } => {
                all.extend(&report.suppression_db);
                minima.push(report.min_suppression());
            }
            EvalOutcome::Skipped { .. } => skipped += 1,
        }
    }
    (all, minima, skipped)
}

#[test]
fn end_to_end_codebook_quality() {
    let desk = desk_codebook();
    assert!(desk.summary.failures().is_empty(), "{:?}", desk.summary.failures());
    let cb = Codebook::load(&desk.dir.join("codebook")).unwrap();
    let scenarios = random_scenarios(&desk.grid, 3, 100, 2024, Some(&DESK_SECTORS)).unwrap();

    let (mut all, minima, skipped) = suppressions(&evaluate_scenarios(&cb, &desk.grid, 3, &scenarios).unwrap());
    all.sort_by(f64::total_cmp);
    let median = ncbf::eval::median(&mut all);
    let fraction = minima.iter().filter(|&&m| m >= 15.0).count() as f64 / scenarios.len() as f64;

    let oracle = LabelReplay { array: desk.grid.array };
    let (_, oracle_minima, oracle_skipped) = suppressions(&evaluate_scenarios(&oracle, &desk.grid, 3, &scenarios).unwrap());
    let oracle_worst = oracle_minima.iter().copied().fold(f64::INFINITY, f64::min);

    let pass = skipped == 0 && oracle_skipped == 0 && median >= 20.0 && fraction >= 0.8 && oracle_worst >= 120.0;
    let detail = format!(
        "sectors {DESK_SECTORS:?}, {} scenarios ({skipped} skipped): median suppression {median:.2} dB, {:.0}% with every interferer >= 15 dB; label replay worst {oracle_worst:.1} dB",
        scenarios.len(),
        100.0 * fraction
    );
    assert!(verdict("end_to_end_codebook_quality", pass, &detail), "{detail}");
}

#[test]
fn round_trip_invariants() {
    let grid = reference_grid(0.7);
    let config = grid.array;
    let scenarios = random_scenarios(&grid, 3, 1000, 19, None).unwrap();
    let mut worst = 0.0f64;
    for sc in &scenarios {
        let (p, m) = label_scenario(&config, sc).unwrap();
        let p: Vec<f64> = p.iter().map(|&x| x as f32 as f64).collect();
        let m: Vec<f64> = m.iter().map(|&x| x as f32 as f64).collect();
        let rebuilt = reconstruct(&p, &m).unwrap();
        let reference = lcmv_weights(&config, sc).unwrap();
        for (a, b) in rebuilt.as_slice().iter().zip(reference.as_slice()) {
            worst = worst.max((a - b).norm());
        }
    }

    let tmp = tempfile::tempdir().unwrap();
    let mut files_ok = true;
    generate_dataset(&config, &grid, 50, 3, 40, 0.8, 5, tmp.path()).unwrap();
    let paths = dataset_paths(tmp.path(), 50);
    for path in [&paths.train, &paths.test] {
        let bytes = fs::read(path).unwrap();
        files_ok &= Dataset::read(path).unwrap().to_bytes() == bytes;
    }
    let model_path = tmp.path().join("m.mlpw");
    let model = init_model(&[6, 32, 24], 8).unwrap();
    save_model(&model, &model_path).unwrap();
    let bytes = fs::read(&model_path).unwrap();
    let loaded = load_model(&model_path).unwrap();
    files_ok &= model_to_bytes(&loaded) == bytes && loaded == model;

    let pass = worst < 1e-6 && files_ok;
    let detail = format!("{} scenarios, worst entrywise error {worst:.2e}, file round trips {}", scenarios.len(), if files_ok { "bitwise" } else { "differ" });
    assert!(verdict("round_trip_invariants", pass, &detail), "{detail}");
}

const TINY_CONFIG: &str = r#"{
  "coverage": { "r_min_m": 2.2, "r_max_m": 2.6, "psi_min_deg": -1.0, "psi_max_deg": 1.0 },
  "partition": { "beta_delta": 0.2 },
  "users": 2,
  "dataset": { "size": 60, "split": 0.8, "seed": 3 },
  "training": { "epochs": 3, "batch_size": 16, "hidden_layers": [16, 8], "seed": 4 }
}
"#;

fn run_ncbf(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ncbf"))
        .current_dir(dir)
        .args(["--config", "tiny.json", "--workdir", "work", "--workers", "1"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "ncbf {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_determinism() {
    let steps: [&[&str]; 4] = [
        &["partition"],
        &["gen-data", "--sector", "all"],
        &["train", "--sector", "all"],
        &["eval", "--random", "20", "--cuts", "16"],
    ];
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            fs::write(tmp.path().join("tiny.json"), TINY_CONFIG).unwrap();
            let mut stages = Vec::new();
            for step in steps {
                run_ncbf(tmp.path(), step);
                stages.push(snapshot(&tmp.path().join("work")));
            }
            stages
        })
        .collect();
    let mut differing = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        if runs[0][i] != runs[1][i] {
            differing.push(step[0]);
        }
    }
    let files = runs[0].last().map_or(0, Vec::len);
    let models = runs[0]
        .last()
        .unwrap()
        .iter()
        .filter(|(p, _)| p.ends_with(model_file(0, Target::Phase)))
        .count();
    let pass = differing.is_empty() && models == 1;
    let detail = format!("{files} files after eval, stages differing: {differing:?}");
    assert!(verdict("pipeline_determinism", pass, &detail), "{detail}");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ncbf::array::UserLocation;
use ncbf::codebook::{train_codebook, Codebook};
use ncbf::config::{ConfigFile, Overrides, Profile, RunConfig};
use ncbf::dataset::generate_dataset;
use ncbf::eval::{
    evaluate_scenarios, lcmv_reference, loss_statistics, parse_scenarios, pattern_csv, pattern_cut, random_scenarios, summarize,
    sweep_csv, CutMode, EvalOutcome, SectorLosses,
};
use ncbf::lcmv::NcbfScenario;
use ncbf::partition::{build_grid, SectorGrid};
use ncbf::Error;

#[derive(Parser)]
#[command(name = "ncbf", version, about = "Near-field nulling-control beam focusing codebooks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for grid, datasets, codebook and reports.
    #[arg(long, global = true, env = "NCBF_WORKDIR")]
    workdir: Option<PathBuf>,
    /// Overrides the dataset and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sector-level worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: u32,
    /// Size preset: "full" or "ci-small".
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Build the sector grid and print the sector table.
    Partition,
    /// Generate labelled datasets for the selected sectors.
    GenData(SectorArg),
    /// Train phase and magnitude models for the selected sectors.
    Train(SectorArg),
    /// Predict beam weights for one scenario.
    Predict(PredictArgs),
    /// Evaluate the codebook against LCMV.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SectorArg {
    /// Sector id or "all".
    #[arg(long, default_value = "all")]
    sector: String,
}

#[derive(Args)]
struct PredictArgs {
    /// Desired user as "psi_deg,range_m".
    #[arg(long, allow_hyphen_values = true)]
    desired: String,
    /// Interferer as "psi_deg,range_m"; repeat for each.
    #[arg(long, allow_hyphen_values = true)]
    interferer: Vec<String>,
    /// Also print the LCMV reference weights.
    #[arg(long)]
    lcmv: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON-lines scenario file.
    #[arg(long, conflicts_with = "random")]
    scenarios: Option<PathBuf>,
    /// Number of random scenarios.
    #[arg(long)]
    random: Option<usize>,
    /// Samples per pattern cut; 0 disables cuts.
    #[arg(long, default_value_t = 0)]
    cuts: usize,
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::OutOfCoverage { .. } | Error::KMismatch { .. } | Error::UnknownSector(_) => 2,
        Error::MissingArtifact(_) | Error::IncompleteCodebook(_) | Error::CorruptFile { .. } | Error::IncompatibleVersion { .. } => 3,
        Error::Io(_) | Error::Json(_) => 1,
        _ => 4,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            err: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = err.downcast_ref::<Error>().map(exit_code).unwrap_or(1);
        Failure { code, err }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, err: e.into() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let file = match &g.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    Ok(RunConfig::resolve(
        file,
        Overrides {
            seed: g.seed,
            profile: g.profile,
            workdir: g.workdir.clone(),
        },
    )?)
}

fn run(cli: Cli) -> CmdResult {
    let cfg = load_config(&cli.global)?;
    fs::create_dir_all(cfg.workdir()).with_context(|| format!("creating {}", cfg.workdir().display()))?;
    fs::write(cfg.workdir().join("effective_config.json"), cfg.to_json()?)?;
    let workers = cli.global.workers.max(1) as usize;
    match cli.command {
        Command::Partition => cmd_partition(&cfg),
        Command::GenData(s) => cmd_gen_data(&cfg, &s.sector, workers),
        Command::Train(s) => cmd_train(&cfg, &s.sector, workers),
        Command::Predict(p) => cmd_predict(&cfg, &p),
        Command::Eval(e) => cmd_eval(&cfg, &e),
    }
}

fn cmd_partition(cfg: &RunConfig) -> CmdResult {
    let grid = build_grid(&cfg.partition_spec()?, &cfg.array)?;
    grid.save_json(&cfg.grid_path())?;
    let table = grid.to_table();
    fs::write(cfg.workdir().join("sectors.csv"), &table)?;
    println!("M_C = {}", grid.num_sectors());
    println!("beta_delta = {}", grid.spec.beta_delta);
    print!("{table}");
    Ok(())
}

fn select_sectors(grid: &SectorGrid, selector: &str) -> Result<Vec<usize>, Failure> {
    if selector == "all" {
        return Ok((0..grid.num_sectors()).collect());
    }
    let id: usize = selector
        .parse()
        .map_err(|_| Error::InvalidConfig(vec![format!("--sector must be an id or 'all' (got '{selector}')")]))?;
    grid.sector(id)?;
    Ok(vec![id])
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure {
            code: 1,
            err: e.into(),
        })
}

fn cmd_gen_data(cfg: &RunConfig, selector: &str, workers: usize) -> CmdResult {
    let grid = SectorGrid::load_json(&cfg.grid_path())?;
    let sectors = select_sectors(&grid, selector)?;
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir)?;
    let results: Vec<_> = pool(workers)?.install(|| {
        sectors
            .par_iter()
            .map(|&s| {
                generate_dataset(
                    &cfg.array,
                    &grid,
                    s,
                    cfg.users,
                    cfg.dataset.size,
                    cfg.dataset.split,
                    cfg.dataset.seed,
                    &dir,
                )
                .map(|(_, _, meta)| meta)
            })
            .collect()
    });
    for r in results {
        let meta = r?;
        println!("sector {:3}: {} train, {} test", meta.sector_id, meta.train_count, meta.test_count);
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, selector: &str, workers: usize) -> CmdResult {
    let grid = SectorGrid::load_json(&cfg.grid_path())?;
    let sectors = select_sectors(&grid, selector)?;
    let summary = train_codebook(
        &grid,
        &cfg.training_plan(),
        Some(&sectors),
        workers,
        &cfg.data_dir(),
        &cfg.codebook_dir(),
    )?;
    println!("sector,phase_train_rad,phase_test_rad,magnitude_train_db,magnitude_test_db");
    for o in &summary.outcomes {
        if let Ok((e, _, _)) = &o.result {
            println!(
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.sector,
                e.phase.final_train_loss,
                e.phase.final_test_loss,
                e.magnitude.final_train_loss,
                e.magnitude.final_test_loss
            );
        }
    }
    let failures = summary.failures();
    for (s, why) in &failures {
        eprintln!("sector {s} failed: {why}");
    }
    if !summary.manifest.complete {
        eprintln!(
            "codebook incomplete: {} of {} sectors trained",
            summary.manifest.sectors.len(),
            grid.num_sectors()
        );
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            err: anyhow::anyhow!("{} sector(s) failed", failures.len()),
        })
    }
}

fn parse_location(s: &str) -> Result<UserLocation, Failure> {
    let bad = || Error::InvalidConfig(vec![format!("location must be 'psi_deg,range_m' (got '{s}')")]);
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let psi: f64 = a.trim().parse().map_err(|_| bad())?;
    let r: f64 = b.trim().parse().map_err(|_| bad())?;
    Ok(UserLocation::from_degrees(psi, r)?)
}

fn cmd_predict(cfg: &RunConfig, args: &PredictArgs) -> CmdResult {
    let scenario = NcbfScenario::new(
        parse_location(&args.desired)?,
        args.interferer.iter().map(|s| parse_location(s)).collect::<Result<_, _>>()?,
    );
    let cb = Codebook::load_complete(&cfg.codebook_dir())?;
    let p = cb.predict(&scenario)?;
    println!("sector {}", p.sector);
    let reference = if args.lcmv {
        Some(lcmv_reference(&cfg.array, &scenario)?)
    } else {
        None
    };
    match &reference {
        Some(_) => println!("element,phase_rad,magnitude_db,lcmv_phase_rad,lcmv_magnitude_db"),
        None => println!("element,phase_rad,magnitude_db"),
    }
    let phases = p.weights.phases();
    let mags = p.weights.magnitudes();
    let lcmv = reference.map(|w| (w.phases(), w.magnitudes()));
    for n in 0..phases.len() {
        let db = |a: f64| 20.0 * a.log10();
        match &lcmv {
            Some((lp, lm)) => println!("{},{:.9},{:.6},{:.9},{:.6}", n + 1, phases[n], db(mags[n]), lp[n], db(lm[n])),
            None => println!("{},{:.9},{:.6}", n + 1, phases[n], db(mags[n])),
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> CmdResult {
    let cb = Codebook::load_complete(&cfg.codebook_dir())?;
    let k = cb.num_users();
    let scenarios = match (&args.scenarios, args.random) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.clone()).into());
            }
            parse_scenarios(&fs::read_to_string(path)?)?
        }
        (None, Some(n)) => random_scenarios(&cb.grid, k, n, cfg.dataset.seed, None)?,
        (None, None) => {
            return Err(Error::InvalidConfig(vec!["eval needs --scenarios FILE or --random N".into()]).into());
        }
    };
    let outcomes = evaluate_scenarios(&cb, &cb.grid, k, &scenarios)?;
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("suppression.csv"), sweep_csv(&outcomes, k))?;
    let summary = summarize(&outcomes, 15.0);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n")?;

    let losses: Vec<SectorLosses> = cb
        .manifest
        .sectors
        .iter()
        .map(|e| SectorLosses {
            sector: e.sector,
            phase_train: e.phase.final_train_loss,
            phase_test: e.phase.final_test_loss,
            magnitude_train: e.magnitude.final_train_loss,
            magnitude_test: e.magnitude.final_test_loss,
        })
        .collect();
    let stats = loss_statistics(&losses)?;
    fs::write(dir.join("loss_stats.csv"), stats.to_csv())?;
    fs::write(dir.join("loss_by_sector.csv"), stats.sectors_csv())?;

    if args.cuts > 0 {
        write_cuts(cfg, &cb, &outcomes, args.cuts, &dir)?;
    }

    for (i, o) in outcomes.iter().enumerate() {
        match o {
            EvalOutcome::Report { sector, report } => {
                let sup: Vec<String> = report.suppression_db.iter().map(|s| format!("{s:.2}")).collect();
                let gap: Vec<String> = report.gap_db.iter().map(|s| format!("{s:.2}")).collect();
                println!("scenario {i}: sector {sector}, suppression dB [{}], gap dB [{}]", sup.join(", "), gap.join(", "));
            }
            EvalOutcome::Skipped { reason, .. } => println!("scenario {i}: skipped ({reason})"),
        }
    }
    println!(
        "evaluated {}, skipped {}, median suppression {:.2} dB, {:.1}% with every interferer >= {} dB",
        summary.evaluated,
        summary.skipped,
        summary.median_suppression_db,
        100.0 * summary.fraction_all_above,
        summary.threshold_db
    );
    println!(
        "phase test {:.4} +/- {:.4} rad, magnitude test {:.4} +/- {:.4} dB",
        stats.phase_test.mean, stats.phase_test.sd, stats.magnitude_test.mean, stats.magnitude_test.sd
    );
    Ok(())
}

fn write_cuts(cfg: &RunConfig, cb: &Codebook, outcomes: &[EvalOutcome], samples: usize, dir: &Path) -> CmdResult {
    let cov = cfg.coverage();
    for (i, o) in outcomes.iter().enumerate() {
        let EvalOutcome::Report { report, .. } = o else { continue };
        let d = report.scenario.desired;
        let w = cb.predict(&report.scenario)?.weights;
        let reference = lcmv_reference(&cfg.array, &report.scenario)?;
        for (tag, weights) in [("dnn", &w), ("lcmv", &reference)] {
            let ang = CutMode::Angular { range: d.range };
            let rad = CutMode::Radial { psi: d.psi };
            let a = pattern_cut(&cfg.array, weights, &d, ang, (cov.psi_min, cov.psi_max), samples)?;
            let r = pattern_cut(&cfg.array, weights, &d, rad, (cov.r_min, cov.r_max), samples)?;
            fs::write(dir.join(format!("scenario_{i:03}_{tag}_angular.csv")), pattern_csv(ang, &a))?;
            fs::write(dir.join(format!("scenario_{i:03}_{tag}_radial.csv")), pattern_csv(rad, &r))?;
        }
    }
    Ok(())
}

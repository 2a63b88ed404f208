use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use edsim::des_kernel::write_jsonl;
use edsim::experiments::{
    load_study, run_study, save_study, write_exports, Arm, RunRecord, StudyError,
};
use edsim::interventions::parse_commands;
use edsim::ledger_replay::{
    archive_config, replay_batch, run_batched, CommandSource, FileCommands, NoCommands, ReplayError,
};
use edsim::metrics::{bottleneck_report, write_patients_csv};
use edsim::{Baseline, ConfigError, EdSize, InterventionKind, Resolved, ScenarioMatrix, SimConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "edsim", version, about = "Emergency department simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its ledger, summary, time series and archive.
    Run(RunArgs),
    /// Run a scenario matrix and write statistics and exports.
    Study(StudyArgs),
    /// Restore an archived batch, inject commands and write the trajectory pair.
    Replay(ReplayArgs),
    /// Check a scenario or study matrix without running it.
    ValidateConfig(ValidateArgs),
    /// Rebuild the CSV exports of a finished study.
    Export(ExportArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario YAML file. Defaults to the shipped preset for --size.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Shipped preset used when no scenario file is given.
    #[arg(long, value_parser = parse_size, default_value = "medium")]
    size: EdSize,
    #[arg(long, value_parser = parse_baseline)]
    baseline: Option<Baseline>,
    /// Enable an intervention; repeat for more than one.
    #[arg(long = "intervention", value_parser = parse_intervention)]
    interventions: Vec<InterventionKind>,
    /// Seed for both the patient stream and the simulation dynamics.
    #[arg(long)]
    seed: Option<u64>,
    /// Separate dynamics seed; defaults to --seed.
    #[arg(long)]
    dynamics_seed: Option<u64>,
    #[arg(long)]
    days: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Steps per batch. Defaults to the whole horizon.
    #[arg(long)]
    batch: Option<u64>,
    /// Command file, one JSON object per line, read before every batch.
    #[arg(long)]
    commands: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Matrix YAML file.
    #[arg(long, conflicts_with = "preset")]
    matrix: Option<PathBuf>,
    /// Built-in matrix: desk or full.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Output directory. Defaults to the matrix's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Also write a per-run time series CSV.
    #[arg(long)]
    timeseries: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    batch: u64,
    /// Command file to inject, one JSON object per line.
    #[arg(long)]
    inject: PathBuf,
    /// Scenario to replay against instead of the archived configuration.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Also write the pair's slices and summaries here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, required_unless_present = "matrix")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory written by `study`.
    #[arg(long)]
    study: PathBuf,
    /// Defaults to the study directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<EdSize, String> {
    EdSize::parse(s).ok_or_else(|| format!("unknown size {s:?}; expected medium, large or xlarge"))
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    Baseline::parse(s).ok_or_else(|| {
        format!("unknown baseline {s:?}; expected standard, high_volume or stressed_staffing")
    })
}

fn parse_intervention(s: &str) -> Result<InterventionKind, String> {
    InterventionKind::parse(s).ok_or_else(|| {
        format!("unknown intervention {s:?}; expected fast_track, split_flow or nurse_ratio")
    })
}

fn scenario(args: &ScenarioArgs) -> Result<Resolved> {
    let (mut config, base) = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            (
                SimConfig::from_yaml(&text)?,
                path.parent().map(Path::to_path_buf),
            )
        }
        None => (SimConfig::preset(args.size), None),
    };
    if let Some(b) = args.baseline {
        config = config.with_baseline(b);
    }
    for k in &args.interventions {
        config = config.with_intervention(*k);
    }
    if let Some(seed) = args.seed {
        config.seeds.patient = seed;
        config.seeds.dynamics = seed;
    }
    if let Some(seed) = args.dynamics_seed {
        config.seeds.dynamics = seed;
    }
    if let Some(days) = args.days {
        config.horizon_days = days;
        config.horizon_minutes = None;
    }
    Ok(config.resolve(base.as_deref())?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let ctx = Arc::new(scenario(&args.scenario)?);
    let horizon = ctx.config.horizon().0;
    let batch = args.batch.unwrap_or(horizon.max(1));
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut source: Box<dyn CommandSource> = match &args.commands {
        Some(path) => {
            if !path.exists() {
                bail!("command file {} does not exist", path.display());
            }
            Box::new(FileCommands::new(path))
        }
        None => Box::new(NoCommands),
    };
    let archive = args.out.join("archive");
    let run = run_batched(ctx.clone(), batch, source.as_mut(), Some(&archive))?;

    write_jsonl(create(&args.out.join("ledger.jsonl"))?, &run.ledger)?;
    let summary = run.sim.summary();
    fs::write(args.out.join("summary.json"), summary.to_json() + "\n")?;
    run.sim
        .world
        .series
        .write_csv(create(&args.out.join("timeseries.csv"))?)?;
    write_patients_csv(
        create(&args.out.join("patients.csv"))?,
        run.sim.patients(),
        &ctx.library,
    )?;
    write_json(
        &args.out.join("bottlenecks.json"),
        &bottleneck_report(&run.sim.world.series),
    )?;

    println!(
        "{} arrivals, {} completed, {} lwbs, {} deceased, {} in progress",
        summary.arrivals, summary.completed, summary.lwbs, summary.deceased, summary.in_progress
    );
    println!(
        "mean LoS {:.1} min, mean wait {:.1} min, LWBS {:.2}%",
        summary.los.mean.unwrap_or(f64::NAN),
        summary.wait.mean.unwrap_or(f64::NAN),
        summary.lwbs_rate
    );
    let rejected: usize = run.index.batches.iter().map(|b| b.rejected.len()).sum();
    println!(
        "{} batches, {} with commands, {} commands rejected; written to {}",
        run.index.batches.len(),
        run.pairs.len(),
        rejected,
        args.out.display()
    );
    Ok(())
}

fn cmd_study(args: StudyArgs) -> Result<()> {
    let mut matrix = match (&args.matrix, &args.preset) {
        (Some(path), _) => ScenarioMatrix::load(path)?,
        (None, Some(name)) => ScenarioMatrix::preset(name).ok_or_else(|| {
            StudyError::Matrix(format!("unknown preset {name:?}; expected desk or full"))
        })?,
        (None, None) => ScenarioMatrix::desk(),
    };
    if let Some(reps) = args.reps {
        matrix.replications = reps;
    }
    if let Some(days) = args.days {
        matrix.horizon_days = days;
    }
    if let Some(seed) = args.master_seed {
        matrix.master_seed = seed;
    }
    let Some(out) = args.out.clone().or_else(|| matrix.output.clone()) else {
        bail!("no output directory: pass --out or set `output` in the matrix");
    };
    matrix.validate()?;
    let total = matrix.run_count();
    eprintln!("running {total} simulations");
    let done = AtomicUsize::new(0);
    let progress = |r: &RunRecord| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if n.is_multiple_of(10) || n == total {
            eprintln!("  {n}/{total} ({} {} rep {})", r.cell.label(), r.arm, r.rep);
        }
    };
    let options = edsim::StudyOptions {
        jobs: args.jobs,
        timeseries_dir: (args.timeseries || matrix.write_timeseries)
            .then(|| out.join("timeseries")),
    };
    let results = run_study(&matrix, &options, &progress)?;
    save_study(&results, &out)?;
    for cell in results.matrix.cells() {
        let n = results.arm(&cell, Arm::Baseline).len();
        let los = results.stat(&cell, "los").expect("los compared");
        println!(
            "{:<22} vs {:<17} n={n:<3} LoS {:>7.1} -> {:>7.1} ({:+.1}%), p {}",
            cell.label(),
            cell.baseline.as_str(),
            los.mean_baseline,
            los.mean_intervention,
            los.relative_change_pct.unwrap_or(f64::NAN),
            los.p_value
                .map_or("n/a".to_string(), |p| format!("{p:.3e}"))
        );
    }
    println!(
        "{} runs, {} patients; written to {}",
        results.runs.len(),
        results.patients_simulated(),
        out.display()
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let ctx = match &args.scenario {
        Some(path) => SimConfig::load(path)?,
        None => archive_config(&args.archive)?,
    };
    let text = fs::read_to_string(&args.inject)
        .with_context(|| format!("reading {}", args.inject.display()))?;
    let commands = parse_commands(&text)?;
    let replay = replay_batch(&args.archive, args.batch, Arc::new(ctx), commands)?;
    for r in &replay.rejected {
        eprintln!(
            "rejected {} at t={}: {}",
            r.command.action.name(),
            r.command.t.0,
            r.reason
        );
    }
    let pair = &replay.pair;
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_jsonl(create(&out.join("baseline.evlog"))?, &pair.baseline)?;
        write_jsonl(create(&out.join("intervened.evlog"))?, &pair.intervened)?;
        write_json(
            &out.join("pair.json"),
            &json!({
                "batch": pair.batch,
                "first_injection": pair.first_injection,
                "commands": pair.commands,
                "rejected": replay.rejected,
                "baseline_summary": pair.baseline_summary,
                "intervened_summary": pair.intervened_summary,
            }),
        )?;
    }
    println!(
        "batch {}: {} commands injected from t={}, {} rejected; {} baseline and {} intervened records",
        pair.batch,
        pair.commands.len(),
        pair.first_injection.0,
        replay.rejected.len(),
        pair.baseline.len(),
        pair.intervened.len()
    );
    println!(
        "intervened slice written to {}",
        args.archive
            .join(format!("intervened_{}.evlog", pair.batch))
            .display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    if let Some(path) = &args.scenario {
        let r = SimConfig::load(path)?;
        println!("{}: ok (config hash {})", path.display(), &r.hash[..16]);
    }
    if let Some(path) = &args.matrix {
        let matrix = ScenarioMatrix::load(path)?;
        matrix.validate()?;
        for cell in matrix.cells() {
            for arm in [Arm::Baseline, Arm::Intervention] {
                matrix.config(&cell, 0, arm)?;
            }
        }
        println!(
            "{}: ok ({} cells, {} runs)",
            path.display(),
            matrix.cells().len(),
            matrix.run_count()
        );
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let results = load_study(&args.study)?;
    let out = args.out.unwrap_or_else(|| args.study.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_exports(&results, &out)?;
    println!("{} runs exported to {}", results.runs.len(), out.display());
    Ok(())
}

/// 2 for invalid configuration, 3 for an archive that does not match the
/// configuration, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ReplayError>() {
            match e {
                ReplayError::ConfigMismatch { .. } => return 3,
                ReplayError::Config(_) => return 2,
                _ => {}
            }
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(StudyError::Matrix(_) | StudyError::Config(_)) =
            cause.downcast_ref::<StudyError>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Study(a) => cmd_study(a),
        Command::Replay(a) => cmd_replay(a),
        Command::ValidateConfig(a) => cmd_validate(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

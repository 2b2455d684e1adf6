use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gba_core::data::{generate_dataset, load_scenes, make_split, save_scenes, DomainParams, SplitSpec};
use gba_core::detector::{prepare_samples, ModelCheckpoint};
use gba_core::eval::{evaluate, EvalConfig};
use gba_core::experiment::{presets, run_matrix, ExperimentConfig, MatrixResult, Method, ResultRow, RunFailure};
use gba_core::io::{canonical_json, read_file, write_file};
use gba_core::report::render_report;
use gba_core::trainer::{train, TrainerCheckpoint, TrainerConfig, TrainerState};
use gba_core::{build_plan, parse_json, parse_plan, serialize_plan, DatasetRef, Domain, GbaConfig, ScheduleMode};
use serde::de::DeserializeOwned;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(name = "gba", version, about = "Gradual batch alternation schedules and experiments")]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gba,
    Ba,
    SingleDomain,
}

#[derive(Subcommand)]
enum Command {
    /// Build a schedule plan (config: schedule settings).
    Plan {
        #[arg(long)]
        source_size: usize,
        #[arg(long)]
        target_size: usize,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Generate synthetic scenes as JSON Lines.
    Datagen {
        #[arg(long, value_enum)]
        domain: DomainArg,
        /// Domain parameters; defaults to the shipped preset.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Source preset name when no parameter file is given.
        #[arg(long, default_value = presets::DEFAULT_SOURCE)]
        preset: String,
        #[arg(long)]
        n: usize,
        /// Also write a labeled split of this many percent.
        #[arg(long, requires = "split_out")]
        split_percent: Option<u64>,
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Train on a plan (config: trainer settings); `--out` is the run directory.
    Train {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Trainer checkpoint to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (config: evaluation settings).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Run the experiment matrix; `--out` is the results directory.
    Experiment {
        /// Restrict to these methods.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Render report.md from an experiment directory.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn load_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    parse_json(&read_file(path)?).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => write_file(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn require_out(out: Option<&Path>, what: &str) -> anyhow::Result<PathBuf> {
    match out {
        Some(p) => Ok(p.to_path_buf()),
        None => Err(gba_core::Error::Config(format!("--out <{what}> is required")).into()),
    }
}

fn cmd_plan(cli: &Cli, source_size: usize, target_size: usize, mode: Option<ModeArg>) -> anyhow::Result<()> {
    let mut cfg: GbaConfig = match &cli.config {
        Some(p) => load_json(p)?,
        None => GbaConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::Gba => ScheduleMode::Gba,
            ModeArg::Ba => ScheduleMode::Ba,
            ModeArg::SingleDomain => ScheduleMode::SingleDomain,
        };
    }
    let plan = build_plan(&cfg, DatasetRef::source(source_size), DatasetRef::target(target_size))?;
    emit(cli.out.as_deref(), &serialize_plan(&plan))
}

fn cmd_datagen(
    cli: &Cli,
    domain: Domain,
    params: Option<&Path>,
    preset: &str,
    n: usize,
    split: Option<(u64, &Path)>,
) -> anyhow::Result<()> {
    let mut p: DomainParams = match params {
        Some(path) => load_json(path)?,
        None if domain == Domain::Target => presets::target(),
        None => presets::source(preset)?,
    };
    if let Some(s) = cli.seed {
        p.seed = s;
    }
    let out = require_out(cli.out.as_deref(), "scenes.jsonl")?;
    let scenes = generate_dataset(&p, n)?;
    save_scenes(&out, &scenes)?;
    if let Some((percent, path)) = split {
        let ids = make_split(scenes.len(), &SplitSpec::percent(percent, p.seed)?);
        write_file(path, &canonical_json(&ids))?;
    }
    eprintln!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

fn cmd_train(
    cli: &Cli,
    plan_path: &Path,
    source: Option<&Path>,
    target: Option<&Path>,
    resume: Option<&Path>,
) -> anyhow::Result<()> {
    let out = require_out(cli.out.as_deref(), "run directory")?;
    let mut cfg: TrainerConfig = match &cli.config {
        Some(p) => load_json(p)?,
        None => TrainerConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let plan = parse_plan(&read_file(plan_path)?)?;
    let load = |p: Option<&Path>| -> anyhow::Result<Vec<_>> {
        Ok(match p {
            Some(p) => prepare_samples::<f64>(&load_scenes(p)?, &cfg.raster),
            None => Vec::new(),
        })
    };
    let (src, tgt) = (load(source)?, load(target)?);
    let init = match resume {
        Some(p) => TrainerCheckpoint::from_json(&read_file(p)?)?.state()?,
        None => TrainerState::init(cfg.seed),
    };
    let run = train(&plan, &src, &tgt, init, &cfg)?;
    for snap in &run.checkpoints {
        let ck = TrainerCheckpoint::new(&snap.state, cfg.raster);
        write_file(&out.join(format!("checkpoint_e{:03}.json", snap.epoch)), &ck.to_json())?;
    }
    write_file(
        &out.join("checkpoint_final.json"),
        &TrainerCheckpoint::new(&run.state, cfg.raster).to_json(),
    )?;
    write_file(&out.join("log.csv"), run.log.to_csv().as_bytes())?;
    let summary = serde_json::json!({
        "steps": run.log.steps.len(),
        "clipped_steps": run.log.clip_count(),
        "stage_boundaries": run.log.stage_boundaries,
        "epoch_mean_loss": run.log.epochs.iter().map(|e| e.mean_total_loss).collect::<Vec<_>>(),
    });
    write_file(&out.join("summary.json"), &canonical_json(&summary))?;
    eprintln!("trained {} steps; wrote {}", run.log.steps.len(), out.display());
    Ok(())
}

/// Accepts both trainer checkpoints and bare model checkpoints.
fn load_model(path: &Path) -> anyhow::Result<ModelCheckpoint> {
    let bytes = read_file(path)?;
    let value: serde_json::Value = parse_json(&bytes).with_context(|| format!("reading {}", path.display()))?;
    if value.get("adam_m").is_some() {
        Ok(TrainerCheckpoint::from_json(&bytes)?.model)
    } else {
        Ok(ModelCheckpoint::from_json(&bytes)?)
    }
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, scenes: &Path) -> anyhow::Result<()> {
    let cfg: EvalConfig = match &cli.config {
        Some(p) => load_json(p)?,
        None => EvalConfig::default(),
    };
    let ck = load_model(checkpoint)?;
    let params = ck.params::<f64>()?;
    let scenes = load_scenes(scenes)?;
    let result = evaluate(&params, &ck.raster, &scenes, &cfg)?;
    emit(cli.out.as_deref(), &result.to_json())
}

fn cmd_experiment(cli: &Cli, methods: &[String]) -> anyhow::Result<()> {
    let out = require_out(cli.out.as_deref(), "results directory")?;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json(&read_file(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if !methods.is_empty() {
        let picked = methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>, _>>()?;
        cfg.ablation_methods.retain(|m| picked.contains(m));
        cfg.methods = picked;
    }
    cfg.validate()?;
    let result: MatrixResult = run_matrix(cfg.clone(), Some(&out), &mut |r| {
        eprintln!(
            "{} seed {} split {}%: mean AP {:.4}, {} steps, {:.1}s",
            r.method, r.seed, r.split_percent, r.eval.mean_ap, r.steps, r.wallclock_s
        )
    })?;
    write_file(&out.join("report.md"), render_report(&cfg, &result.rows, &result.failures).as_bytes())?;
    if !result.failures.is_empty() {
        bail!(
            "{} run(s) failed; partial results in {}",
            result.failures.len(),
            out.display()
        );
    }
    Ok(())
}

fn cmd_report(cli: &Cli, dir: &Path) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_json(&read_file(&dir.join("config.json"))?)?;
    let rows: Vec<ResultRow> = load_json(&dir.join("rows.json"))?;
    let failures_path = dir.join("failures.json");
    let failures: Vec<RunFailure> = if failures_path.exists() {
        load_json(&failures_path)?
    } else {
        Vec::new()
    };
    let text = render_report(&cfg, &rows, &failures);
    let out = cli.out.clone().unwrap_or_else(|| dir.join("report.md"));
    write_file(&out, text.as_bytes())?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Plan {
            source_size,
            target_size,
            mode,
        } => cmd_plan(cli, *source_size, *target_size, *mode),
        Command::Datagen {
            domain,
            params,
            preset,
            n,
            split_percent,
            split_out,
        } => {
            let split = split_percent.zip(split_out.as_deref());
            cmd_datagen(cli, (*domain).into(), params.as_deref(), preset, *n, split)
        }
        Command::Train {
            plan,
            source,
            target,
            resume,
        } => cmd_train(cli, plan, source.as_deref(), target.as_deref(), resume.as_deref()),
        Command::Eval { checkpoint, scenes } => cmd_eval(cli, checkpoint, scenes),
        Command::Experiment { methods } => cmd_experiment(cli, methods),
        Command::Report { results } => cmd_report(cli, results),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_config = err
        .chain()
        .filter_map(|e| e.downcast_ref::<gba_core::Error>())
        .any(gba_core::Error::is_config);
    if is_config {
        EXIT_CONFIG
    } else {
        EXIT_RUN
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

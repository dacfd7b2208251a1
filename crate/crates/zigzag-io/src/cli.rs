//! Command-line interface.
//!
//! Exit codes: 0 success, 1 input/validation failure, 2 runtime failure.
//! Diagnostics go to standard error; data goes to the requested files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use zigzag_core::curriculum::partition_folds;
use zigzag_core::difficulty::DifficultyReport;
use zigzag_core::eval::{corloc, ApMode, Detection};
use zigzag_core::model::MinedInstance;

use crate::formats::{
    read_jsonl, write_json_pretty, write_jsonl, DifficultyRecord, InstanceRecord,
};
use crate::manifest::load_dataset;
use crate::pipeline::{
    ap_csv, compute_difficulty, compute_initial_mining, corloc_csv, difficulty_records,
    execute_run, fold_file, instance_records, write_run, AdapterKind, RunOptions,
    DEFAULT_GRID_STEP,
};
use crate::report::{run_sweep, sweep_csv, SweepKind};
use crate::synth::{BenchmarkSpec, FEATURE_STRIDE};
use crate::{HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "zigzag",
    about = "Difficulty-ordered weakly supervised object mining pipeline",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score per-image localization difficulty (mEAS) from the initial scores.
    Difficulty(DifficultyArgs),
    /// Mine one instance per positive class via heat-map voting.
    Mine(MineArgs),
    /// Partition images into K difficulty-ordered folds.
    Folds(FoldsArgs),
    /// Run the full train/relocalize loop.
    Run(RunArgs),
    /// Evaluate instance files against ground truth (CorLoc).
    EvalCorloc(EvalCorlocArgs),
    /// Evaluate detection files against ground truth (VOC AP).
    EvalAp(EvalApArgs),
    /// Generate the synthetic benchmark dataset on disk.
    Synth(SynthArgs),
    /// Sweep K or tau and write the results as CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct DifficultyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Heat-map sampling step in pixels (1 = exact).
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: usize,
}

#[derive(Args)]
struct FoldsArgs {
    /// Difficulty report JSONL produced by `difficulty`.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, short)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, short, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Detector adapter: synthetic | file.
    #[arg(long, default_value = "synthetic")]
    adapter: String,
    /// Per-iteration score dump for the file adapter (repeatable, in order).
    #[arg(long = "score-dump")]
    score_dumps: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: usize,
    #[arg(long, default_value_t = FEATURE_STRIDE)]
    stride: u32,
}

#[derive(Args)]
struct EvalCorlocArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Instance JSONL (one box per image and positive class).
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalApArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Detection JSONL (instance format; confidence is the score).
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value = "eleven_point")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = BenchmarkSpec::default().master_seed)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Which parameter to sweep: k | tau.
    #[arg(long)]
    sweep: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, short, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Difficulty(args) => cmd_difficulty(&args),
        Command::Mine(args) => cmd_mine(&args),
        Command::Folds(args) => cmd_folds(&args),
        Command::Run(args) => cmd_run(&args),
        Command::EvalCorloc(args) => cmd_eval_corloc(&args),
        Command::EvalAp(args) => cmd_eval_ap(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

/// Parse arguments, run, and translate errors into the documented exit codes.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems are validation errors
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_difficulty(args: &DifficultyArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let stage = compute_difficulty(&dataset)?;
    for (image_id, class, reason) in &stage.failures {
        eprintln!("warning: {image_id} class {class}: {reason}");
    }
    write_jsonl(&args.out, &difficulty_records(&stage))
}

fn cmd_mine(args: &MineArgs) -> Result<()> {
    if args.grid_step == 0 {
        return Err(HarnessError::InvalidArgument("--grid-step must be at least 1".into()));
    }
    let dataset = load_dataset(&args.manifest)?;
    let stage = compute_initial_mining(&dataset, args.grid_step)?;
    for (image_id, class, reason) in &stage.failures {
        eprintln!("warning: {image_id} class {class}: {reason}");
    }
    write_jsonl(&args.out, &instance_records(&stage.instances))
}

fn cmd_folds(args: &FoldsArgs) -> Result<()> {
    let mut reports = Vec::new();
    read_jsonl::<DifficultyRecord, _>(&args.reports, |record, _| {
        reports.push(DifficultyReport {
            image_id: record.image_id,
            per_class: record.per_class.iter().map(|c| (c.class, c.meas)).collect(),
        });
        Ok(())
    })?;
    let state = partition_folds(&reports, args.k)
        .map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
    write_json_pretty(&args.out, &fold_file(&state.folds))
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let options = RunOptions {
        fold_count: args.k,
        mask_ratio: args.tau,
        seed: args.seed,
        adapter: args.adapter.parse::<AdapterKind>()?,
        score_dumps: args.score_dumps.clone(),
        grid_step: args.grid_step,
        stride: args.stride,
    };
    if options.fold_count == 0 || options.fold_count > dataset.records.len() {
        return Err(HarnessError::InvalidArgument(format!(
            "--k {} invalid for {} images",
            options.fold_count,
            dataset.records.len()
        )));
    }
    if !(0.0..1.0).contains(&options.mask_ratio) {
        return Err(HarnessError::InvalidArgument(format!(
            "--tau {} outside [0, 1)",
            options.mask_ratio
        )));
    }
    let artifacts = execute_run(&dataset, &options)?;
    write_run(&args.out, &dataset, &artifacts)?;
    if let Some(mean) = artifacts.final_corloc() {
        eprintln!("final mean CorLoc: {mean:.4}");
    }
    Ok(())
}

fn load_instances(path: &Path) -> Result<Vec<MinedInstance>> {
    let mut instances = Vec::new();
    read_jsonl::<InstanceRecord, _>(path, |record, line| {
        instances.push(record.into_instance(path, line)?);
        Ok(())
    })?;
    Ok(instances)
}

fn cmd_eval_corloc(args: &EvalCorlocArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let instances = load_instances(&args.instances)?;
    let report = corloc(&instances, &dataset.ground_truth)
        .map_err(|e| HarnessError::invalid(&args.instances, e))?;
    std::fs::write(&args.out, corloc_csv(&dataset.manifest.classes, &report)).map_err(
        |source| HarnessError::Write { path: args.out.clone(), source },
    )
}

fn cmd_eval_ap(args: &EvalApArgs) -> Result<()> {
    let mode = match args.mode.as_str() {
        "eleven_point" => ApMode::ElevenPoint,
        "area" => ApMode::Area,
        other => {
            return Err(HarnessError::InvalidArgument(format!(
                "unknown AP mode {other:?}, expected eleven_point or area"
            )));
        }
    };
    let dataset = load_dataset(&args.manifest)?;
    let detections: Vec<Detection> = load_instances(&args.detections)?
        .into_iter()
        .map(|m| Detection {
            image_id: m.image_id,
            class_index: m.class_index,
            bbox: m.bbox,
            score: m.confidence,
        })
        .collect();
    let csv = ap_csv(&dataset.manifest.classes, &detections, &dataset.ground_truth, mode)?;
    std::fs::write(&args.out, csv)
        .map_err(|source| HarnessError::Write { path: args.out.clone(), source })
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.scenes == 0 || args.classes == 0 {
        return Err(HarnessError::InvalidArgument(
            "--scenes and --classes must be positive".into(),
        ));
    }
    let spec = BenchmarkSpec {
        master_seed: args.seed,
        scene_count: args.scenes,
        class_count: args.classes,
        ..BenchmarkSpec::default()
    };
    std::fs::create_dir_all(&args.out).map_err(|source| HarnessError::Write {
        path: args.out.clone(),
        source,
    })?;
    let manifest_path = crate::pipeline::write_benchmark_dataset(&args.out, &spec)?;
    eprintln!("wrote {}", manifest_path.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let kind = args.sweep.parse::<SweepKind>()?;
    let base = RunOptions {
        fold_count: args.k,
        mask_ratio: args.tau,
        seed: args.seed,
        ..RunOptions::default()
    };
    let rows = run_sweep(&dataset, &base, kind)?;
    std::fs::write(&args.out, sweep_csv(&rows))
        .map_err(|source| HarnessError::Write { path: args.out.clone(), source })
}

//! `stket` — video scene graph generation with knowledge-embedded attention.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stket_autograd::io::Dtype;
use stket_core::dataset_io::{load_annotations, save_annotations};
use stket_core::eval::{evaluate, frequency_prior_baseline, score_predictions, MetricsReport};
use stket_core::knowledge::Banks;
use stket_core::model::{load_checkpoint, ModelConfig, ModelParams, TaskMode};
use stket_core::report::{
    distribution_csv, entropy_csv, entropy_table, per_predicate_csv, relationship_distribution,
};
use stket_core::synth::{generate_synthetic_dataset, GenConfig};
use stket_core::train::{load_train_state, save_train_state, OptimizerState, TrainRunConfig};
use stket_core::CoreError;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "stket",
    version,
    about = "Video scene graph generation with spatial-temporal knowledge-embedded attention",
    disable_help_subcommand = true
)]
struct Cli {
    /// Seed for every stochastic stage (generation, init, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the parallel stages (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Progress log format.
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log: LogFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Skewed multi-label benchmark (features included).
    Benchmark,
    /// Five short memorizable videos.
    Overfit,
    /// Large annotation-only set for dynamics recovery.
    Recovery,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelPreset {
    /// Small dimensions for CPU-scale runs (d = 128).
    Desk,
    /// Full-scale hyperparameters (d = 1936).
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Predcls,
    Sgcls,
    Sggen,
}

impl From<TaskArg> for TaskMode {
    fn from(t: TaskArg) -> TaskMode {
        match t {
            TaskArg::Predcls => TaskMode::PredCls,
            TaskArg::Sgcls => TaskMode::SgCls,
            TaskArg::Sggen => TaskMode::SgGen,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known relationship dynamics.
    GenSynth(GenSynthArgs),
    /// Count co-occurrence and transition statistics from annotations.
    BuildKnowledge(BuildKnowledgeArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint with R@K / mR@K.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Emit distribution, entropy, and per-predicate tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory (annotations.json, features.stkt, dynamics.json).
    #[arg(long)]
    out: PathBuf,
    /// Generator preset to start from.
    #[arg(long, value_enum, default_value_t = Preset::Benchmark)]
    preset: Preset,
    /// JSON file overriding generator fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of videos.
    #[arg(long)]
    videos: Option<usize>,
    /// Frames per video.
    #[arg(long)]
    frames: Option<usize>,
    /// Persistent pairs per video.
    #[arg(long)]
    pairs: Option<usize>,
    /// Power-law exponent of the stationary predicate distribution.
    #[arg(long)]
    skew: Option<f64>,
}

#[derive(Args)]
struct BuildKnowledgeArgs {
    /// Annotation JSON file.
    #[arg(long)]
    annotations: PathBuf,
    /// Output directory for index.json and the bank tensors.
    #[arg(long)]
    out: PathBuf,
    /// Drop class pairs observed fewer times than this.
    #[arg(long, default_value_t = 1)]
    min_pair_count: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Annotation JSON file (training split).
    #[arg(long)]
    annotations: PathBuf,
    /// Knowledge bank directory from build-knowledge.
    #[arg(long)]
    knowledge_dir: PathBuf,
    /// Checkpoint output directory.
    #[arg(long)]
    out: PathBuf,
    /// Evaluation task the run optimizes for.
    #[arg(long, value_enum, default_value_t = TaskArg::Predcls)]
    task: TaskArg,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 2e-5)]
    lr: f64,
    /// Global gradient-norm ceiling.
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Save a resumable checkpoint every N epochs (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Model size preset.
    #[arg(long, value_enum, default_value_t = ModelPreset::Desk)]
    model_preset: ModelPreset,
    /// JSON file overriding model configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue training from the checkpoint in --out.
    #[arg(long, default_value_t = false)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory from train.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Annotation JSON file (evaluation split).
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::Predcls)]
    task: TaskArg,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 20, 50])]
    k: Vec<usize>,
    /// Write the metrics report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-predicate recall table here.
    #[arg(long)]
    per_predicate_csv: Option<PathBuf>,
    /// Round parameters through f32 before evaluating.
    #[arg(long, default_value_t = false)]
    f32: bool,
    /// Score the frequency-prior baseline instead of the model.
    #[arg(long, default_value_t = false)]
    baseline: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seeds per check.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Annotation JSON file.
    #[arg(long)]
    annotations: PathBuf,
    /// Knowledge bank directory (enables the entropy table).
    #[arg(long)]
    knowledge_dir: Option<PathBuf>,
    /// Metrics report JSON from eval (enables the per-predicate table).
    #[arg(long)]
    eval_report: Option<PathBuf>,
    /// Output directory for the CSV/JSON tables.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Numeric(_) => EXIT_NUMERIC,
        CoreError::Config(_) => EXIT_DATA,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with success
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let jobs = cli.jobs;
    let log = cli.log;
    let seed = cli.seed;
    let run = || -> Result<(), CoreError> {
        match cli.command {
            Command::GenSynth(args) => cmd_gen_synth(args, seed, log),
            Command::BuildKnowledge(args) => cmd_build_knowledge(args, log),
            Command::Train(args) => cmd_train(args, seed, log),
            Command::Eval(args) => cmd_eval(args, log),
            Command::Gradcheck(args) => cmd_gradcheck(args, log),
            Command::Report(args) => cmd_report(args, log),
        }
    };
    match stket_core::exec::with_jobs(jobs, run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn merge_json_overrides<T: serde::Serialize + serde::de::DeserializeOwned>(
    base: &T,
    path: &Path,
) -> Result<T, CoreError> {
    let mut value = serde_json::to_value(base)?;
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
    let overrides: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
    let serde_json::Value::Object(map) = overrides else {
        return Err(CoreError::parse(
            path.display().to_string(),
            "override file must hold a JSON object",
        ));
    };
    let serde_json::Value::Object(base_map) = &mut value else {
        unreachable!("configs serialize to objects")
    };
    for (k, v) in map {
        if !base_map.contains_key(&k) {
            return Err(CoreError::Config(format!(
                "unknown configuration field {k:?} in {}",
                path.display()
            )));
        }
        base_map.insert(k, v);
    }
    Ok(serde_json::from_value(value)?)
}

fn cmd_gen_synth(args: GenSynthArgs, seed: u64, log: LogFormat) -> Result<(), CoreError> {
    let mut cfg = match args.preset {
        Preset::Benchmark => GenConfig::preset_benchmark(seed),
        Preset::Overfit => GenConfig::preset_overfit(seed),
        Preset::Recovery => GenConfig::preset_recovery(seed),
    };
    if let Some(path) = &args.config {
        cfg = merge_json_overrides(&cfg, path)?;
    }
    cfg.seed = seed;
    if let Some(v) = args.videos {
        cfg.videos = v;
    }
    if let Some(f) = args.frames {
        cfg.frames_per_video = f;
    }
    if let Some(p) = args.pairs {
        cfg.pairs_per_video = p;
    }
    if let Some(s) = args.skew {
        cfg.skew = s;
    }
    let (dataset, dynamics) = generate_synthetic_dataset(&cfg)?;
    save_annotations(&dataset, &args.out, Dtype::F32)?;
    dynamics.save(&args.out.join("dynamics.json"))?;
    fs::write(args.out.join("genconfig.json"), serde_json::to_string_pretty(&cfg)?)?;
    emit(
        log,
        &serde_json::json!({
            "event": "gen-synth",
            "out": args.out.display().to_string(),
            "videos": dataset.videos.len(),
            "frames": dataset.videos.iter().map(|v| v.frames.len()).sum::<usize>(),
        }),
        &format!(
            "wrote {} videos to {}",
            dataset.videos.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn cmd_build_knowledge(args: BuildKnowledgeArgs, log: LogFormat) -> Result<(), CoreError> {
    let dataset = load_annotations(&args.annotations)?;
    let mut banks = Banks::build(&dataset);
    banks.spatial.filter_min_count(args.min_pair_count);
    banks.temporal.filter_min_count(args.min_pair_count);
    banks.save(&args.out)?;
    emit(
        log,
        &serde_json::json!({
            "event": "build-knowledge",
            "out": args.out.display().to_string(),
            "spatial_pairs": banks.spatial.pairs.len(),
            "temporal_pairs": banks.temporal.pairs.len(),
        }),
        &format!(
            "built banks for {} spatial / {} temporal class pairs in {}",
            banks.spatial.pairs.len(),
            banks.temporal.pairs.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn model_config_for(
    preset: ModelPreset,
    override_path: Option<&Path>,
    dataset: &stket_core::data::Dataset,
) -> Result<ModelConfig, CoreError> {
    let mut cfg = match preset {
        ModelPreset::Desk => ModelConfig::desk(
            dataset.num_classes(),
            dataset.num_predicates(),
            dataset.predicate_type_sizes.clone(),
        ),
        ModelPreset::Full => ModelConfig::default(),
    };
    if let Some(path) = override_path {
        cfg = merge_json_overrides(&cfg, path)?;
    }
    // label spaces always come from the dataset
    cfg.num_object_classes = dataset.num_classes();
    cfg.num_predicates = dataset.num_predicates();
    if cfg.predicate_type_sizes.iter().sum::<usize>() != cfg.num_predicates {
        cfg.predicate_type_sizes = dataset.predicate_type_sizes.clone();
    }
    if cfg.predicate_type_sizes.is_empty() {
        cfg.classifier_mode = stket_core::model::ClassifierMode::SingleHead;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, seed: u64, log: LogFormat) -> Result<(), CoreError> {
    let dataset = load_annotations(&args.annotations)?;
    let run_cfg = TrainRunConfig {
        epochs: args.epochs,
        seed,
        lr: args.lr,
        clip_norm: args.clip_norm,
        weight_decay: args.weight_decay,
        task: args.task.into(),
        checkpoint_every: args.checkpoint_every,
    };

    let (cfg, mut params, banks, mut state, start_epoch) = if args.resume {
        let resumed = load_train_state(&args.out)?;
        (
            resumed.cfg,
            resumed.params,
            resumed.banks,
            resumed.state,
            resumed.next_epoch,
        )
    } else {
        let cfg = model_config_for(args.model_preset, args.config.as_deref(), &dataset)?;
        let banks = Banks::load(&args.knowledge_dir)?;
        if banks.spatial.num_predicates != cfg.num_predicates {
            return Err(CoreError::Config(format!(
                "knowledge banks cover {} predicates, dataset has {}",
                banks.spatial.num_predicates, cfg.num_predicates
            )));
        }
        let params = ModelParams::init(&cfg, seed);
        let state = OptimizerState::new(&params);
        (cfg, params, banks, state, 0)
    };

    run_cfg.validate()?;
    cfg.check_dataset(dataset.num_classes(), dataset.num_predicates())?;
    let mut summaries = Vec::new();
    for epoch in start_epoch..run_cfg.epochs {
        summaries.push(stket_core::train::train_epoch(
            &mut params,
            &banks,
            &dataset,
            &cfg,
            &run_cfg,
            &mut state,
            epoch,
            &mut |p| {
                emit(
                    log,
                    &serde_json::json!({
                        "epoch": p.epoch,
                        "video": p.video,
                        "loss": p.loss,
                    }),
                    &format!(
                        "epoch {:>3}  video {}  loss {:.4}",
                        p.epoch, p.video, p.loss.total
                    ),
                );
            },
        )?);
        let cadence_hit =
            run_cfg.checkpoint_every > 0 && (epoch + 1) % run_cfg.checkpoint_every == 0;
        if cadence_hit && epoch + 1 < run_cfg.epochs {
            save_train_state(&args.out, &cfg, &params, &banks, &state, &run_cfg, epoch + 1)?;
        }
    }
    save_train_state(&args.out, &cfg, &params, &banks, &state, &run_cfg, run_cfg.epochs)?;
    if let Some(last) = summaries.last() {
        emit(
            log,
            &serde_json::json!({
                "event": "train-finished",
                "epochs": run_cfg.epochs,
                "mean_loss": last.mean_loss,
                "checkpoint": args.out.display().to_string(),
            }),
            &format!(
                "finished {} epochs; mean loss {:.4}; checkpoint at {}",
                run_cfg.epochs,
                last.mean_loss.total,
                args.out.display()
            ),
        );
    }
    Ok(())
}

fn write_report_files(
    report: &MetricsReport,
    report_path: Option<&Path>,
    csv_path: Option<&Path>,
) -> Result<(), CoreError> {
    if let Some(path) = report_path {
        fs::write(path, serde_json::to_string_pretty(report)?)?;
    }
    if let Some(path) = csv_path {
        fs::write(path, per_predicate_csv(report))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, log: LogFormat) -> Result<(), CoreError> {
    let dataset = load_annotations(&args.annotations)?;
    let task: TaskMode = args.task.into();
    if args.k.is_empty() {
        return Err(CoreError::Config("at least one K required".into()));
    }
    let (cfg, mut params, banks) = load_checkpoint(&args.checkpoint)?;
    cfg.check_dataset(dataset.num_classes(), dataset.num_predicates())?;
    if args.f32 {
        params.visit_mut(&mut |_, t| t.round_to_f32());
    }
    let report = if args.baseline {
        if task != TaskMode::PredCls {
            return Err(CoreError::Config(
                "the frequency-prior baseline is defined for predcls".into(),
            ));
        }
        let preds = frequency_prior_baseline(&banks.spatial, &dataset);
        score_predictions(&preds, &dataset, &args.k)?
    } else {
        evaluate(&params, &banks, &cfg, &dataset, task, &args.k)?
    };
    write_report_files(&report, args.report.as_deref(), args.per_predicate_csv.as_deref())?;
    emit(
        log,
        &serde_json::to_value(&report)?,
        &{
            let mut line = format!("task {}:", report.task);
            for k in &report.ks {
                line += &format!("  R@{k} {:.2}  mR@{k} {:.2}", report.recall_at(*k), report.mean_recall_at(*k));
            }
            line
        },
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, log: LogFormat) -> Result<(), CoreError> {
    let results = stket_core::gradsuite::run_gradient_suite(args.seeds)?;
    let mut all_ok = true;
    for r in &results {
        let ok = r.passed();
        all_ok &= ok;
        emit(
            log,
            &serde_json::json!({
                "check": r.name,
                "max_rel_err": r.max_rel_err,
                "tolerance": r.tolerance,
                "passed": ok,
            }),
            &format!(
                "{:<40} max err {:>12.3e}  tol {:>8.0e}  {}",
                r.name,
                r.max_rel_err,
                r.tolerance,
                if ok { "ok" } else { "FAIL" }
            ),
        );
    }
    if all_ok {
        Ok(())
    } else {
        Err(CoreError::Numeric("gradient suite failed".into()))
    }
}

fn cmd_report(args: ReportArgs, log: LogFormat) -> Result<(), CoreError> {
    let dataset = load_annotations(&args.annotations)?;
    fs::create_dir_all(&args.out)?;
    let rows = relationship_distribution(&dataset);
    fs::write(args.out.join("distribution.csv"), distribution_csv(&rows))?;
    fs::write(
        args.out.join("distribution.json"),
        serde_json::to_string_pretty(&rows)?,
    )?;
    let mut written = vec!["distribution.csv", "distribution.json"];
    if let Some(dir) = &args.knowledge_dir {
        let banks = Banks::load(dir)?;
        let table = entropy_table(&banks.temporal);
        fs::write(args.out.join("entropy.csv"), entropy_csv(&table))?;
        fs::write(args.out.join("entropy.json"), serde_json::to_string_pretty(&table)?)?;
        written.push("entropy.csv");
        written.push("entropy.json");
    }
    if let Some(path) = &args.eval_report {
        let text = fs::read_to_string(path)
            .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
        fs::write(args.out.join("per_predicate.csv"), per_predicate_csv(&report))?;
        written.push("per_predicate.csv");
    }
    emit(
        log,
        &serde_json::json!({ "event": "report", "files": written, "out": args.out.display().to_string() }),
        &format!("wrote {} to {}", written.join(", "), args.out.display()),
    );
    Ok(())
}

fn emit(log: LogFormat, json: &serde_json::Value, text: &str) {
    match log {
        LogFormat::Json => println!("{json}"),
        LogFormat::Text => println!("{text}"),
    }
}

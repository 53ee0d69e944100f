//! `latte` — pipeline entry point: make-toy, describe, pseudo-label,
//! train, eval, ablate. Every subcommand works against one run directory
//! (`--run-dir` or `LATTE_RUN_DIR`), takes its exclusive lock while
//! writing, and is safe to re-invoke: finished stages no-op or resume.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use latte_core::ablate::{run_ablation, AblationAxis};
use latte_core::captions::{
    run_describe, CaptionCache, CaptionKind, DescribeConfig, StubProvider,
};
use latte_core::data::{load_dataset, save_dataset, Dataset, Split};
use latte_core::encoders::{load_encoder, save_encoder, snapshot};
use latte_core::error::LatteError;
use latte_core::eval::{evaluate, Classifier, EvalReport};
use latte_core::prototypes::PrototypeBank;
use latte_core::pseudo::{label_dataset, load_czs_table, save_czs_table};
use latte_core::rundir::{run_dir_from_env, RunDirectory, RunLock};
use latte_core::toy::{make_toy_bundle, ToyBundle, ToySpec};
use latte_core::trainer::{
    init_state, train_loop, Optimizer, ResumePoint, TrainConfig, TrainMode, TrainerState,
};

#[derive(Parser)]
#[command(name = "latte", version, about = "Unsupervised prototype-based dual-encoder fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic benchmark into the run directory.
    MakeToy(MakeToyArgs),
    /// Synthesize class/image/group descriptions into the caption cache.
    Describe(DescribeArgs),
    /// Compute and persist the frozen zero-shot pseudo-label table.
    PseudoLabel(PseudoLabelArgs),
    /// Fine-tune the encoders; resumes from the last epoch checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled split.
    Eval(EvalArgs),
    /// Run an ablation grid on the toy benchmark.
    Ablate(AblateArgs),
    /// Print the canonical (timestamp-independent) run-directory hash.
    Hash(HashArgs),
}

#[derive(Args)]
struct RunDirArg {
    /// Run directory; defaults to $LATTE_RUN_DIR.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MakeToyArgs {
    #[command(flatten)]
    run: RunDirArg,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    d_in: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 40)]
    per_class_train: usize,
    #[arg(long, default_value_t = 20)]
    per_class_eval: usize,
    #[arg(long, default_value_t = 0.18)]
    cluster_spread: f64,
    /// Zero-shot test accuracy the corruption sweep calibrates toward.
    #[arg(long, default_value_t = 0.6)]
    target_zs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Stub,
    External,
}

#[derive(Args)]
struct DescribeArgs {
    #[command(flatten)]
    run: RunDirArg,
    /// Dataset directory; defaults to <run-dir>/dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Prompt domain word; defaults to the dataset's own domain.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, value_delimiter = ',', default_values = ["class", "image", "group"])]
    kinds: Vec<String>,
    #[arg(long, default_value_t = 4)]
    group_size: usize,
    #[arg(long, default_value_t = 5)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = ProviderKind::Stub)]
    provider: ProviderKind,
    /// Stub-provider caption noise level in [0,1].
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Caption cache file; defaults to <run-dir>/captions.jsonl.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct PseudoLabelArgs {
    #[command(flatten)]
    run: RunDirArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunDirArg,
    /// Run-config JSON; defaults to <run-dir>/config.json if present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint directory to continue from; re-invocation resumes from
    /// the run directory's own state even without this flag.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_iterations: Option<u64>,
    #[arg(long)]
    max_epochs: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory (a run directory); defaults to $LATTE_RUN_DIR.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory; defaults to <checkpoint>/dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunDirArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Comma-separated μ values, e.g. 0,0.99.
    #[arg(long, value_delimiter = ',')]
    mu: Vec<f64>,
    /// Comma-separated group sizes, e.g. 2,4,8,16.
    #[arg(long, value_delimiter = ',')]
    group_size: Vec<usize>,
    /// Mixer on/off, e.g. true,false.
    #[arg(long, value_delimiter = ',')]
    mixer: Vec<bool>,
    /// Loss-stream cells among both|zs|ft, e.g. both,zs.
    #[arg(long, value_delimiter = ',')]
    losses: Vec<String>,
    /// Description subsets joined with '+', e.g. class+image+group,class.
    #[arg(long, value_delimiter = ',')]
    descriptions: Vec<String>,
    /// Ground-truth-correct images per group, e.g. 1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    correct_images: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    data_fraction: Vec<f64>,
}

#[derive(Args)]
struct HashArgs {
    #[command(flatten)]
    run: RunDirArg,
}

/// On-disk resume state: where the loop stopped plus optimizer moments.
#[derive(Serialize, Deserialize)]
struct TrainStateFile {
    format_version: u32,
    resume: ResumePoint,
    optimizer: Optimizer,
    mode: TrainMode,
}

const TRAIN_STATE_FORMAT_VERSION: u32 = 1;
const TOY_META_FILE: &str = "toy.json";

/// Calibration record `make-toy` leaves next to the dataset.
#[derive(Serialize, Deserialize)]
struct ToyMeta {
    zs_accuracy: f64,
    gamma: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeToy(args) => cmd_make_toy(args),
        Command::Describe(args) => cmd_describe(args),
        Command::PseudoLabel(args) => cmd_pseudo_label(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Hash(args) => cmd_hash(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn open_run(arg: &RunDirArg) -> anyhow::Result<(RunDirectory, RunLock)> {
    let root = run_dir_from_env(arg.run_dir.clone())?;
    let run = RunDirectory::open(root)?;
    let lock = run.lock()?;
    Ok((run, lock))
}

fn dataset_dir(run: &RunDirectory, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| run.root().join("dataset"))
}

fn load_split(dir: &Path, split: Split) -> anyhow::Result<Dataset> {
    load_dataset(dir, split).with_context(|| format!("loading {split} split from {}", dir.display()))
}

fn load_init_encoder(run: &RunDirectory) -> anyhow::Result<latte_core::encoders::EncoderParams> {
    let path = run.encoder_init_path();
    if !path.exists() {
        return Err(LatteError::MissingArtifact {
            artifact: format!("initial encoder checkpoint {}", path.display()),
            produced_by: "make-toy".into(),
        }
        .into());
    }
    Ok(load_encoder(&path)?)
}

/// Loads the c_zs table, computing and persisting it from the initial
/// encoder snapshot when absent.
fn ensure_czs(run: &RunDirectory, dataset: &Dataset) -> anyhow::Result<Vec<(String, usize)>> {
    let path = run.czs_path();
    if path.exists() {
        return Ok(load_czs_table(&path)?);
    }
    let frozen = snapshot(&load_init_encoder(run)?, 0);
    let table = label_dataset(&frozen, dataset)?;
    save_czs_table(&table, &path)?;
    Ok(table)
}

fn cmd_make_toy(args: MakeToyArgs) -> anyhow::Result<()> {
    let (run, _lock) = open_run(&args.run)?;
    let spec = ToySpec {
        num_classes: args.classes,
        d_in: args.d_in,
        embed_dim: args.embed_dim,
        per_class_train: args.per_class_train,
        per_class_eval: args.per_class_eval,
        cluster_spread: args.cluster_spread,
        target_zs_accuracy: args.target_zs,
        seed: args.seed,
        ..ToySpec::default()
    };
    let bundle = make_toy_bundle(&spec)?;
    let dir = run.root().join("dataset");
    save_dataset(&bundle.train, &dir)?;
    save_dataset(&bundle.val, &dir)?;
    save_dataset(&bundle.test, &dir)?;
    save_encoder(&bundle.init_params, &run.encoder_init_path())?;
    let meta = ToyMeta {
        zs_accuracy: bundle.zs_accuracy,
        gamma: bundle.gamma,
    };
    std::fs::write(
        run.root().join(TOY_META_FILE),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    println!(
        "toy benchmark written to {}: {} classes, {} train / {} test samples, zero-shot {:.1}% (gamma {:.3})",
        dir.display(),
        args.classes,
        bundle.train.len(),
        bundle.test.len(),
        100.0 * bundle.zs_accuracy,
        bundle.gamma
    );
    Ok(())
}

fn cmd_describe(args: DescribeArgs) -> anyhow::Result<()> {
    let (run, _lock) = open_run(&args.run)?;
    let dataset = load_split(&dataset_dir(&run, &args.dataset), Split::Train)?;
    let czs = ensure_czs(&run, &dataset)?;
    let kinds: Vec<CaptionKind> = args
        .kinds
        .iter()
        .map(|k| k.parse())
        .collect::<Result<_, _>>()?;
    let provider = match args.provider {
        ProviderKind::Stub => StubProvider::new(args.noise),
        ProviderKind::External => {
            bail!("no external LMM provider is configured; use --provider stub")
        }
    };
    let cache_path = args.cache.unwrap_or_else(|| run.captions_path());
    let mut cache = CaptionCache::open(&cache_path)?;
    let cfg = DescribeConfig {
        domain: args.domain.unwrap_or_else(|| dataset.domain.clone()),
        kinds,
        group_size: args.group_size,
        workers: args.workers,
        seed: args.seed,
        ..DescribeConfig::default()
    };
    let stats = run_describe(&czs, &dataset.class_names, &provider, &mut cache, &cfg)?;
    println!(
        "captions: {} generated, {} already cached ({} records in {})",
        stats.generated,
        stats.already_cached,
        cache.len(),
        cache_path.display()
    );
    Ok(())
}

fn cmd_pseudo_label(args: PseudoLabelArgs) -> anyhow::Result<()> {
    let (run, _lock) = open_run(&args.run)?;
    let dataset = load_split(&dataset_dir(&run, &args.dataset), Split::Train)?;
    // recompute unconditionally: the frozen snapshot makes this a
    // deterministic no-op when the table already matches
    let frozen = snapshot(&load_init_encoder(&run)?, 0);
    let table = label_dataset(&frozen, &dataset)?;
    save_czs_table(&table, &run.czs_path())?;
    println!("{} zero-shot pseudo-labels written to {}", table.len(), run.czs_path().display());
    Ok(())
}

fn resolve_train_config(run: &RunDirectory, args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = if let Some(path) = &args.config {
        TrainConfig::load(path)?
    } else if run.config_path().exists() {
        TrainConfig::load(&run.config_path())?
    } else {
        TrainConfig::default()
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = mode.parse()?;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(i) = args.max_iterations {
        cfg.max_iterations = i;
    }
    if let Some(e) = args.max_epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let (run, _lock) = open_run(&args.run)?;
    let cfg = resolve_train_config(&run, &args)?;
    // config snapshot lands before any compute
    cfg.save(&run.config_path())?;
    let dataset = load_split(&dataset_dir(&run, &args.dataset), Split::Train)?;
    let init_params = load_init_encoder(&run)?;

    let (cache, czs) = if cfg.mode == TrainMode::Latteclip {
        if !run.captions_path().exists() {
            return Err(LatteError::MissingArtifact {
                artifact: format!("caption cache {}", run.captions_path().display()),
                produced_by: "describe".into(),
            }
            .into());
        }
        if !run.czs_path().exists() {
            return Err(LatteError::MissingArtifact {
                artifact: format!("zero-shot pseudo-label table {}", run.czs_path().display()),
                produced_by: "pseudo-label".into(),
            }
            .into());
        }
        (
            Some(CaptionCache::open(&run.captions_path())?),
            Some(load_czs_table(&run.czs_path())?),
        )
    } else {
        (None, None)
    };

    // the checkpoint to continue from: an explicit --resume directory, or
    // this run directory's own epoch state when a previous invocation
    // left one behind
    let ckpt_dir = match &args.resume {
        Some(dir) => Some(RunDirectory::open(dir.clone())?),
        None => run.train_state_path().exists().then(|| run.clone()),
    };
    let saved_state = match &ckpt_dir {
        Some(ckpt) if ckpt.train_state_path().exists() => {
            let text = std::fs::read_to_string(ckpt.train_state_path())?;
            let state: TrainStateFile = serde_json::from_str(&text)?;
            if state.format_version != TRAIN_STATE_FORMAT_VERSION {
                return Err(LatteError::FormatVersion {
                    file: ckpt.train_state_path().display().to_string(),
                    expected: TRAIN_STATE_FORMAT_VERSION,
                    found: state.format_version,
                }
                .into());
            }
            if state.mode != cfg.mode {
                return Err(LatteError::ModeMismatch(format!(
                    "saved training state is {} but the config asks for {}",
                    state.mode, cfg.mode
                ))
                .into());
            }
            Some(state)
        }
        Some(ckpt) => {
            return Err(LatteError::MissingArtifact {
                artifact: format!("training state {}", ckpt.train_state_path().display()),
                produced_by: "train".into(),
            }
            .into());
        }
        None => None,
    };

    let mut state = init_state(&dataset, init_params, cache.as_ref(), czs.as_deref(), &cfg)?;
    let resume = match saved_state {
        Some(saved) => {
            let ckpt = ckpt_dir.as_ref().unwrap();
            state.live = load_encoder(&ckpt.encoder_final_path())
                .context("resume needs the epoch encoder checkpoint")?;
            if cfg.mode == TrainMode::Latteclip {
                state.bank = Some(PrototypeBank::load(&ckpt.prototypes_path())?);
            }
            state.optimizer = saved.optimizer;
            saved.resume
        }
        None => {
            // fresh run: start the metrics stream from scratch
            std::fs::write(run.metrics_path(), "")?;
            ResumePoint::default()
        }
    };

    let metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run.metrics_path())?;
    let mut metrics = std::io::BufWriter::new(metrics);
    let save_checkpoint = |point: ResumePoint, s: &TrainerState| -> latte_core::Result<()> {
        save_encoder(&s.live, &run.encoder_final_path())?;
        if let Some(bank) = &s.bank {
            bank.save(&run.prototypes_path())?;
        }
        let file = TrainStateFile {
            format_version: TRAIN_STATE_FORMAT_VERSION,
            resume: point,
            optimizer: s.optimizer.clone(),
            mode: cfg.mode,
        };
        std::fs::write(
            run.train_state_path(),
            serde_json::to_string_pretty(&file).map_err(LatteError::from)? + "\n",
        )?;
        Ok(())
    };

    let summary = train_loop(
        &dataset,
        &mut state,
        &cfg,
        resume,
        &mut |report| {
            use std::io::Write;
            let line = serde_json::to_string(report).map_err(LatteError::from)?;
            writeln!(metrics, "{line}").map_err(LatteError::from)?;
            Ok(())
        },
        &mut |point, s| save_checkpoint(point, s),
    )?;
    {
        use std::io::Write;
        metrics.flush()?;
    }
    // cover a max_iterations stop mid-epoch
    save_checkpoint(
        ResumePoint {
            completed_epochs: summary.completed_epochs,
            global_step: summary.final_step,
        },
        &state,
    )?;
    if summary.steps_run == 0 {
        println!("nothing to do: run already at step {} after {} epochs", summary.final_step, summary.completed_epochs);
    } else {
        println!(
            "trained {} steps ({} epochs done, global step {}); checkpoints in {}",
            summary.steps_run,
            summary.completed_epochs,
            summary.final_step,
            run.root().display()
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let root = run_dir_from_env(args.checkpoint.clone())?;
    let run = RunDirectory::open(root)?;
    let split: Split = args.split.parse()?;
    let dataset = load_split(&dataset_dir(&run, &args.dataset), split)?;
    if !run.config_path().exists() {
        return Err(LatteError::MissingArtifact {
            artifact: format!("run config {}", run.config_path().display()),
            produced_by: "train".into(),
        }
        .into());
    }
    let cfg = TrainConfig::load(&run.config_path())?;
    if !run.encoder_final_path().exists() {
        return Err(LatteError::MissingArtifact {
            artifact: format!("trained encoder checkpoint {}", run.encoder_final_path().display()),
            produced_by: "train".into(),
        }
        .into());
    }
    let params = load_encoder(&run.encoder_final_path())?;
    let checkpoint_id = std::fs::read_to_string(run.train_state_path())
        .ok()
        .and_then(|text| serde_json::from_str::<TrainStateFile>(&text).ok())
        .map(|s| format!("step{}", s.resume.global_step));
    let bank;
    let classifier = match cfg.mode {
        TrainMode::Latteclip => {
            if !run.prototypes_path().exists() {
                return Err(LatteError::MissingArtifact {
                    artifact: format!("prototype checkpoint {}", run.prototypes_path().display()),
                    produced_by: "train".into(),
                }
                .into());
            }
            bank = PrototypeBank::load(&run.prototypes_path())?;
            Classifier::Prototypes(&bank)
        }
        TrainMode::FlypPl | TrainMode::Oracle => {
            if run.prototypes_path().exists() {
                return Err(LatteError::ModeMismatch(format!(
                    "checkpoint directory contains a prototype bank but the run mode is {}; {0} checkpoints are evaluated with class-template embeddings",
                    cfg.mode
                ))
                .into());
            }
            Classifier::Templates
        }
    };
    let report = evaluate(&dataset, &params, classifier, checkpoint_id)?;
    report.save(&run.eval_report_path(&args.split))?;
    print_eval_report(&report, &dataset.class_names);
    Ok(())
}

fn print_eval_report(report: &EvalReport, class_names: &[String]) {
    println!(
        "{} [{}] via {}: top-1 {:.2}% over {} samples",
        report.dataset,
        report.split,
        report.mode,
        100.0 * report.top1,
        report.n
    );
    for (name, acc) in class_names.iter().zip(&report.per_class_top1) {
        match acc {
            Some(a) => println!("  {name:<24} {:.2}%", 100.0 * a),
            None => println!("  {name:<24} (absent)"),
        }
    }
}

fn parse_loss_cell(s: &str) -> anyhow::Result<(bool, bool)> {
    match s {
        "both" => Ok((true, true)),
        "zs" => Ok((true, false)),
        "ft" => Ok((false, true)),
        other => Err(anyhow!("unknown loss cell `{other}` (expected both|zs|ft)")),
    }
}

fn parse_description_set(s: &str) -> anyhow::Result<Vec<CaptionKind>> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split('+').map(|k| Ok(k.parse()?)).collect()
}

fn load_toy_bundle(run: &RunDirectory) -> anyhow::Result<ToyBundle> {
    let meta_path = run.root().join(TOY_META_FILE);
    if !meta_path.exists() {
        return Err(LatteError::MissingArtifact {
            artifact: format!("toy benchmark metadata {}", meta_path.display()),
            produced_by: "make-toy".into(),
        }
        .into());
    }
    let meta: ToyMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    let dir = run.root().join("dataset");
    Ok(ToyBundle {
        train: load_split(&dir, Split::Train)?,
        val: load_split(&dir, Split::Val)?,
        test: load_split(&dir, Split::Test)?,
        init_params: load_init_encoder(run)?,
        zs_accuracy: meta.zs_accuracy,
        gamma: meta.gamma,
    })
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let (run, _lock) = open_run(&args.run)?;
    let bundle = load_toy_bundle(&run)?;
    let mut base = if let Some(path) = &args.config {
        TrainConfig::load(path)?
    } else if run.config_path().exists() {
        TrainConfig::load(&run.config_path())?
    } else {
        TrainConfig::default()
    };
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    let mut axes = Vec::new();
    if !args.descriptions.is_empty() {
        let sets = args
            .descriptions
            .iter()
            .map(|s| parse_description_set(s))
            .collect::<anyhow::Result<Vec<_>>>()?;
        axes.push(AblationAxis::Descriptions(sets));
    }
    if !args.mixer.is_empty() {
        axes.push(AblationAxis::Mixer(args.mixer.clone()));
    }
    if !args.losses.is_empty() {
        let pairs = args
            .losses
            .iter()
            .map(|s| parse_loss_cell(s))
            .collect::<anyhow::Result<Vec<_>>>()?;
        axes.push(AblationAxis::Losses(pairs));
    }
    if !args.mu.is_empty() {
        axes.push(AblationAxis::Mu(args.mu.clone()));
    }
    if !args.group_size.is_empty() {
        axes.push(AblationAxis::GroupSize(args.group_size.clone()));
    }
    if !args.correct_images.is_empty() {
        axes.push(AblationAxis::CorrectImages(args.correct_images.clone()));
    }
    if !args.data_fraction.is_empty() {
        axes.push(AblationAxis::DataFraction(args.data_fraction.clone()));
    }
    let report = run_ablation(&bundle, &base, &axes, args.noise)?;
    std::fs::write(
        run.ablation_path(),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!("zero-shot baseline: {:.2}%", 100.0 * report.zero_shot_top1);
    for cell in &report.cells {
        let label = if cell.label.is_empty() { "base" } else { &cell.label };
        match (&cell.top1, &cell.skipped) {
            (Some(top1), _) => println!("  {label:<48} {:.2}%", 100.0 * top1),
            (None, Some(reason)) => println!("  {label:<48} skipped: {reason}"),
            (None, None) => println!("  {label:<48} skipped"),
        }
    }
    println!("report written to {}", run.ablation_path().display());
    Ok(())
}

fn cmd_hash(args: HashArgs) -> anyhow::Result<()> {
    let root = run_dir_from_env(args.run.run_dir.clone())?;
    let run = RunDirectory::open(root)?;
    println!("{}", run.canonical_hash()?);
    Ok(())
}

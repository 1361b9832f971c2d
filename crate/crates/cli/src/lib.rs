//! Argument parsing and subcommand drivers for the `modrec` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modrec_core::eval::{self, EvalReport};
use modrec_core::gradsuite::run_suite;
use modrec_core::io::{dataset_hash, read_dataset, read_model, write_dataset, write_model};
use modrec_core::train::{export_history, train};
use modrec_core::{ArchId, ArchitectureSpec, Dataset, Error, Network, Result, TrainConfig};
use modrec_signal::{build_dataset, ChannelConfig, GenConfig, Profile};
use serde::{Deserialize, Serialize};

/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "modrec", version, about = "Modulation recognition: data generation, training and evaluation")]
pub struct Cli {
    /// JSON file with `gen` and/or `train` sections; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible outputs.
    #[arg(long, global = true, env = "MODREC_THREADS", value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled dataset file.
    Gen(GenArgs),
    /// Train one architecture on a dataset file.
    Train(TrainArgs),
    /// Evaluate a trained model and write per-SNR reports.
    Eval(EvalArgs),
    /// Compare several evaluation directories.
    Report(ReportArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// paper, smoke-paper or smoke.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_min: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_max: Option<i32>,
    #[arg(long)]
    pub snr_step: Option<i32>,
    #[arg(long)]
    pub frames_per_cell: Option<usize>,
    /// Add sample-rate offset, carrier offset and multipath fading.
    #[arg(long)]
    pub impaired: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_arch)]
    pub arch: ArchId,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Seed of the stratified train/validation/test split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Defaults to the model path with a `.history.csv` extension.
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Test,
    Val,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Part of the dataset to evaluate, re-split with `--split-seed`.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Model name in the report; defaults to the architecture id.
    #[arg(long)]
    pub label: Option<String>,
    /// Smallest off-diagonal percentage listed in `misclass_18.csv`.
    #[arg(long, default_value_t = 5.0)]
    pub misclass_threshold: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories written by `eval`.
    #[arg(long = "in", value_name = "DIR", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_arch(s: &str) -> std::result::Result<ArchId, String> {
    match ArchId::from_str(s) {
        Ok(ArchId::Custom) => Err("custom architectures are not trainable from the command line".into()),
        Ok(a) => Ok(a),
        Err(e) => Err(e.to_string()),
    }
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen: Option<GenConfig>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

/// The parent directory of an output file must already exist.
fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

/// Output directories are created, but must not collide with a file.
fn require_dir_target(path: &Path) -> Result<()> {
    if path.exists() && !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "exists and is not a directory"),
        ));
    }
    Ok(())
}

pub fn default_history_path(model: &Path) -> PathBuf {
    model.with_extension("history.csv")
}

/// Generation settings after layering defaults, config file and flags.
pub fn resolve_gen(args: &GenArgs, file: &FileConfig) -> Result<GenConfig> {
    let mut cfg = file.gen.clone().unwrap_or_default();
    if let Some(p) = &args.profile {
        let p = Profile::from_str(p)?;
        cfg.profile = p.name().to_string();
        cfg.frames_per_cell = p.frames_per_cell();
    }
    if let Some(n) = args.frames_per_cell {
        cfg.frames_per_cell = n;
    }
    if let Some(v) = args.snr_min {
        cfg.snr_min = v;
    }
    if let Some(v) = args.snr_max {
        cfg.snr_max = v;
    }
    if let Some(v) = args.snr_step {
        cfg.snr_step = v;
    }
    if args.impaired {
        if cfg.profile.ends_with("+impaired") {
            cfg.synth.channel = ChannelConfig::impaired();
        } else {
            cfg = cfg.impaired();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Training settings after layering defaults, config file and flags.
pub fn resolve_train(args: &TrainArgs, file: &FileConfig) -> Result<TrainConfig> {
    let mut cfg = file.train.clone().unwrap_or_default();
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.chunk_size {
        cfg.chunk_size = v;
    }
    if args.quiet {
        cfg.progress = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen(args: &GenArgs, file: &FileConfig) -> Result<()> {
    require_parent(&args.out)?;
    let cfg = resolve_gen(args, file)?;
    let data = build_dataset(&cfg, args.seed)?;
    write_dataset(&data, &args.out)?;
    println!(
        "wrote {} examples ({} classes, {} SNRs) to {}  sha256 {}",
        data.len(),
        data.num_classes(),
        data.snrs().len(),
        args.out.display(),
        dataset_hash(&data)?
    );
    Ok(())
}

fn pick_split(data: Dataset, which: SplitChoice, seed: u64) -> Result<Dataset> {
    if which == SplitChoice::All {
        return Ok(data);
    }
    let (tr, va, te) = data.split(seed)?;
    Ok(match which {
        SplitChoice::Train => tr,
        SplitChoice::Val => va,
        _ => te,
    })
}

fn train_cmd(args: &TrainArgs, file: &FileConfig) -> Result<()> {
    require_file(&args.data)?;
    require_parent(&args.out)?;
    let history_path = args.history.clone().unwrap_or_else(|| default_history_path(&args.out));
    require_parent(&history_path)?;
    let cfg = resolve_train(args, file)?;
    let data = read_dataset(&args.data)?;
    let (tr, va, _) = data.split(args.split_seed)?;
    let spec = ArchitectureSpec::preset(args.arch, data.num_classes(), cfg.dropout)?;
    let net = Network::<f32>::build(&spec, cfg.seed)?;
    eprintln!(
        "training {} ({} parameters) on {} examples, validating on {}",
        args.arch,
        net.param_count(),
        tr.len(),
        va.len()
    );
    let (net, history) = train(net, &tr, &va, &cfg)?;
    write_model(&net, &args.out)?;
    export_history(&history, &history_path)?;
    let best = history.best().expect("at least one epoch");
    println!(
        "best epoch {} of {} (val_loss {:.4}, val_acc {:.4}); model {}  history {}",
        history.best_epoch,
        history.epochs.len(),
        best.val_loss,
        best.val_acc,
        args.out.display(),
        history_path.display()
    );
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    require_file(&args.model)?;
    require_file(&args.data)?;
    require_dir_target(&args.out)?;
    let net = read_model::<f32>(&args.model)?;
    let data = read_dataset(&args.data)?;
    if net.num_classes() != data.num_classes() {
        return Err(Error::Config(format!(
            "model predicts {} classes but the dataset has {}",
            net.num_classes(),
            data.num_classes()
        )));
    }
    let part = pick_split(data, args.split, args.split_seed)?;
    let label = args.label.clone().unwrap_or_else(|| net.spec().arch.name().to_string());
    let report = eval::evaluate(&net, &part, &label)?;
    eval::render(&report, &args.out)?;
    if report.confusion.contains_key(&18) {
        let rows = eval::misclass_table(&report, 18, args.misclass_threshold)?;
        let path = args.out.join("misclass_18.csv");
        fs::write(&path, eval::misclass_csv(&rows)).map_err(|e| Error::io(path, e))?;
    }
    println!(
        "{}: overall {:.4}, high-SNR mean {}, +18 dB {} on {} examples -> {}",
        report.model,
        report.overall_accuracy,
        fmt_opt(report.high_snr_accuracy),
        fmt_opt(report.accuracy_at_18),
        part.len(),
        args.out.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let files: Vec<PathBuf> = args.inputs.iter().map(|d| d.join("report.json")).collect();
    for f in &files {
        require_file(f)?;
    }
    require_dir_target(&args.out)?;
    let reports = files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            EvalReport::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    eval::render_comparison(&reports, &args.out)?;
    let mut used = std::collections::BTreeSet::new();
    for (i, r) in reports.iter().enumerate() {
        let mut name = r.model.clone();
        if !used.insert(name.clone()) {
            name = format!("{}_{i}", r.model);
        }
        let stem = name.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_', "_");
        if let Some(svg) = eval::confusion_svg(r, 18) {
            let path = args.out.join(format!("confusion_18_{stem}.svg"));
            fs::write(&path, svg).map_err(|e| Error::io(path, e))?;
        }
    }
    println!("compared {} reports -> {}", reports.len(), args.out.display());
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let entries = run_suite(args.seed)?;
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
    let mut ok = true;
    for e in &entries {
        let pass = e.max_rel_error < GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{:<width$}  max_rel_error {:.3e}  ({} coords, worst in {})  {}",
            e.name,
            e.max_rel_error,
            e.checked,
            e.worst_tensor,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn configure_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = (|| -> Result<bool> {
        configure_threads(cli.threads)?;
        let file = FileConfig::load(cli.config.as_deref())?;
        match &cli.command {
            Command::Gen(a) => gen(a, &file).map(|_| true),
            Command::Train(a) => train_cmd(a, &file).map(|_| true),
            Command::Eval(a) => eval_cmd(a).map(|_| true),
            Command::Report(a) => report_cmd(a).map(|_| true),
            Command::Gradcheck(a) => gradcheck(a),
        }
    })();
    match result {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

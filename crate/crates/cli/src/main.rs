use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixlab::checkpoint::{self, Checkpoint};
use mixlab::config::{ConfigError, Precision, TrainConfig};
use mixlab::report::{self, ReportError};
use mixlab::suite::{self, SuiteConfig, SuiteError};
use mixlab::trainer::{self, Metric, MetricEvent, Split, TrainError};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "mixlab", version, about = "Mixed-batch continual-learning experiments", after_help = TrainConfig::help_text())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate a single experiment.
    Run(RunArgs),
    /// Run the foundation stage and all seven experiments, then write the report.
    Suite(RunArgs),
    /// Full evaluation of a checkpoint on both validation splits.
    Eval(EvalArgs),
    /// Build the results table, curves and Pareto frontier from metric logs.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Math:NLI sub-batch ratio, e.g. 3:1.
    #[arg(long)]
    ratio: Option<String>,
    /// Output directory for logs, checkpoints and reports.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    quick_eval_every: Option<usize>,
    #[arg(long)]
    quick_eval_size: Option<usize>,
    /// Run in 64-bit floating point (verification mode).
    #[arg(long)]
    f64: bool,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Suppress per-evaluation progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; its embedded config fixes the data splits.
    checkpoint: PathBuf,
    /// Evaluation threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Evaluate in 64-bit floating point.
    #[arg(long)]
    f64: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing `*.metrics.jsonl` logs.
    logs: PathBuf,
    /// Where to write the report files (defaults to the log directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::config(e),
            _ => Failure::runtime(e),
        }
    }
}

impl From<SuiteError> for Failure {
    fn from(e: SuiteError) -> Self {
        if e.is_config_error() || matches!(e, SuiteError::Report(ReportError::MissingBaseline)) {
            Failure::config(e)
        } else {
            Failure::runtime(e)
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(_) => Failure::runtime(e),
            _ => Failure::config(e),
        }
    }
}

/// Applies the config file, then `--set` overrides, then dedicated flags.
fn apply_overrides(args: &RunArgs, set: &mut dyn FnMut(&str, &str) -> Result<(), ConfigError>) -> Result<(), Failure> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Failure::config(format!("{}: {}", path.display(), ConfigError::Syntax { line: i + 1 }))
            })?;
            set(k.trim(), v.trim()).map_err(Failure::config)?;
        }
    }
    for kv in &args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        set(k.trim(), v.trim()).map_err(Failure::config)?;
    }
    let flags: [(&str, Option<String>); 6] = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("ratio", args.ratio.clone()),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("quick_eval_every", args.quick_eval_every.map(|v| v.to_string())),
        ("quick_eval_size", args.quick_eval_size.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set(k, &v).map_err(Failure::config)?;
        }
    }
    if args.f64 {
        set("precision", "f64").map_err(Failure::config)?;
    }
    Ok(())
}

fn progress(quiet: bool) -> impl FnMut(&MetricEvent) {
    move |e: &MetricEvent| {
        if !quiet && e.metric == Metric::Accuracy {
            let split = match e.split {
                Split::Quick => "quick",
                Split::Full => "full",
            };
            eprintln!(
                "[{}] step {:>6} {split:<5} {:<4} accuracy {:.4}",
                e.experiment, e.step, e.task, e.value
            );
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let mut config = TrainConfig::default();
    apply_overrides(args, &mut |k, v| config.set(k, v))?;
    config.validate().map_err(Failure::config)?;
    let (math, nli) = suite::splits(&config).map_err(Failure::runtime)?;
    let mut hook = progress(args.quiet);
    suite::run_stage(&config, &math, &nli, &args.out, Some(&mut hook))?;
    let paths = trainer::RunPaths::new(&args.out, &config.experiment);
    println!("metrics: {}", paths.metrics.display());
    println!("best checkpoint: {}", paths.best.display());
    println!("final checkpoint: {}", paths.final_ckpt.display());
    Ok(())
}

fn cmd_suite(args: &RunArgs) -> Result<(), Failure> {
    let mut config = SuiteConfig::default();
    apply_overrides(args, &mut |k, v| config.set(k, v))?;
    config.stages(&args.out).map_err(Failure::config)?;
    let quiet = args.quiet;
    let mut hook = progress(quiet);
    let written = suite::run_suite(
        &config,
        &args.out,
        |stage| {
            if !quiet {
                eprintln!("== stage {} (ratio {})", stage.experiment, stage.ratio);
            }
        },
        &mut hook,
    )?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    fn go<T: mixlab::tensor::Scalar>(path: &Path, workers: usize) -> Result<(), Failure> {
        let ckpt: Checkpoint<T> = checkpoint::load(path).map_err(Failure::runtime)?;
        let (math, nli) = suite::splits(&ckpt.config).map_err(Failure::runtime)?;
        for split in [&math, &nli] {
            let m = trainer::full_eval(&ckpt.params, split, workers)?;
            println!(
                "{} accuracy {:.4} loss {:.4} examples {}",
                split.task, m.accuracy, m.loss, m.examples
            );
        }
        Ok(())
    }
    let precision = if args.f64 { Precision::F64 } else { Precision::F32 };
    match precision {
        Precision::F32 => go::<f32>(&args.checkpoint, args.workers),
        Precision::F64 => go::<f64>(&args.checkpoint, args.workers),
    }
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    let logs = report::load_logs(&args.logs)?;
    let out = args.out.as_deref().unwrap_or(&args.logs);
    for p in report::write_report(&logs, out)? {
        println!("wrote {}", p.display());
    }
    print!("{}", report::render_table_text(&report::build_table(&logs)?));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Suite(a) => cmd_suite(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! `densecotrain` command-line front end.
//!
//! Exit codes: 0 success, 2 usage/validation, 3 I/O, 4 runtime failure.

mod commands;
mod config;
mod error;
mod reports;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use densecotrain::tuner::Algorithm;

use commands::Globals;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "densecotrain",
    version,
    about = "Co-training for dense object detection"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; does not change results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dense-scene dataset (CSV + manifest).
    SynthGen(SynthGenArgs),
    /// Seeded labeled/unlabeled selection and train/val/test split.
    Split(SplitArgs),
    /// Score a predictions file against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the co-training loop.
    Cotrain(CotrainArgs),
    /// Search pipeline hyperparameters.
    Tune(TuneArgs),
    /// Summarize a run directory and plot it.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    #[arg(long)]
    images: usize,
    #[arg(long)]
    rows: Option<u32>,
    #[arg(long)]
    cols: Option<u32>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    box_w: Option<f64>,
    #[arg(long)]
    box_h: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    n_labeled: usize,
    #[arg(long, default_value_t = 0)]
    n_unlabeled: usize,
    /// train,val,test
    #[arg(long, value_delimiter = ',', num_args = 3)]
    fractions: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions, JSON lines.
    #[arg(long)]
    predictions: PathBuf,
    /// Ground-truth annotation CSV.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, default_value_t = densecotrain::metrics::DEFAULT_MAX_DETS)]
    max_dets: usize,
    /// Also write one PR-curve SVG per IoU threshold.
    #[arg(long)]
    pr_svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    SelfTrain,
}

#[derive(Args)]
struct CotrainArgs {
    /// Hyperparameter vector (JSON, as written by `tune`).
    #[arg(long)]
    hyper: Option<PathBuf>,
    /// Run an ablation instead of cross-view exchange.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    tau_conf: Option<f64>,
    #[arg(long)]
    n_labeled: Option<usize>,
    #[arg(long)]
    n_unlabeled: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Ga,
    Sa,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    n_labeled: Option<usize>,
    #[arg(long)]
    n_unlabeled: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding run_report.json.
    #[arg(long)]
    run: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::SynthGen(a) => commands::synth_gen(
            &g,
            &commands::SynthGen {
                images: a.images,
                rows: a.rows,
                cols: a.cols,
                overlap: a.overlap,
                width: a.width,
                height: a.height,
                box_w: a.box_w,
                box_h: a.box_h,
                jitter: a.jitter,
            },
        ),
        Command::Split(a) => commands::split(
            &g,
            &commands::Split {
                annotations: a.annotations,
                n_labeled: a.n_labeled,
                n_unlabeled: a.n_unlabeled,
                fractions: a.fractions.map(|f| [f[0], f[1], f[2]]),
            },
        ),
        Command::Evaluate(a) => commands::evaluate_cmd(
            &g,
            &commands::Evaluate {
                predictions: a.predictions,
                annotations: a.annotations,
                max_dets: a.max_dets,
                pr_svg: a.pr_svg,
            },
        ),
        Command::Cotrain(a) => commands::cotrain(
            &g,
            &commands::Cotrain {
                hyper: a.hyper,
                self_train: matches!(a.baseline, Some(Baseline::SelfTrain)),
                resume: a.resume,
                max_rounds: a.max_rounds,
                tau_conf: a.tau_conf,
                n_labeled: a.n_labeled,
                n_unlabeled: a.n_unlabeled,
            },
        ),
        Command::Tune(a) => commands::tune(
            &g,
            &commands::Tune {
                algorithm: a.algorithm.map(|x| match x {
                    AlgorithmArg::Ga => Algorithm::Ga,
                    AlgorithmArg::Sa => Algorithm::Sa,
                }),
                budget: a.budget,
                population: a.population,
                n_labeled: a.n_labeled,
                n_unlabeled: a.n_unlabeled,
            },
        ),
        Command::Report(a) => commands::report(&g, &a.run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DENSECOTRAIN_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

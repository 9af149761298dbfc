use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tempsamp_core::advantage::Strategy;
use tempsamp_core::metrics::VERY_GOOD_THRESHOLD;
use tempsamp_core::Task;

mod commands;
mod config;
mod error;
mod io;

use config::{parse_steps, Overrides};

/// Mixed-policy GRPO experiments on synthetic temporal grounding and
/// highlight detection.
#[derive(Debug, Parser)]
#[command(name = "tempsamp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one policy and write the run log, summary and final policy.
    #[command(allow_negative_numbers = true)]
    Train(RunArgs),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Print the reward shaping curve as CSV.
    #[command(allow_negative_numbers = true)]
    Shape(ShapeArgs),
    /// Train every (strategy, seed) pair and write plot-ready comparison data.
    #[command(allow_negative_numbers = true)]
    Compare(CompareArgs),
    /// Generate a synthetic dataset as JSONL.
    #[command(allow_negative_numbers = true)]
    GenData(GenDataArgs),
    /// Rank a trained policy's answers for every instance of a dataset.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// none, downscale, anchor or non_linear_shape.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Seeds both dataset generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Steps per phase: `N` for both phases or `A,B`.
    #[arg(long, value_parser = parse_steps)]
    steps: Option<(usize, usize)>,
    /// Group size, including the injected solution.
    #[arg(long)]
    g: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    lambda_off: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Format reward weight in the think-answer phase.
    #[arg(long)]
    wf: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            strategy: self.strategy,
            seed: self.seed,
            steps: self.steps,
            g: self.g,
            tau: self.tau,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lambda_off: self.lambda_off,
            kappa: self.kappa,
            wf: self.wf,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predictions JSONL.
    #[arg(long)]
    preds: PathBuf,
    /// Dataset JSONL holding the ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// Task of the ground truth; inferred from the dataset when omitted.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// JSON report path; a CSV row is written next to it. Prints to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Normalized saliency that counts as a HIT@1 hit.
    #[arg(long, default_value_t = VERY_GOOD_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct ShapeArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Grid intervals over [0, 1].
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// CSV path; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated arms: `grpo` (no injection) or a strategy name (with injection).
    #[arg(long, value_delimiter = ',', default_value = "grpo,non_linear_shape")]
    strategies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// JSON experiment config whose `dataset` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_instances: Option<usize>,
    #[arg(long)]
    num_bins: Option<usize>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Standard deviation of the observation noise.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Policy JSON written by `train`.
    #[arg(long)]
    policy: PathBuf,
    /// Dataset JSONL.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ranked intervals kept per instance.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s.to_ascii_lowercase().as_str() {
        "grounding" => Ok(Task::Grounding),
        "highlight" => Ok(Task::Highlight),
        _ => Err("expected grounding or highlight".into()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TEMPSAMP_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a.config.as_deref(), &a.overrides()),
        Command::Eval(a) => commands::eval(&a.preds, &a.gt, a.task, a.report.as_deref(), a.threshold),
        Command::Shape(a) => commands::shape(a.tau, a.alpha1, a.alpha2, a.resolution, a.out.as_deref()),
        Command::Compare(a) => {
            commands::compare(a.run.config.as_deref(), &a.run.overrides(), &a.strategies, &a.seeds)
        }
        Command::GenData(a) => commands::gen_data(
            a.config.as_deref(),
            &a.out,
            commands::DatasetOverrides {
                seed: a.seed,
                num_instances: a.num_instances,
                num_bins: a.num_bins,
                task: a.task,
                noise: a.noise,
            },
        ),
        Command::Predict(a) => commands::predict(&a.policy, &a.data, &a.out, a.top_k),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

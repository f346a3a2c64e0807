//! `mpin` command-line front end.
//!
//! Each subcommand resolves its flags into a [`RunSpec`], prints that spec as
//! one JSON line on standard error, then runs it. Saving the line to a file
//! and passing it to `mpin run --spec` repeats the run exactly.

mod run;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpin::continuous::{ContinuousConfig, Variant, DEFAULT_ETA};
use mpin::eval::{EvalSettings, Method};
use mpin::exec::Execution;
use mpin::feaprop::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use mpin::graph::{GraphBuilder, Metric};
use mpin::mpin::TrainConfig;
use mpin::stream::RecordFormat;
use mpin::synth::SynthConfig;

use run::{execute, Failure};
use spec::{EvalSpec, GenSpec, ImputeSpec, InputSpec, RunSpec, StreamSpec};

#[derive(Parser)]
#[command(name = "mpin", version, about = "Streaming missing-value imputation for multi-attribute sensor data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impute one file as a single window and write the completed CSV.
    Impute(ImputeArgs),
    /// Run continuous imputation over tumbling windows of a file.
    Stream(StreamArgs),
    /// Hide a fraction of observed entries per window and compare methods.
    Eval(EvalArgs),
    /// Write a synthetic multi-stream dataset as CSV.
    Gen(GenArgs),
    /// Replay a spec previously echoed by another command.
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args)]
struct InputArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Defaults to ndjson for .ndjson/.jsonl files and csv otherwise.
    #[arg(long, value_parser = parse_format)]
    format: Option<RecordFormat>,
    /// Values per NDJSON record.
    #[arg(long)]
    dim: Option<usize>,
}

impl InputArgs {
    fn resolve(self) -> InputSpec {
        InputSpec::resolve(self.input, self.format, self.dim)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    validation_ratio: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Train on raw values instead of per-attribute z-scores.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, value_parser = parse_execution)]
    execution: Option<Execution>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn resolve(self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            lambda1: self.lambda1.unwrap_or(d.lambda1),
            lambda2: self.lambda2.unwrap_or(d.lambda2),
            validation_ratio: self.validation_ratio.unwrap_or(d.validation_ratio),
            hidden_dim: self.hidden_dim.or(d.hidden_dim),
            seed: self.seed,
            patience: self.patience.or(d.patience),
            standardize: !self.no_standardize,
            execution: self.execution.unwrap_or(d.execution),
        }
    }
}

#[derive(Args)]
struct GraphArgs {
    /// Neighbors per node in the KNN graph (and for the knn baseline).
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    /// Connect rows closer than this instead of taking K neighbors.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    feaprop_max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    feaprop_tol: f64,
}

impl GraphArgs {
    fn builder(&self) -> GraphBuilder {
        match self.threshold {
            Some(threshold) => GraphBuilder::Threshold { threshold, metric: self.metric },
            None => GraphBuilder::Knn { k: self.k, metric: self.metric },
        }
    }
}

#[derive(Args)]
struct ContinuousArgs {
    #[arg(long, default_value = "DM")]
    variant: Variant,
    /// Reservoir admission threshold on the normalized importance score.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    #[arg(long)]
    reservoir_capacity: Option<usize>,
    #[arg(long)]
    window_length: f64,
}

impl ContinuousArgs {
    fn resolve(&self, graph: GraphBuilder, train: TrainConfig) -> ContinuousConfig {
        ContinuousConfig {
            variant: self.variant,
            eta: self.eta,
            graph,
            train,
            reservoir_capacity: self.reservoir_capacity,
        }
    }
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Completed CSV; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "mpin")]
    method: Method,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    continuous: ContinuousArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    report_json: Option<PathBuf>,
    #[arg(long)]
    report_csv: Option<PathBuf>,
    /// Save reservoir and model state here after every window.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint, skipping the windows it already covers.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many windows.
    #[arg(long)]
    max_windows: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "mean,knn,feaprop,mpin")]
    methods: Vec<Method>,
    /// Fraction of observed entries hidden for scoring.
    #[arg(long, default_value_t = 0.5)]
    missing_rate: f64,
    #[command(flatten)]
    continuous: ContinuousArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    report_json: Option<PathBuf>,
    #[arg(long)]
    report_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    streams: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Steps between regime shifts.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    correlation: Option<f64>,
    #[arg(long)]
    persistence: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

fn parse_format(s: &str) -> Result<RecordFormat, String> {
    match s.to_ascii_lowercase().as_str() {
        "csv" => Ok(RecordFormat::Csv),
        "ndjson" | "jsonl" => Ok(RecordFormat::Ndjson),
        _ => Err(format!("unknown format {s:?}; expected csv or ndjson")),
    }
}

fn parse_execution(s: &str) -> Result<Execution, String> {
    match s.to_ascii_lowercase().as_str() {
        "sequential" => Ok(Execution::Sequential),
        "parallel" => Ok(Execution::Parallel),
        _ => Err(format!("unknown execution mode {s:?}; expected sequential or parallel")),
    }
}

fn resolve(command: Command) -> Result<RunSpec, Failure> {
    Ok(match command {
        Command::Impute(a) => RunSpec::Impute(ImputeSpec {
            input: a.input.resolve(),
            output: a.output,
            method: a.method,
            graph: a.graph.builder(),
            knn_k: a.graph.k,
            feaprop_max_iters: a.graph.feaprop_max_iters,
            feaprop_tol: a.graph.feaprop_tol,
            train: a.train.resolve(),
        }),
        Command::Stream(a) => RunSpec::Stream(StreamSpec {
            input: a.input.resolve(),
            output: a.output,
            window_length: a.continuous.window_length,
            continuous: a.continuous.resolve(a.graph.builder(), a.train.resolve()),
            report_json: a.report_json,
            report_csv: a.report_csv,
            checkpoint: a.checkpoint,
            resume: a.resume,
            max_windows: a.max_windows,
        }),
        Command::Eval(a) => {
            let train = a.train.resolve();
            RunSpec::Eval(EvalSpec {
                input: a.input.resolve(),
                window_length: a.continuous.window_length,
                methods: a.methods,
                settings: EvalSettings {
                    missing_rate: a.missing_rate,
                    seed: train.seed,
                    knn_k: a.graph.k,
                    feaprop_max_iters: a.graph.feaprop_max_iters,
                    feaprop_tol: a.graph.feaprop_tol,
                    continuous: a.continuous.resolve(a.graph.builder(), train),
                },
                report_json: a.report_json,
                report_csv: a.report_csv,
            })
        }
        Command::Gen(a) => {
            let d = SynthConfig::default();
            RunSpec::Gen(GenSpec {
                output: a.output,
                synth: SynthConfig {
                    streams: a.streams.unwrap_or(d.streams),
                    length: a.length.unwrap_or(d.length),
                    dim: a.dim.unwrap_or(d.dim),
                    window: a.window.unwrap_or(d.window),
                    missing_rate: a.missing_rate.unwrap_or(d.missing_rate),
                    seed: a.seed,
                    correlation: a.correlation.unwrap_or(d.correlation),
                    persistence: a.persistence.unwrap_or(d.persistence),
                    noise: a.noise.unwrap_or(d.noise),
                },
            })
        }
        Command::Run { spec } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| {
                Failure::usage(anyhow::Error::from(e).context(format!("reading {}", spec.display())))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                Failure::usage(anyhow::Error::from(e).context(format!("parsing {}", spec.display())))
            })?
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = resolve(cli.command).and_then(|spec| {
        eprintln!("{}", serde_json::to_string(&spec).expect("spec serializes"));
        execute(&spec)
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use ndarray::Array2;
use serde::Serialize;

use mpin::continuous::{ContinuousRunner, WindowOutcome};
use mpin::eval::{evaluate_stream, knn_impute_matrix, summarize, write_records_csv, Method, MethodSummary, MetricRecord};
use mpin::feaprop::feaprop_impute_matrix;
use mpin::graph::mean_fill_matrix;
use mpin::mpin::train::train_impute_matrix;
use mpin::stream::{read_file, tumbling_windows, write_csv, DataChunk, DataInstance, Schema};
use mpin::synth::generate_synthetic;

use crate::spec::{EvalSpec, GenSpec, ImputeSpec, InputSpec, RunSpec, StreamSpec};

/// Exit status 1 for failures inside the computation, 2 for bad input,
/// configuration or I/O.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

impl From<mpin::Error> for Failure {
    fn from(e: mpin::Error) -> Self {
        use mpin::Error::*;
        let code = match e {
            Parse { .. } | Schema(_) | Ingestion(_) | Config(_) | Checkpoint(_) | Io(_) => 2,
            _ => 1,
        };
        Self { code, error: e.into() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::usage(e)
    }
}

type Outcome = Result<(), Failure>;

pub fn execute(spec: &RunSpec) -> Outcome {
    spec.validate()?;
    match spec {
        RunSpec::Impute(s) => impute(s),
        RunSpec::Stream(s) => stream(s),
        RunSpec::Eval(s) => eval(s),
        RunSpec::Gen(s) => gen(s),
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(input: &InputSpec) -> Result<(Vec<DataInstance>, Schema), Failure> {
    read_file(&input.path, input.format, input.dim)
        .with_context(|| format!("reading {}", input.path.display()))
        .map_err(Failure::usage)
}

/// Replaces the values of `rows` with the completed matrix, keeping metadata.
fn completed_rows(rows: &[DataInstance], completed: &Array2<f64>) -> Vec<DataInstance> {
    rows.iter()
        .zip(completed.rows())
        .map(|(r, c)| DataInstance {
            values: c.iter().map(|&v| Some(v)).collect(),
            ..r.clone()
        })
        .collect()
}

fn impute(s: &ImputeSpec) -> Outcome {
    let (instances, schema) = load(&s.input)?;
    let chunk = DataChunk::new(0, schema.dim(), instances)?;
    let values = chunk.values();
    let exec = s.train.execution;
    let completed = match s.method {
        Method::Mean => mean_fill_matrix(&values),
        Method::Knn => knn_impute_matrix(exec, &values, s.knn_k)?,
        Method::Feaprop => {
            let graph = s.graph.build(exec, &mean_fill_matrix(&values))?;
            feaprop_impute_matrix(exec, &values, &graph, s.feaprop_max_iters, s.feaprop_tol)?.completed
        }
        Method::Mpin => {
            let out = train_impute_matrix(&values, &s.graph, &s.train, None)?;
            log::info!("best validation MAE {:.6} at epoch {}", out.best_val_mae, out.best_epoch);
            out.completed
        }
    };
    write_csv(&completed_rows(&chunk.rows, &completed), &schema, sink(s.output.as_deref())?)?;
    Ok(())
}

#[derive(Serialize)]
struct WindowRow {
    window: u64,
    rows: usize,
    dropped: usize,
    best_val_mae: Option<f64>,
    epochs_run: usize,
    reservoir_size: usize,
    augmented_rows: usize,
    fell_back: bool,
    seconds: f64,
}

impl WindowRow {
    fn new(chunk: &DataChunk, o: &WindowOutcome) -> Self {
        Self {
            window: o.window_index,
            rows: chunk.len(),
            dropped: chunk.dropped,
            best_val_mae: o.best_val_mae,
            epochs_run: o.epochs_run,
            reservoir_size: o.reservoir_size,
            augmented_rows: o.augmented_rows,
            fell_back: o.fell_back,
            seconds: o.wall_time,
        }
    }
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    config: &'a RunSpec,
    records: &'a [R],
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a [MethodSummary]>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut out = sink(Some(path))?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::usage(io::Error::from(e)))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn stream(s: &StreamSpec) -> Outcome {
    let (instances, schema) = load(&s.input)?;
    let windows = tumbling_windows(&instances, s.window_length)?;
    let mut runner = match &s.resume {
        Some(path) => ContinuousRunner::load_checkpoint(s.continuous.clone(), path)?,
        None => ContinuousRunner::new(s.continuous.clone(), schema.dim())?,
    };
    let skip = runner.windows_seen() as usize;
    if skip > 0 {
        log::info!("resuming after {skip} windows");
    }
    let todo = windows.iter().skip(skip).take(s.max_windows.unwrap_or(usize::MAX));

    let mut rows = Vec::new();
    let mut report = Vec::new();
    for chunk in todo {
        let outcome = runner.step(chunk)?;
        rows.extend(completed_rows(&chunk.rows, &outcome.completed));
        report.push(WindowRow::new(chunk, &outcome));
        if let Some(path) = &s.checkpoint {
            runner.save_checkpoint(path)?;
        }
    }
    log::info!("processed {} windows", report.len());

    write_csv(&rows, &schema, sink(s.output.as_deref())?)?;
    let spec = RunSpec::Stream(s.clone());
    if let Some(path) = &s.report_json {
        write_json(path, &Report { config: &spec, records: &report, summary: None })?;
    }
    if let Some(path) = &s.report_csv {
        let mut w = csv::Writer::from_writer(sink(Some(path))?);
        for r in &report {
            w.serialize(r).map_err(|e| Failure::usage(io::Error::other(e)))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn eval(s: &EvalSpec) -> Outcome {
    let (instances, _) = load(&s.input)?;
    let windows = tumbling_windows(&instances, s.window_length)?;
    let records: Vec<MetricRecord> = evaluate_stream(&windows, &s.methods, &s.settings)?;
    let summary = summarize(&records);

    let mut out = io::stdout().lock();
    writeln!(out, "{:<10} {:>8} {:>12} {:>12} {:>12} {:>12}", "method", "windows", "mean_mae", "mean_mre", "median_mae", "seconds")?;
    for m in &summary {
        writeln!(
            out,
            "{:<10} {:>8} {:>12.6} {:>12.6} {:>12.6} {:>12.4}",
            m.method, m.windows, m.mean_mae, m.mean_mre, m.median_mae, m.mean_seconds
        )?;
    }

    let spec = RunSpec::Eval(s.clone());
    if let Some(path) = &s.report_json {
        write_json(path, &Report { config: &spec, records: &records, summary: Some(&summary) })?;
    }
    if let Some(path) = &s.report_csv {
        write_records_csv(&records, sink(Some(path))?)?;
    }
    Ok(())
}

fn gen(s: &GenSpec) -> Outcome {
    let data = generate_synthetic(&s.synth)?;
    write_csv(&data, &s.synth.schema(), sink(s.output.as_deref())?)?;
    Ok(())
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mpin::continuous::ContinuousConfig;
use mpin::eval::{EvalSettings, Method};
use mpin::graph::GraphBuilder;
use mpin::mpin::TrainConfig;
use mpin::stream::RecordFormat;
use mpin::synth::SynthConfig;

/// A fully resolved invocation. Every command prints this as JSON before it
/// starts, and `mpin run --spec FILE` replays it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunSpec {
    Impute(ImputeSpec),
    Stream(StreamSpec),
    Eval(EvalSpec),
    Gen(GenSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    pub format: RecordFormat,
    /// Value count per NDJSON record; sniffed from the first record when absent.
    pub dim: Option<usize>,
}

impl InputSpec {
    pub fn resolve(path: PathBuf, format: Option<RecordFormat>, dim: Option<usize>) -> Self {
        let format = format.unwrap_or_else(|| infer_format(&path));
        Self { path, format, dim }
    }
}

fn infer_format(path: &Path) -> RecordFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ndjson") || ext.eq_ignore_ascii_case("jsonl") => RecordFormat::Ndjson,
        _ => RecordFormat::Csv,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeSpec {
    pub input: InputSpec,
    pub output: Option<PathBuf>,
    pub method: Method,
    pub graph: GraphBuilder,
    pub train: TrainConfig,
    pub knn_k: usize,
    pub feaprop_max_iters: usize,
    pub feaprop_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub input: InputSpec,
    pub output: Option<PathBuf>,
    pub window_length: f64,
    pub continuous: ContinuousConfig,
    pub report_json: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
    /// Written after every window.
    pub checkpoint: Option<PathBuf>,
    /// Windows already covered by this checkpoint are skipped.
    pub resume: Option<PathBuf>,
    pub max_windows: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub input: InputSpec,
    pub window_length: f64,
    pub methods: Vec<Method>,
    pub settings: EvalSettings,
    pub report_json: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub output: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl RunSpec {
    /// Rejects inconsistent settings before any input is read.
    pub fn validate(&self) -> mpin::Result<()> {
        let window = |t: f64| {
            if t.is_finite() && t > 0.0 {
                Ok(())
            } else {
                Err(mpin::Error::Config(format!("window length must be positive, got {t}")))
            }
        };
        match self {
            RunSpec::Impute(s) => {
                s.train.validate()?;
                if s.knn_k == 0 {
                    return Err(mpin::Error::Config("k must be at least 1".into()));
                }
                Ok(())
            }
            RunSpec::Stream(s) => {
                window(s.window_length)?;
                s.continuous.train.validate()?;
                check_eta(s.continuous.eta)
            }
            RunSpec::Eval(s) => {
                window(s.window_length)?;
                if s.methods.is_empty() {
                    return Err(mpin::Error::Config("at least one method is required".into()));
                }
                if !(s.settings.missing_rate > 0.0 && s.settings.missing_rate < 1.0) {
                    return Err(mpin::Error::Config(format!(
                        "missing rate must lie in (0,1), got {}",
                        s.settings.missing_rate
                    )));
                }
                s.settings.continuous.train.validate()?;
                check_eta(s.settings.continuous.eta)
            }
            RunSpec::Gen(s) => s.synth.validate(),
        }
    }
}

fn check_eta(eta: f64) -> mpin::Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(mpin::Error::Config(format!("eta must lie in (0,1], got {eta}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_follows_extension() {
        let f = |p: &str| InputSpec::resolve(p.into(), None, None).format;
        assert_eq!(f("x.ndjson"), RecordFormat::Ndjson);
        assert_eq!(f("x.JSONL"), RecordFormat::Ndjson);
        assert_eq!(f("x.csv"), RecordFormat::Csv);
        assert_eq!(f("x"), RecordFormat::Csv);
        assert_eq!(InputSpec::resolve("x.ndjson".into(), Some(RecordFormat::Csv), None).format, RecordFormat::Csv);
    }

    #[test]
    fn spec_round_trips_and_validates() {
        let spec = RunSpec::Stream(StreamSpec {
            input: InputSpec::resolve("in.csv".into(), None, None),
            output: None,
            window_length: 10.0,
            continuous: ContinuousConfig::default(),
            report_json: None,
            report_csv: None,
            checkpoint: None,
            resume: None,
            max_windows: None,
        });
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<RunSpec>(&text).unwrap(), spec);
        assert!(spec.validate().is_ok());

        let RunSpec::Stream(mut bad) = spec else { unreachable!() };
        bad.continuous.eta = 0.0;
        assert!(RunSpec::Stream(bad.clone()).validate().is_err());
        bad.continuous.eta = 0.6;
        bad.window_length = 0.0;
        assert!(RunSpec::Stream(bad).validate().is_err());
    }
}

//! Masking, metrics, baselines and the per-window comparison harness.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::continuous::{ContinuousConfig, ContinuousRunner, Variant};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::feaprop::{feaprop_impute_matrix, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::graph::{mean_fill_matrix, Metric};
use crate::mpin::train::{derive_seed, sample_observed};
use crate::stream::DataChunk;

/// Missing rates for typical sensor data.
pub const MISSING_RATES: [f64; 3] = [0.1, 0.3, 0.5];
/// Missing rates for datasets that start out almost complete.
pub const LOW_SPARSITY_MISSING_RATES: [f64; 3] = [0.4, 0.6, 0.8];

/// Entries hidden from a chunk for scoring, with their true values.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMask {
    pub bits: Array2<bool>,
    pub seed: u64,
    pub missing_rate: f64,
    truth: Array2<f64>,
}

impl EvalMask {
    /// A mask hiding nothing.
    pub fn empty(rows: usize, dim: usize) -> Self {
        Self {
            bits: Array2::from_elem((rows, dim), false),
            seed: 0,
            missing_rate: 0.0,
            truth: Array2::from_elem((rows, dim), f64::NAN),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True values at hidden entries, NaN elsewhere.
    pub fn truth(&self) -> &Array2<f64> {
        &self.truth
    }
}

/// Hides exactly `⌊r·#observed⌋` observed entries, chosen uniformly.
pub fn mask_random(chunk: &DataChunk, missing_rate: f64, seed: u64) -> Result<(DataChunk, EvalMask)> {
    let (values, mask) = mask_random_matrix(&chunk.values(), missing_rate, seed)?;
    Ok((chunk.with_values(&values)?, mask))
}

pub fn mask_random_matrix(values: &Array2<f64>, missing_rate: f64, seed: u64) -> Result<(Array2<f64>, EvalMask)> {
    if !(missing_rate > 0.0 && missing_rate < 1.0) {
        return Err(Error::config(format!("missing rate must lie in (0,1), got {missing_rate}")));
    }
    let hidden = sample_observed(values, missing_rate, seed);
    if hidden.is_empty() {
        log::warn!("missing rate {missing_rate} hides no entries of a chunk with {} cells", values.len());
    }
    let mut masked = values.clone();
    let mut bits = Array2::from_elem(values.dim(), false);
    let mut truth = Array2::from_elem(values.dim(), f64::NAN);
    for ix in hidden {
        bits[ix] = true;
        truth[ix] = values[ix];
        masked[ix] = f64::NAN;
    }
    Ok((
        masked,
        EvalMask {
            bits,
            seed,
            missing_rate,
            truth,
        },
    ))
}

fn masked_errors(truth: &Array2<f64>, imputed: &Array2<f64>, mask: &Array2<bool>) -> Result<(f64, f64, usize)> {
    if truth.dim() != imputed.dim() || truth.dim() != mask.dim() {
        return Err(Error::shape(format!(
            "truth {:?}, imputed {:?}, mask {:?}",
            truth.dim(),
            imputed.dim(),
            mask.dim()
        )));
    }
    let mut abs = 0.0;
    let mut magnitude = 0.0;
    let mut count = 0;
    for ((t, i), &m) in truth.iter().zip(imputed.iter()).zip(mask.iter()) {
        if m {
            abs += (t - i).abs();
            magnitude += t.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::MetricUndefined("evaluation mask is empty"));
    }
    Ok((abs, magnitude, count))
}

pub fn mae(truth: &Array2<f64>, imputed: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let (abs, _, count) = masked_errors(truth, imputed, mask)?;
    Ok(abs / count as f64)
}

pub fn mre(truth: &Array2<f64>, imputed: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let (abs, magnitude, _) = masked_errors(truth, imputed, mask)?;
    if magnitude == 0.0 {
        return Err(Error::MetricUndefined("ground truth sums to zero"));
    }
    Ok(abs / magnitude)
}

/// Column means of the observed entries; all-missing columns become 0.
pub fn mean_impute(chunk: &DataChunk) -> Array2<f64> {
    mean_fill_matrix(&chunk.values())
}

pub fn knn_impute(chunk: &DataChunk, k: usize) -> Result<Array2<f64>> {
    knn_impute_matrix(Execution::default(), &chunk.values(), k)
}

/// Fills each missing entry with the mean of its `k` nearest rows (Euclidean
/// on the mean-filled matrix, ties to the lower index).
pub fn knn_impute_matrix(exec: Execution, values: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let n = values.nrows();
    if k == 0 || k >= n {
        return Err(Error::config(format!("knn needs 1 <= k < |V|, got k={k} for {n} rows")));
    }
    let filled = mean_fill_matrix(values);
    let rows: Vec<Vec<f64>> = crate::exec::map_range(exec, n, |i| {
        let row = values.row(i);
        if row.iter().all(|v| !v.is_nan()) {
            return row.to_vec();
        }
        let target = filled.row(i);
        let target = target.as_slice().expect("standard layout");
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (Metric::Euclidean.distance(target, filled.row(j).as_slice().unwrap()), j))
            .collect();
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &cand[..k];
        row.iter()
            .enumerate()
            .map(|(d, &v)| {
                if v.is_nan() {
                    nearest.iter().map(|&(_, j)| filled[[j, d]]).sum::<f64>() / k as f64
                } else {
                    v
                }
            })
            .collect()
    });
    Ok(Array2::from_shape_vec((n, values.ncols()), rows.concat()).expect("shape"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mean,
    Knn,
    Feaprop,
    Mpin,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Method::Mean),
            "knn" => Ok(Method::Knn),
            "feaprop" => Ok(Method::Feaprop),
            "mpin" => Ok(Method::Mpin),
            other => Err(Error::config(format!(
                "unknown method {other:?}; expected mean, knn, feaprop or mpin"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mean => "mean",
            Method::Knn => "knn",
            Method::Feaprop => "feaprop",
            Method::Mpin => "mpin",
        })
    }
}

/// Settings shared by every method in one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub missing_rate: f64,
    pub seed: u64,
    pub knn_k: usize,
    pub feaprop_max_iters: usize,
    pub feaprop_tol: f64,
    /// Graph, training and reservoir settings; the variant here is used for
    /// the `mpin` method.
    pub continuous: ContinuousConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            missing_rate: 0.5,
            seed: 0,
            knn_k: 10,
            feaprop_max_iters: DEFAULT_MAX_ITERS,
            feaprop_tol: DEFAULT_TOL,
            continuous: ContinuousConfig::default(),
        }
    }
}

/// One row of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub window: u64,
    pub method: String,
    pub mae: f64,
    pub mre: f64,
    pub seconds: f64,
    pub n_rows: usize,
    pub n_eval_entries: usize,
}

/// Unweighted mean over windows for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub windows: usize,
    pub mean_mae: f64,
    pub mean_mre: f64,
    pub median_mae: f64,
    pub mean_seconds: f64,
}

pub fn method_label(method: Method, variant: Variant) -> String {
    match method {
        Method::Mean => "MEAN".into(),
        Method::Knn => "KNN".into(),
        Method::Feaprop => "FeaProp".into(),
        Method::Mpin => format!("MPIN-{variant}"),
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn summarize(records: &[MetricRecord]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let rs: Vec<&MetricRecord> = records.iter().filter(|r| r.method == m).collect();
            let n = rs.len() as f64;
            let mut maes: Vec<f64> = rs.iter().map(|r| r.mae).collect();
            MethodSummary {
                method: m.to_string(),
                windows: rs.len(),
                mean_mae: maes.iter().sum::<f64>() / n,
                mean_mre: rs.iter().map(|r| r.mre).sum::<f64>() / n,
                median_mae: median(&mut maes),
                mean_seconds: rs.iter().map(|r| r.seconds).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn write_records_json<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, records).map_err(|e| Error::Io(e.into()))
}

pub fn write_records_csv<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Masks every window at `settings.missing_rate`, runs each method on the
/// masked windows and scores it on the hidden entries.
///
/// `mpin` runs through a [`ContinuousRunner`], so reservoir rows may join the
/// training data; only current-window rows are ever scored. Windows whose
/// mask comes out empty produce no records.
pub fn evaluate_stream(windows: &[DataChunk], methods: &[Method], settings: &EvalSettings) -> Result<Vec<MetricRecord>> {
    let cfg = &settings.continuous;
    let exec = cfg.train.execution;
    let dim = windows.iter().map(|w| w.dim).max().unwrap_or(0);
    let mut runner = if methods.contains(&Method::Mpin) {
        Some(ContinuousRunner::new(cfg.clone(), dim)?)
    } else {
        None
    };
    let mut records = Vec::new();
    for window in windows {
        let truth = window.values();
        let (masked, eval) = if window.is_empty() {
            (window.clone(), EvalMask::empty(0, window.dim))
        } else {
            mask_random(window, settings.missing_rate, derive_seed(settings.seed, window.window_index))?
        };
        let values = masked.values();
        for &method in methods {
            let started = Instant::now();
            let imputed = match method {
                Method::Mean => mean_fill_matrix(&values),
                Method::Knn if values.nrows() > settings.knn_k => knn_impute_matrix(exec, &values, settings.knn_k)?,
                Method::Knn => mean_fill_matrix(&values),
                Method::Feaprop if values.nrows() >= 2 => {
                    let graph = cfg.graph.build(exec, &mean_fill_matrix(&values))?;
                    feaprop_impute_matrix(exec, &values, &graph, settings.feaprop_max_iters, settings.feaprop_tol)?
                        .completed
                }
                Method::Feaprop => mean_fill_matrix(&values),
                Method::Mpin => runner.as_mut().expect("runner exists").step(&masked)?.completed,
            };
            let seconds = started.elapsed().as_secs_f64();
            if eval.count() == 0 {
                continue;
            }
            records.push(MetricRecord {
                window: window.window_index,
                method: method_label(method, cfg.variant),
                mae: mae(&truth, &imputed, &eval.bits)?,
                mre: mre(&truth, &imputed, &eval.bits).unwrap_or(f64::NAN),
                seconds,
                n_rows: window.len(),
                n_eval_entries: eval.count(),
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn metric_goldens() {
        let t = array![[1.0, 2.0]];
        let i = array![[2.0, 4.0]];
        let full = array![[true, true]];
        assert_eq!(mae(&t, &i, &full).unwrap(), 1.5);
        assert_eq!(mre(&t, &i, &full).unwrap(), 1.0);
        let first = array![[true, false]];
        assert_eq!(mae(&t, &i, &first).unwrap(), 1.0);
        assert_eq!(mre(&t, &i, &first).unwrap(), 1.0);
        assert_eq!(mae(&t, &t, &full).unwrap(), 0.0);
        assert_eq!(mre(&t, &t, &full).unwrap(), 0.0);
    }

    #[test]
    fn metric_errors() {
        let t = array![[0.0, 0.0]];
        assert!(matches!(mae(&t, &t, &array![[false, false]]), Err(Error::MetricUndefined(_))));
        assert!(matches!(mre(&t, &t, &array![[true, true]]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn mask_counts_and_support() {
        let values = Array2::from_shape_fn((4, 5), |(i, j)| if (i * 5 + j) % 2 == 0 { f64::NAN } else { 1.0 + j as f64 });
        let chunk = DataChunk::from_matrix(0, &values);
        assert_eq!(chunk.observed_count(), 10);
        for seed in 0..1000 {
            let (masked, m) = mask_random(&chunk, 0.5, seed).unwrap();
            assert_eq!(m.count(), 5);
            assert_eq!(masked.observed_count(), 5);
            for (ix, &b) in m.bits.indexed_iter() {
                if b {
                    assert!(!values[ix].is_nan());
                    assert_eq!(m.truth()[ix], values[ix]);
                }
            }
        }
        let a = mask_random(&chunk, 0.5, 3).unwrap().1;
        let b = mask_random(&chunk, 0.5, 3).unwrap().1;
        assert_eq!(a.bits, b.bits);
    }

    #[test]
    fn tiny_rate_hides_nothing() {
        let chunk = DataChunk::from_matrix(0, &array![[1.0, 2.0]]);
        let (masked, m) = mask_random(&chunk, 0.1, 0).unwrap();
        assert_eq!(m.count(), 0);
        assert_eq!(masked, chunk);
        assert!(mask_random(&chunk, 1.0, 0).is_err());
    }

    #[test]
    fn knn_twin_recovers_value() {
        let v = array![
            [1.0, 2.0, 3.0],
            [1.0, 2.0, f64::NAN],
            [10.0, -4.0, 0.5],
            [-7.0, 8.0, 2.0],
        ];
        let out = knn_impute(&DataChunk::from_matrix(0, &v), 1).unwrap();
        assert_eq!(out[[1, 2]], 3.0);
        let mean = mean_impute(&DataChunk::from_matrix(0, &v));
        assert_ne!(mean[[1, 2]], 3.0);
    }

    #[test]
    fn knn_all_others_is_column_mean_of_others() {
        let v = array![[1.0, f64::NAN], [2.0, 4.0], [3.0, 8.0], [5.0, f64::NAN]];
        let filled = mean_fill_matrix(&v);
        let out = knn_impute(&DataChunk::from_matrix(0, &v), 3).unwrap();
        let want = (filled[[1, 1]] + filled[[2, 1]] + filled[[3, 1]]) / 3.0;
        assert!((out[[0, 1]] - want).abs() < 1e-12);
    }

    #[test]
    fn knn_rejects_large_k() {
        let v = array![[1.0], [2.0]];
        assert!(matches!(knn_impute(&DataChunk::from_matrix(0, &v), 2), Err(Error::Config(_))));
    }

    #[test]
    fn knn_identity_when_complete() {
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(knn_impute(&DataChunk::from_matrix(0, &v), 2).unwrap(), v);
    }

    #[test]
    fn summary_is_unweighted() {
        let rec = |w, mae| MetricRecord {
            window: w,
            method: "MEAN".into(),
            mae,
            mre: mae,
            seconds: 0.0,
            n_rows: (w as usize + 1) * 100,
            n_eval_entries: 1,
        };
        let s = summarize(&[rec(0, 1.0), rec(1, 3.0)]);
        assert_eq!(s[0].mean_mae, 2.0);
        assert_eq!(s[0].windows, 2);
    }

    #[test]
    fn csv_report_has_header() {
        let r = MetricRecord {
            window: 3,
            method: "KNN".into(),
            mae: 0.5,
            mre: 0.25,
            seconds: 0.1,
            n_rows: 10,
            n_eval_entries: 4,
        };
        let mut buf = Vec::new();
        write_records_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("window,method,mae,mre,seconds,n_rows,n_eval_entries\n3,KNN,0.5,0.25,0.1,10,4"));
    }

    proptest! {
        #[test]
        fn mre_mae_identity(
            data in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, any::<bool>()), 1..40)
        ) {
            let n = data.len();
            let t = Array2::from_shape_fn((n, 1), |(i, _)| data[i].0);
            let i = Array2::from_shape_fn((n, 1), |(r, _)| data[r].1);
            let mut m = Array2::from_shape_fn((n, 1), |(r, _)| data[r].2);
            m[[0, 0]] = true;
            let count = m.iter().filter(|&&b| b).count() as f64;
            let mag: f64 = t.iter().zip(m.iter()).filter(|(_, &b)| b).map(|(v, _)| v.abs()).sum();
            let a = mae(&t, &i, &m).unwrap();
            if mag > 0.0 {
                let r = mre(&t, &i, &m).unwrap();
                prop_assert!((r * mag - a * count).abs() < 1e-12 * (1.0 + a * count));
            }
            // permuting rows consistently leaves the metric unchanged
            let rev = |x: &Array2<f64>| Array2::from_shape_fn((n, 1), |(r, _)| x[[n - 1 - r, 0]]);
            let mr = Array2::from_shape_fn((n, 1), |(r, _)| m[[n - 1 - r, 0]]);
            prop_assert!((mae(&rev(&t), &rev(&i), &mr).unwrap() - a).abs() < 1e-12);
        }
    }
}

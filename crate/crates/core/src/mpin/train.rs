//! Transductive training on a single chunk.
//!
//! A random fraction of the observed entries is hidden as a validation set.
//! The network is trained on the remaining observed entries and, epoch by
//! epoch, scored on the hidden ones; the epoch with the lowest validation MAE
//! supplies both the imputed chunk and the returned parameters.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{default_hidden_dim, loss_and_gradient, AdamW, LossWeights, ModelState, Network, NetworkInput};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{mean_fill_matrix, GraphBuilder};
use crate::stream::DataChunk;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Fraction of observed entries hidden for validation.
    pub validation_ratio: f64,
    /// Hidden width F; `None` means `max(2·D, 32)`.
    pub hidden_dim: Option<usize>,
    pub seed: u64,
    /// Stop once this many epochs pass without a new best validation MAE.
    pub patience: Option<usize>,
    /// Train on per-attribute z-scores of the observed training entries.
    pub standardize: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 0.1,
            lambda1: 1.0,
            lambda2: 1.0,
            validation_ratio: 0.05,
            hidden_dim: None,
            seed: 0,
            patience: None,
            standardize: true,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.validation_ratio > 0.0 && self.validation_ratio < 1.0) {
            return Err(Error::config(format!(
                "validation ratio must lie in (0,1), got {}",
                self.validation_ratio
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if [self.weight_decay, self.lambda1, self.lambda2].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::config("weight decay and loss weights must be non-negative"));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::config("hidden width must be positive"));
        }
        Ok(())
    }

    pub fn hidden_for(&self, dim: usize) -> usize {
        self.hidden_dim.unwrap_or_else(|| default_hidden_dim(dim))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Imputed chunk: every originally observed entry restored exactly.
    pub completed: Array2<f64>,
    /// Parameters of the best epoch.
    pub state: ModelState,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation MAE per epoch.
    pub val_trace: Vec<f64>,
    /// Training loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Row-major `(row, col)` positions of the validation entries.
    pub validation: Vec<(usize, usize)>,
}

/// Splits a seed into independent sub-seeds by tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const SEED_VALIDATION: u64 = 1;
pub(crate) const SEED_INIT: u64 = 2;

/// Per-attribute affine map into the network's working space.
#[derive(Clone, Debug)]
struct Scaler {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn fit(values: &Array2<f64>) -> Self {
        let d = values.ncols();
        let mut center = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let col: Vec<f64> = values.column(j).iter().copied().filter(|v| !v.is_nan()).collect();
            if col.is_empty() {
                continue;
            }
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            center[j] = mean;
            if var.sqrt() > 1e-12 {
                scale[j] = var.sqrt();
            }
        }
        Self { center, scale }
    }

    fn forward(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.center[j]) / self.scale[j];
            }
        }
        out
    }

    fn inverse(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.center[j];
            }
        }
        out
    }
}

/// Picks `⌊ratio·#observed⌋` observed positions uniformly at random, returned
/// in row-major order.
pub(crate) fn sample_observed(values: &Array2<f64>, ratio: f64, seed: u64) -> Vec<(usize, usize)> {
    let observed: Vec<(usize, usize)> = values
        .indexed_iter()
        .filter(|(_, v)| !v.is_nan())
        .map(|(ix, _)| ix)
        .collect();
    let count = (ratio * observed.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, observed.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| observed[i]).collect()
}

/// Trains the network on `chunk` and returns the best-epoch imputation.
///
/// `init` warm-starts from an existing state (its shape must match the
/// chunk's dimensionality); otherwise parameters are drawn from the seed.
pub fn train_impute(
    chunk: &DataChunk,
    graph_builder: &GraphBuilder,
    config: &TrainConfig,
    init: Option<&ModelState>,
) -> Result<TrainOutcome> {
    train_impute_matrix(&chunk.values(), graph_builder, config, init)
}

/// As [`train_impute`], over a NaN-encoded matrix.
pub fn train_impute_matrix(
    values: &Array2<f64>,
    graph_builder: &GraphBuilder,
    config: &TrainConfig,
    init: Option<&ModelState>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let exec = config.execution;
    let (n, dim) = values.dim();

    let validation = sample_observed(values, config.validation_ratio, derive_seed(config.seed, SEED_VALIDATION));
    if validation.is_empty() {
        return Err(Error::config(format!(
            "validation set is empty: {} observed entries at ratio {}",
            values.iter().filter(|v| !v.is_nan()).count(),
            config.validation_ratio
        )));
    }
    let truth: Vec<f64> = validation.iter().map(|&ix| values[ix]).collect();
    let mut reduced = values.clone();
    for &ix in &validation {
        reduced[ix] = f64::NAN;
    }

    let graph = graph_builder.build(exec, &mean_fill_matrix(&reduced))?;
    let net = Network::for_graph(&graph);
    let scaler = if config.standardize {
        Scaler::fit(&reduced)
    } else {
        Scaler::identity(dim)
    };
    let input = NetworkInput::from_values(&scaler.forward(&reduced));

    let mut state = match init {
        Some(s) => {
            s.check()?;
            if s.dim() != dim {
                return Err(Error::config(format!(
                    "initial state expects {} attributes, chunk has {dim}",
                    s.dim()
                )));
            }
            s.clone()
        }
        None => ModelState::fresh(dim, config.hidden_for(dim), derive_seed(config.seed, SEED_INIT)),
    };

    let weights = LossWeights {
        lambda1: config.lambda1,
        lambda2: config.lambda2,
    };
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut best: Option<(usize, f64, ModelState, Array2<f64>)> = None;
    let mut val_trace = Vec::with_capacity(config.epochs);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let step = loss_and_gradient(exec, &state, &net, &input, weights)?;
        if !step.loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let output = scaler.inverse(step.caches.output());
        let mae = validation
            .iter()
            .zip(&truth)
            .map(|(&ix, &t)| (output[ix] - t).abs())
            .sum::<f64>()
            / validation.len() as f64;
        val_trace.push(mae);
        loss_trace.push(step.loss);
        if best.as_ref().is_none_or(|(_, m, _, _)| mae < *m) {
            best = Some((epoch, mae, state.clone(), output));
        }
        opt.step(&mut state, &step.gradient);
        if !state.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if let (Some(p), Some((best_epoch, ..))) = (config.patience, &best) {
            if epoch - best_epoch >= p {
                break;
            }
        }
    }

    let (best_epoch, best_val_mae, best_state, mut completed) = best.expect("at least one epoch");
    // restore every observed value, validation entries included
    for ((i, j), v) in values.indexed_iter() {
        if !v.is_nan() {
            completed[[i, j]] = *v;
        }
    }
    debug_assert_eq!(completed.nrows(), n);
    Ok(TrainOutcome {
        completed,
        state: best_state,
        best_val_mae,
        best_epoch,
        epochs_run: val_trace.len(),
        val_trace,
        loss_trace,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Metric;

    fn small_chunk(seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((30, 4), |(i, j)| {
            if rng.random::<f64>() < 0.2 {
                f64::NAN
            } else {
                (i as f64 * 0.1).sin() * (j + 1) as f64 + rng.random::<f64>() * 0.1
            }
        })
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn observed_entries_restored_exactly() {
        let v = small_chunk(1);
        let out = train_impute_matrix(&v, &GraphBuilder::default(), &quick(), None).unwrap();
        for (ix, x) in v.indexed_iter() {
            if !x.is_nan() {
                assert_eq!(out.completed[ix].to_bits(), x.to_bits());
            } else {
                assert!(out.completed[ix].is_finite());
            }
        }
    }

    #[test]
    fn best_is_trace_minimum_earliest() {
        let v = small_chunk(2);
        let out = train_impute_matrix(&v, &GraphBuilder::default(), &quick(), None).unwrap();
        let min = out.val_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mae, min);
        assert_eq!(out.best_epoch, out.val_trace.iter().position(|&m| m == min).unwrap());
    }

    #[test]
    fn deterministic_per_seed() {
        let v = small_chunk(3);
        let a = train_impute_matrix(&v, &GraphBuilder::default(), &quick(), None).unwrap();
        let b = train_impute_matrix(&v, &GraphBuilder::default(), &quick(), None).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.completed, b.completed);
    }

    #[test]
    fn sequential_matches_parallel() {
        let v = small_chunk(4);
        let mut cfg = quick();
        cfg.execution = Execution::Sequential;
        let a = train_impute_matrix(&v, &GraphBuilder::default(), &cfg, None).unwrap();
        cfg.execution = Execution::Parallel;
        let b = train_impute_matrix(&v, &GraphBuilder::default(), &cfg, None).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn empty_validation_is_config_error() {
        let v = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = GraphBuilder::Knn { k: 1, metric: Metric::Euclidean };
        assert!(matches!(
            train_impute_matrix(&v, &g, &quick(), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_sample_size() {
        let v = small_chunk(5);
        let obs = v.iter().filter(|x| !x.is_nan()).count();
        let s = sample_observed(&v, 0.05, 9);
        assert_eq!(s.len(), (0.05 * obs as f64).floor() as usize);
        assert!(s.iter().all(|&ix| !v[ix].is_nan()));
    }

    #[test]
    fn patience_stops_early() {
        let v = small_chunk(6);
        let cfg = TrainConfig {
            epochs: 200,
            patience: Some(3),
            ..TrainConfig::default()
        };
        let out = train_impute_matrix(&v, &GraphBuilder::default(), &cfg, None).unwrap();
        assert!(out.epochs_run <= 200);
        assert!(out.epochs_run - 1 - out.best_epoch <= 3);
    }

    #[test]
    fn warm_start_dimension_mismatch() {
        let v = small_chunk(7);
        let s = ModelState::fresh(3, 8, 0);
        assert!(train_impute_matrix(&v, &GraphBuilder::default(), &quick(), Some(&s)).is_err());
    }
}

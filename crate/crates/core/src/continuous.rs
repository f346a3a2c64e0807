//! Imputation across consecutive windows.
//!
//! Two mechanisms carry information from one window to the next. The data
//! update keeps a reservoir of instances whose observation pattern is rich
//! and uncommon, and prepends them to the following window. The model update
//! warm-starts each window from the previous best parameters, redrawing only
//! the reconstruction weights.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::graph::{mean_fill_matrix, GraphBuilder};
use crate::mpin::train::{derive_seed, train_impute_matrix};
use crate::mpin::{transfer_state, ModelState, TrainConfig, TrainOutcome};
use crate::stream::{DataChunk, DataInstance, MaskChunk};

pub const DEFAULT_ETA: f64 = 0.6;

const SEED_WINDOW: u64 = 0x5749_4e44;
const SEED_TRANSFER: u64 = 3;

/// Historical instances carried into the next window.
///
/// Rows are cached exactly as they were observed; imputed values never enter
/// the reservoir.
#[derive(Clone, Debug, PartialEq)]
pub struct Reservoir {
    dim: usize,
    rows: Vec<DataInstance>,
    /// When set, only the highest-scoring rows up to this count are kept.
    pub capacity_hint: Option<usize>,
}

impl Reservoir {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            capacity_hint: None,
        }
    }

    pub fn with_capacity_hint(mut self, cap: usize) -> Self {
        self.capacity_hint = Some(cap);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[DataInstance] {
        &self.rows
    }

    pub fn mask(&self) -> MaskChunk {
        self.as_chunk().mask()
    }

    fn as_chunk(&self) -> DataChunk {
        DataChunk {
            window_index: 0,
            rows: self.rows.clone(),
            dim: self.dim,
            dropped: 0,
        }
    }

    /// Stores the reservoir as a NaN-encoded value tensor plus its 0/1 mask.
    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        let chunk = self.as_chunk();
        c.put_tensor(format!("{prefix}values"), chunk.values());
        c.put_tensor(
            format!("{prefix}mask"),
            chunk.mask().bits.mapv(|b| if b { 1.0 } else { 0.0 }),
        );
        c.put_meta(format!("{prefix}dim"), self.dim as u64);
        c.put_meta(
            format!("{prefix}capacity"),
            self.capacity_hint.map_or(0, |n| n as u64 + 1),
        );
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let values = c.tensor(&format!("{prefix}values"))?;
        let mask = c.tensor(&format!("{prefix}mask"))?;
        let dim = c.meta(&format!("{prefix}dim"))? as usize;
        if values.dim() != mask.dim() || (values.nrows() > 0 && values.ncols() != dim) {
            return Err(Error::Checkpoint("reservoir tensors disagree in shape".into()));
        }
        let rows: Vec<DataInstance> = values
            .rows()
            .into_iter()
            .zip(mask.rows())
            .map(|(v, m)| {
                DataInstance::new(v.iter().zip(m.iter()).map(|(&x, &b)| (b != 0.0).then_some(x)).collect())
            })
            .collect();
        if rows.iter().any(|r| r.observed_count() == 0) {
            return Err(Error::Checkpoint("reservoir holds a fully-missing row".into()));
        }
        let capacity_hint = match c.meta(&format!("{prefix}capacity"))? {
            0 => None,
            n => Some(n as usize - 1),
        };
        Ok(Self {
            dim,
            rows,
            capacity_hint,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceScores {
    /// Observed count minus the mean overlap with every other instance.
    pub raw: Vec<f64>,
    /// `raw / (D-1)`; zero everywhere when `D = 1`.
    pub normalized: Vec<f64>,
}

fn mask_matrix(mask: &MaskChunk) -> Array2<f64> {
    mask.bits.mapv(|b| if b { 1.0 } else { 0.0 })
}

/// `M·Mᵀ`: observation counts on the diagonal, pairwise overlaps elsewhere.
pub fn gram_mask_matrix(mask: &MaskChunk) -> Array2<f64> {
    let m = mask_matrix(mask);
    crate::linalg::matmul_nt(crate::Execution::default(), &m, &m)
}

/// Scores every instance in one pass.
///
/// The row sums of the gram matrix are `M·(Mᵀ·1)`, so the |V|×|V| product is
/// never materialized.
pub fn importance_scores(mask: &MaskChunk) -> Result<ImportanceScores> {
    let n = mask.rows();
    if n < 2 {
        return Err(Error::ScoresUndefined(n));
    }
    let d = mask.dim();
    let column_counts: Vec<f64> = (0..d)
        .map(|j| mask.bits.column(j).iter().filter(|&&b| b).count() as f64)
        .collect();
    let nf = n as f64;
    let raw: Vec<f64> = mask
        .bits
        .rows()
        .into_iter()
        .map(|row| {
            let diag = row.iter().filter(|&&b| b).count() as f64;
            let row_sum: f64 = row.iter().zip(&column_counts).filter(|(&b, _)| b).map(|(_, c)| c).sum();
            (nf * diag - row_sum) / (nf - 1.0)
        })
        .collect();
    let normalized = if d > 1 {
        raw.iter().map(|r| r / (d as f64 - 1.0)).collect()
    } else {
        vec![0.0; n]
    };
    Ok(ImportanceScores { raw, normalized })
}

/// Prepends the reservoir to `chunk` and rebuilds the reservoir from the
/// concatenation: every row whose normalized score is at least `eta` stays,
/// in order. Fully-missing rows are never scored nor kept.
pub fn data_update(reservoir: &Reservoir, chunk: &DataChunk, eta: f64) -> Result<(DataChunk, Reservoir)> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::config(format!("eta must lie in (0,1], got {eta}")));
    }
    if !reservoir.is_empty() && reservoir.dim != chunk.dim {
        return Err(Error::shape(format!(
            "reservoir has {} attributes, chunk has {}",
            reservoir.dim, chunk.dim
        )));
    }
    let mut rows = reservoir.rows.clone();
    rows.extend(chunk.rows.iter().cloned());
    let augmented = DataChunk {
        window_index: chunk.window_index,
        rows,
        dim: chunk.dim,
        dropped: chunk.dropped,
    };

    let scorable: Vec<usize> = (0..augmented.len())
        .filter(|&i| augmented.rows[i].observed_count() > 0)
        .collect();
    let mut next = Reservoir {
        dim: chunk.dim,
        rows: Vec::new(),
        capacity_hint: reservoir.capacity_hint,
    };
    if scorable.len() < 2 {
        return Ok((augmented, next));
    }
    let mut bits = Array2::from_elem((scorable.len(), chunk.dim), false);
    for (r, &i) in scorable.iter().enumerate() {
        for (d, v) in augmented.rows[i].values.iter().enumerate() {
            bits[[r, d]] = v.is_some();
        }
    }
    let scores = importance_scores(&MaskChunk::new(bits))?;
    let mut kept: Vec<usize> = (0..scorable.len()).filter(|&r| scores.normalized[r] >= eta).collect();
    if let Some(cap) = reservoir.capacity_hint {
        if kept.len() > cap {
            // highest scores win; ties favour later (fresher) rows
            let mut ranked = kept.clone();
            ranked.sort_by(|&a, &b| scores.raw[b].total_cmp(&scores.raw[a]).then(b.cmp(&a)));
            ranked.truncate(cap);
            ranked.sort_unstable();
            kept = ranked;
        }
    }
    next.rows = kept
        .into_iter()
        .map(|r| {
            let mut inst = augmented.rows[scorable[r]].clone();
            inst.timestamp = None;
            inst
        })
        .collect();
    Ok((augmented, next))
}

/// Trains on a window, warm-started from `prev_best` when given.
pub fn model_state_selection(
    prev_best: Option<&ModelState>,
    values: &Array2<f64>,
    graph: &GraphBuilder,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = prev_best.map(|b| transfer_state(b, derive_seed(config.seed, SEED_TRANSFER)));
    train_impute_matrix(values, graph, config, init.as_ref())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Fresh training on every window.
    P,
    /// Reservoir only.
    D,
    /// Warm start only.
    M,
    DM,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::P, Variant::D, Variant::M, Variant::DM];

    pub fn data_update(self) -> bool {
        matches!(self, Variant::D | Variant::DM)
    }

    pub fn model_update(self) -> bool {
        matches!(self, Variant::M | Variant::DM)
    }

    fn code(self) -> u64 {
        match self {
            Variant::P => 0,
            Variant::D => 1,
            Variant::M => 2,
            Variant::DM => 3,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown variant code {code}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::P => "P",
            Variant::D => "D",
            Variant::M => "M",
            Variant::DM => "DM",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().trim_start_matches("MPIN-") {
            "P" => Ok(Variant::P),
            "D" => Ok(Variant::D),
            "M" => Ok(Variant::M),
            "DM" => Ok(Variant::DM),
            other => Err(Error::config(format!("unknown variant {other:?}; expected P, D, M or DM"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousConfig {
    pub variant: Variant,
    pub eta: f64,
    pub graph: GraphBuilder,
    pub train: TrainConfig,
    pub reservoir_capacity: Option<usize>,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DM,
            eta: DEFAULT_ETA,
            graph: GraphBuilder::default(),
            train: TrainConfig::default(),
            reservoir_capacity: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WindowOutcome {
    pub window_index: u64,
    /// Completed rows of the current window only, in input order.
    pub completed: Array2<f64>,
    /// `None` when the window was too small to train on.
    pub best_val_mae: Option<f64>,
    pub wall_time: f64,
    pub reservoir_size: usize,
    /// Rows the model saw: reservoir plus current window.
    pub augmented_rows: usize,
    pub epochs_run: usize,
    pub fell_back: bool,
}

/// Stateful driver that processes windows one at a time.
#[derive(Clone, Debug)]
pub struct ContinuousRunner {
    config: ContinuousConfig,
    reservoir: Reservoir,
    best: Option<ModelState>,
    windows_seen: u64,
}

impl ContinuousRunner {
    pub fn new(config: ContinuousConfig, dim: usize) -> Result<Self> {
        config.train.validate()?;
        if !(config.eta > 0.0 && config.eta <= 1.0) {
            return Err(Error::config(format!("eta must lie in (0,1], got {}", config.eta)));
        }
        let mut reservoir = Reservoir::new(dim);
        reservoir.capacity_hint = config.reservoir_capacity;
        Ok(Self {
            config,
            reservoir,
            best: None,
            windows_seen: 0,
        })
    }

    pub fn config(&self) -> &ContinuousConfig {
        &self.config
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn best_state(&self) -> Option<&ModelState> {
        self.best.as_ref()
    }

    pub fn windows_seen(&self) -> u64 {
        self.windows_seen
    }

    pub fn step(&mut self, chunk: &DataChunk) -> Result<WindowOutcome> {
        if chunk.dim != self.reservoir.dim && !chunk.is_empty() {
            return Err(Error::shape(format!(
                "runner expects {} attributes, window {} has {}",
                self.reservoir.dim, chunk.window_index, chunk.dim
            )));
        }
        let started = Instant::now();
        let variant = self.config.variant;
        let current = chunk.len();
        self.windows_seen += 1;

        if chunk.is_empty() {
            return Ok(WindowOutcome {
                window_index: chunk.window_index,
                completed: Array2::zeros((0, self.reservoir.dim)),
                best_val_mae: None,
                wall_time: started.elapsed().as_secs_f64(),
                reservoir_size: self.reservoir.len(),
                augmented_rows: 0,
                epochs_run: 0,
                fell_back: false,
            });
        }

        let (augmented, next_reservoir) = if variant.data_update() {
            data_update(&self.reservoir, chunk, self.config.eta)?
        } else {
            (chunk.clone(), self.reservoir.clone())
        };
        let values = augmented.values();
        let offset = augmented.len() - current;

        let mut train = self.config.train.clone();
        train.seed = derive_seed(self.config.train.seed ^ SEED_WINDOW, chunk.window_index);
        let observed = augmented.observed_count();
        let trainable =
            augmented.len() >= 2 && (train.validation_ratio * observed as f64).floor() as usize >= 1;

        let outcome = if trainable {
            let prev = if variant.model_update() { self.best.as_ref() } else { None };
            Some(model_state_selection(prev, &values, &self.config.graph, &train)?)
        } else {
            log::warn!(
                "window {}: {} rows with {observed} observed entries is too little to train; mean-filling",
                chunk.window_index,
                augmented.len()
            );
            None
        };

        self.reservoir = next_reservoir;
        let (full, best_val_mae, epochs_run) = match outcome {
            Some(o) => {
                if variant.model_update() {
                    self.best = Some(o.state);
                }
                (o.completed, Some(o.best_val_mae), o.epochs_run)
            }
            None => (mean_fill_matrix(&values), None, 0),
        };
        let completed = full.slice(s![offset.., ..]).to_owned();
        Ok(WindowOutcome {
            window_index: chunk.window_index,
            completed,
            best_val_mae,
            wall_time: started.elapsed().as_secs_f64(),
            reservoir_size: self.reservoir.len(),
            augmented_rows: augmented.len(),
            epochs_run,
            fell_back: best_val_mae.is_none(),
        })
    }

    /// Serializes everything needed to resume: reservoir, best state, window
    /// counter and the variant/seed/eta the run was started with.
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        self.reservoir.write_into(&mut c, "reservoir.");
        if let Some(best) = &self.best {
            best.write_into(&mut c, "model.");
        }
        c.put_meta("has_model", self.best.is_some() as u64);
        c.put_meta("windows_seen", self.windows_seen);
        c.put_meta("variant", self.config.variant.code());
        c.put_meta("seed", self.config.train.seed);
        c.put_meta("eta_bits", self.config.eta.to_bits());
        c
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    /// Restores a runner; `config` must match the one the checkpoint was
    /// written with in variant, seed and eta.
    pub fn from_container(config: ContinuousConfig, c: &Container) -> Result<Self> {
        let variant = Variant::from_code(c.meta("variant")?)?;
        if variant != config.variant
            || c.meta("seed")? != config.train.seed
            || c.meta("eta_bits")? != config.eta.to_bits()
        {
            return Err(Error::Checkpoint(
                "checkpoint was written with a different variant, seed or eta".into(),
            ));
        }
        let reservoir = Reservoir::read_from(c, "reservoir.")?;
        let best = match c.meta("has_model")? {
            0 => None,
            _ => Some(ModelState::read_from(c, "model.")?),
        };
        let mut runner = Self::new(config, reservoir.dim)?;
        runner.reservoir = reservoir;
        runner.best = best;
        runner.windows_seen = c.meta("windows_seen")?;
        Ok(runner)
    }

    pub fn load_checkpoint(config: ContinuousConfig, path: &Path) -> Result<Self> {
        Self::from_container(config, &Container::load(path)?)
    }
}

/// Runs `variant` over the windows in order.
pub fn run_continuous(
    windows: &[DataChunk],
    variant: Variant,
    config: &ContinuousConfig,
    eta: f64,
) -> Result<Vec<WindowOutcome>> {
    let Some(dim) = windows.iter().map(|w| w.dim).find(|&d| d > 0) else {
        return Ok(windows
            .iter()
            .map(|w| WindowOutcome {
                window_index: w.window_index,
                completed: Array2::zeros((0, 0)),
                best_val_mae: None,
                wall_time: 0.0,
                reservoir_size: 0,
                augmented_rows: 0,
                epochs_run: 0,
                fell_back: false,
            })
            .collect());
    };
    let config = ContinuousConfig {
        variant,
        eta,
        ..config.clone()
    };
    let mut runner = ContinuousRunner::new(config, dim)?;
    windows.iter().map(|w| runner.step(w)).collect()
}

/// Row-stacks the completed windows.
pub fn stack_outputs(outcomes: &[WindowOutcome]) -> Array2<f64> {
    let dim = outcomes.iter().map(|o| o.completed.ncols()).max().unwrap_or(0);
    let views: Vec<_> = outcomes
        .iter()
        .filter(|o| o.completed.nrows() > 0)
        .map(|o| o.completed.view())
        .collect();
    if views.is_empty() {
        return Array2::zeros((0, dim));
    }
    ndarray::concatenate(Axis(0), &views).expect("windows share a dimensionality")
}

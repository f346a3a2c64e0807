//! Parameter-free feature propagation: repeated normalized-adjacency
//! averaging with observed entries clamped back after every step.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{mean_fill_matrix, SimilarityGraph};
use crate::linalg::SparseRows;
use crate::stream::{DataChunk, MaskChunk};

pub const DEFAULT_MAX_ITERS: usize = 40;
pub const DEFAULT_TOL: f64 = 1e-6;

/// One propagation step: row `i` becomes `Σ_k Ã[i,k]·x_k`. Isolated nodes get zeros.
pub fn feaprop_step(x: &Array2<f64>, graph: &SimilarityGraph) -> Array2<f64> {
    propagate(Execution::default(), x, &graph.normalized_adjacency())
}

/// Step with an arbitrary weight operator (e.g. hand-specified edge weights).
pub fn propagate(exec: Execution, x: &Array2<f64>, weights: &SparseRows) -> Array2<f64> {
    weights.apply(exec, &x.as_standard_layout().to_owned())
}

/// Keeps `original` where the mask is set, `x_tilde` elsewhere.
pub fn apply_bound(x_tilde: &Array2<f64>, original: &Array2<f64>, mask: &MaskChunk) -> Result<Array2<f64>> {
    if x_tilde.dim() != original.dim() || x_tilde.dim() != mask.bits.dim() {
        return Err(Error::shape(format!(
            "bound inputs {:?}, {:?}, mask {:?}",
            x_tilde.dim(),
            original.dim(),
            mask.bits.dim()
        )));
    }
    let mut out = x_tilde.clone();
    Zip::from(&mut out)
        .and(original)
        .and(&mask.bits)
        .for_each(|o, &x0, &m| {
            if m {
                *o = x0;
            }
        });
    Ok(out)
}

/// Outcome of an iterative propagation run.
#[derive(Clone, Debug)]
pub struct FeaPropResult {
    pub completed: Array2<f64>,
    pub iterations: usize,
    /// Max absolute change of the last iteration.
    pub last_change: f64,
}

/// Runs step + bound from the mean-filled chunk until the max absolute change
/// falls below `tol` or `max_iters` is reached.
///
/// Isolated nodes keep their current row rather than collapsing to zero.
pub fn feaprop_impute(
    chunk: &DataChunk,
    graph: &SimilarityGraph,
    max_iters: usize,
    tol: f64,
) -> Result<FeaPropResult> {
    feaprop_impute_matrix(Execution::default(), &chunk.values(), graph, max_iters, tol)
}

pub fn feaprop_impute_matrix(
    exec: Execution,
    values: &Array2<f64>,
    graph: &SimilarityGraph,
    max_iters: usize,
    tol: f64,
) -> Result<FeaPropResult> {
    if max_iters == 0 {
        return Err(Error::config("max_iters must be at least 1"));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::config(format!("tol must be non-negative, got {tol}")));
    }
    if graph.node_count() != values.nrows() {
        return Err(Error::shape(format!(
            "graph has {} nodes, chunk has {} rows",
            graph.node_count(),
            values.nrows()
        )));
    }
    let mask = MaskChunk::from_values(values);
    let original = values.mapv(|v| if v.is_nan() { 0.0 } else { v });
    let adjacency = graph.normalized_adjacency();
    let isolated: Vec<usize> = (0..graph.node_count()).filter(|&i| graph.degree(i) == 0).collect();

    let mut x = mean_fill_matrix(values);
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    while iterations < max_iters {
        let mut next = propagate(exec, &x, &adjacency);
        for &i in &isolated {
            next.row_mut(i).assign(&x.row(i));
        }
        let next = apply_bound(&next, &original, &mask)?;
        last_change = max_abs_diff(&next, &x);
        x = next;
        iterations += 1;
        if last_change < tol {
            break;
        }
    }
    Ok(FeaPropResult {
        completed: x,
        iterations,
        last_change,
    })
}

pub(crate) fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

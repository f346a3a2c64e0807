//! Per-chunk similarity graphs over mean-filled instances.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::linalg::SparseRows;
use crate::stream::DataChunk;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    // undefined angle: treat as unrelated
                    1.0
                } else {
                    1.0 - dot / (na.sqrt() * nb.sqrt())
                }
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Replaces every NaN entry with its column's observed mean (0.0 when the
/// column has no observed entry). Observed entries are copied bit for bit.
pub fn mean_fill_matrix(values: &Array2<f64>) -> Array2<f64> {
    let means = column_means(values);
    let mut out = values.clone();
    for mut row in out.rows_mut() {
        for (v, m) in row.iter_mut().zip(&means) {
            if v.is_nan() {
                *v = *m;
            }
        }
    }
    out
}

pub(crate) fn column_means(values: &Array2<f64>) -> Vec<f64> {
    let d = values.ncols();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for row in values.rows() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_nan() {
                sum[j] += v;
                count[j] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

pub fn mean_fill(chunk: &DataChunk) -> Array2<f64> {
    mean_fill_matrix(&chunk.values())
}

/// Undirected graph without self-loops, stored as sorted adjacency lists with
/// the symmetric normalization `1/√(deg(i)·deg(k))` per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    norm_weights: Vec<f64>,
    pub metric: Metric,
    /// Neighbor count for KNN graphs; `None` for threshold graphs.
    pub k: Option<usize>,
}

impl SimilarityGraph {
    /// Builds from an undirected edge list. Duplicates and orientation are ignored.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        metric: Metric,
        k: Option<usize>,
    ) -> Result<Self> {
        let mut adj = vec![Vec::new(); node_count];
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::config(format!(
                    "edge ({a},{b}) outside {node_count} nodes"
                )));
            }
            if a == b {
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self::from_adjacency(adj, metric, k))
    }

    fn from_adjacency(adj: Vec<Vec<usize>>, metric: Metric, k: Option<usize>) -> Self {
        let degrees: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        let mut neighbors = Vec::new();
        let mut norm_weights = Vec::new();
        offsets.push(0);
        for (i, list) in adj.iter().enumerate() {
            for &k in list {
                neighbors.push(k);
                norm_weights.push(1.0 / ((degrees[i] * degrees[k]) as f64).sqrt());
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            norm_weights,
            metric,
            k,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// `N_i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_edge(&self, i: usize, k: usize) -> bool {
        self.neighbors(i).binary_search(&k).is_ok()
    }

    /// Normalized adjacency entry; 0 when there is no edge.
    pub fn norm_weight(&self, i: usize, k: usize) -> f64 {
        match self.neighbors(i).binary_search(&k) {
            Ok(pos) => self.norm_weights[self.offsets[i] + pos],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(k, weight)` over the normalized adjacency row of `i`.
    pub fn weighted_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.neighbors[r.clone()]
            .iter()
            .copied()
            .zip(self.norm_weights[r].iter().copied())
    }

    /// Sparse form of the normalized adjacency.
    pub fn normalized_adjacency(&self) -> SparseRows {
        SparseRows::from_rows(
            (0..self.node_count())
                .map(|i| self.weighted_neighbors(i).collect())
                .collect(),
        )
    }

    /// Row-stochastic neighbor averaging (`1/|N_i|` per edge).
    pub fn mean_aggregation(&self) -> SparseRows {
        SparseRows::from_rows(
            (0..self.node_count())
                .map(|i| {
                    let w = 1.0 / self.degree(i).max(1) as f64;
                    self.neighbors(i).iter().map(|&k| (k, w)).collect()
                })
                .collect(),
        )
    }

    /// Writes the edge list as CSV `i,k,weight`, each undirected edge in both orientations.
    pub fn write_edge_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,k,weight")?;
        for i in 0..self.node_count() {
            for (k, w) in self.weighted_neighbors(i) {
                writeln!(out, "{i},{k},{w}")?;
            }
        }
        Ok(())
    }
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Directed K-nearest-neighbor lists (ties to the lower index), symmetrized by union.
pub fn knn_graph(filled: &Array2<f64>, k: usize, metric: Metric) -> Result<SimilarityGraph> {
    knn_graph_with(Execution::default(), filled, k, metric)
}

pub fn knn_graph_with(
    exec: Execution,
    filled: &Array2<f64>,
    k: usize,
    metric: Metric,
) -> Result<SimilarityGraph> {
    let n = filled.nrows();
    if n < 2 {
        return Err(Error::config(format!("KNN graph needs at least 2 nodes, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::config(format!("K must satisfy 1 <= K < |V|; K={k}, |V|={n}")));
    }
    let data = filled.as_standard_layout();
    let d = filled.ncols();
    let rows = data.as_slice().unwrap();
    let directed: Vec<Vec<usize>> = map_range(exec, n, |i| {
        let xi = &rows[i * d..(i + 1) * d];
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (metric.distance(xi, &rows[j * d..(j + 1) * d]), j))
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_distance);
            cand.truncate(k);
        }
        cand.into_iter().map(|(_, j)| j).collect()
    });
    let edges = directed
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |&j| (i, j)));
    SimilarityGraph::from_edges(n, edges, metric, Some(k))
}

/// Edge between `i` and `k` iff their distance is strictly below `threshold`.
pub fn threshold_graph(filled: &Array2<f64>, metric: Metric, threshold: f64) -> Result<SimilarityGraph> {
    threshold_graph_with(Execution::default(), filled, metric, threshold)
}

pub fn threshold_graph_with(
    exec: Execution,
    filled: &Array2<f64>,
    metric: Metric,
    threshold: f64,
) -> Result<SimilarityGraph> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::config(format!("threshold must be non-negative, got {threshold}")));
    }
    let n = filled.nrows();
    let data = filled.as_standard_layout();
    let d = filled.ncols();
    let rows = data.as_slice().unwrap();
    let upper: Vec<Vec<usize>> = map_range(exec, n, |i| {
        let xi = &rows[i * d..(i + 1) * d];
        (i + 1..n)
            .filter(|&j| metric.distance(xi, &rows[j * d..(j + 1) * d]) < threshold)
            .collect()
    });
    let edges = upper
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |&j| (i, j)));
    SimilarityGraph::from_edges(n, edges, metric, None)
}

/// How a chunk's similarity graph is constructed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphBuilder {
    Knn { k: usize, metric: Metric },
    Threshold { threshold: f64, metric: Metric },
}

impl Default for GraphBuilder {
    fn default() -> Self {
        GraphBuilder::Knn {
            k: 10,
            metric: Metric::Euclidean,
        }
    }
}

impl GraphBuilder {
    /// Builds the graph, clamping K to `|V|-1` for chunks smaller than K+1 rows.
    pub fn build(&self, exec: Execution, filled: &Array2<f64>) -> Result<SimilarityGraph> {
        match *self {
            GraphBuilder::Knn { k, metric } => {
                let n = filled.nrows();
                let k_eff = k.min(n.saturating_sub(1));
                if k_eff < k {
                    log::debug!("clamping K from {k} to {k_eff} for a {n}-row chunk");
                }
                knn_graph_with(exec, filled, k_eff, metric)
            }
            GraphBuilder::Threshold { threshold, metric } => {
                threshold_graph_with(exec, filled, metric, threshold)
            }
        }
    }
}

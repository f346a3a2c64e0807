//! A single message-propagation layer: neighbor aggregation with a self term,
//! a reconstruction projection back to D attributes, and the bound condition.

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::SimilarityGraph;
use crate::linalg::{add_row_bias, column_sums, matmul, matmul_nt, matmul_tn, SparseRows};
use crate::stream::MaskChunk;

/// Factor applied to freshly drawn reconstruction weights.
///
/// A full-scale random readout has to be unlearned before the hidden features
/// can pay off, and with Adam's bounded step size that costs a fixed number of
/// epochs no matter how good the message-passing weights already are. Starting
/// the readout near zero makes the first reconstructions close to the
/// per-attribute mean of the (standardized) training data instead.
pub const RECONSTRUCTION_INIT_SCALE: f64 = 0.1;

/// Parameters of one layer. The message-passing part is `w_self`, `w_neigh`,
/// `b_msg`; the reconstruction part is `w_rec`, `b_rec`.
#[derive(Clone, Debug, PartialEq)]
pub struct MsgPropLayerParams {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
    pub b_msg: Array1<f64>,
    pub w_rec: Array2<f64>,
    pub b_rec: Array1<f64>,
}

impl MsgPropLayerParams {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w_self: Array2::zeros((d_in, hidden)),
            w_neigh: Array2::zeros((d_in, hidden)),
            b_msg: Array1::zeros(hidden),
            w_rec: Array2::zeros((hidden, d_out)),
            b_rec: Array1::zeros(d_out),
        }
    }

    /// Glorot-uniform weights, zero biases. The reconstruction weights are
    /// additionally shrunk by [`RECONSTRUCTION_INIT_SCALE`].
    pub fn init<R: Rng>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_in, hidden, d_out);
        glorot(&mut p.w_self, rng);
        glorot(&mut p.w_neigh, rng);
        p.reset_reconstruction(rng);
        p
    }

    /// Re-draws the reconstruction weights and zeroes its bias.
    pub fn reset_reconstruction<R: Rng>(&mut self, rng: &mut R) {
        glorot(&mut self.w_rec, rng);
        self.w_rec.mapv_inplace(|v| v * RECONSTRUCTION_INIT_SCALE);
        self.b_rec.fill(0.0);
    }

    pub fn input_dim(&self) -> usize {
        self.w_self.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_self.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_rec.ncols()
    }

    pub fn check(&self) -> Result<()> {
        let (d_in, f) = self.w_self.dim();
        let d_out = self.w_rec.ncols();
        let ok = self.w_neigh.dim() == (d_in, f)
            && self.b_msg.len() == f
            && self.w_rec.nrows() == f
            && self.b_rec.len() == d_out;
        if !ok {
            return Err(Error::shape("inconsistent layer parameter shapes"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|(_, s, _)| s.iter().all(|v| v.is_finite()))
    }

    /// `(name, values, is_matrix)` for every parameter tensor, in a fixed order.
    pub fn slices(&self) -> [(&'static str, &[f64], bool); 5] {
        [
            ("w_self", self.w_self.as_slice().unwrap(), true),
            ("w_neigh", self.w_neigh.as_slice().unwrap(), true),
            ("b_msg", self.b_msg.as_slice().unwrap(), false),
            ("w_rec", self.w_rec.as_slice().unwrap(), true),
            ("b_rec", self.b_rec.as_slice().unwrap(), false),
        ]
    }

    pub fn slices_mut(&mut self) -> [(&'static str, &mut [f64], bool); 5] {
        [
            ("w_self", self.w_self.as_slice_mut().unwrap(), true),
            ("w_neigh", self.w_neigh.as_slice_mut().unwrap(), true),
            ("b_msg", self.b_msg.as_slice_mut().unwrap(), false),
            ("w_rec", self.w_rec.as_slice_mut().unwrap(), true),
            ("b_rec", self.b_rec.as_slice_mut().unwrap(), false),
        ]
    }
}

fn glorot<R: Rng>(w: &mut Array2<f64>, rng: &mut R) {
    let (fan_in, fan_out) = w.dim();
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.random_range(-bound..=bound);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Neighbor-weighting operator of a layer together with its transpose for
/// the backward pass.
#[derive(Clone, Debug)]
pub struct Propagation {
    forward: SparseRows,
    backward: SparseRows,
}

impl Propagation {
    /// Plain neighbor mean (`1/|N_i|` per edge); isolated nodes aggregate to zero.
    pub fn mean(graph: &SimilarityGraph) -> Self {
        Self::from_operator(graph.mean_aggregation())
    }

    /// Symmetric-normalized adjacency weights.
    pub fn normalized(graph: &SimilarityGraph) -> Self {
        Self::from_operator(graph.normalized_adjacency())
    }

    /// Explicit per-edge weights: row `i` lists `(k, c(x_i, x_k))`.
    pub fn explicit(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self::from_operator(SparseRows::from_rows(rows))
    }

    pub fn from_operator(forward: SparseRows) -> Self {
        let backward = forward.transpose();
        Self { forward, backward }
    }

    pub fn size(&self) -> usize {
        self.forward.size()
    }

    pub fn operator(&self) -> &SparseRows {
        &self.forward
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub input: Array2<f64>,
    pub aggregated: Array2<f64>,
    pub pre_activation: Array2<f64>,
    pub hidden: Array2<f64>,
    pub x_tilde: Array2<f64>,
    pub x_bounded: Array2<f64>,
}

/// Forward pass. `original` must be zero (or any finite value) at unobserved
/// entries; only masked entries are read.
pub fn forward(
    exec: Execution,
    params: &MsgPropLayerParams,
    prop: &Propagation,
    activation: Activation,
    input: Array2<f64>,
    original: &Array2<f64>,
    mask: &MaskChunk,
) -> Result<LayerCache> {
    let n = input.nrows();
    if input.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "layer expects {} input attributes, got {}",
            params.input_dim(),
            input.ncols()
        )));
    }
    if prop.size() != n || original.dim() != (n, params.output_dim()) || mask.bits.dim() != original.dim() {
        return Err(Error::shape(format!(
            "layer over {} nodes given input {:?}, original {:?}, mask {:?}",
            prop.size(),
            input.dim(),
            original.dim(),
            mask.bits.dim()
        )));
    }
    let input = input.as_standard_layout().into_owned();
    let aggregated = prop.forward.apply(exec, &input);
    let mut pre = matmul(exec, &input, &params.w_self);
    pre += &matmul(exec, &aggregated, &params.w_neigh);
    add_row_bias(&mut pre, params.b_msg.as_slice().unwrap());
    let hidden = pre.mapv(|v| activation.apply(v));
    let mut x_tilde = matmul(exec, &hidden, &params.w_rec);
    add_row_bias(&mut x_tilde, params.b_rec.as_slice().unwrap());
    let mut x_bounded = x_tilde.clone();
    Zip::from(&mut x_bounded)
        .and(original)
        .and(&mask.bits)
        .for_each(|o, &x0, &m| {
            if m {
                *o = x0;
            }
        });
    Ok(LayerCache {
        input,
        aggregated,
        pre_activation: pre,
        hidden,
        x_tilde,
        x_bounded,
    })
}

/// Backward pass from `d_x_tilde`; returns parameter gradients and, when
/// requested, the gradient with respect to the layer input.
pub fn backward(
    exec: Execution,
    params: &MsgPropLayerParams,
    prop: &Propagation,
    activation: Activation,
    cache: &LayerCache,
    d_x_tilde: &Array2<f64>,
    want_input_grad: bool,
) -> (MsgPropLayerParams, Option<Array2<f64>>) {
    let d_w_rec = matmul_tn(exec, &cache.hidden, d_x_tilde);
    let d_b_rec = Array1::from(column_sums(d_x_tilde));
    let mut d_pre = matmul_nt(exec, d_x_tilde, &params.w_rec);
    Zip::from(&mut d_pre)
        .and(&cache.pre_activation)
        .for_each(|g, &p| *g *= activation.derivative(p));
    let d_w_self = matmul_tn(exec, &cache.input, &d_pre);
    let d_w_neigh = matmul_tn(exec, &cache.aggregated, &d_pre);
    let d_b_msg = Array1::from(column_sums(&d_pre));
    let d_input = want_input_grad.then(|| {
        let mut g = matmul_nt(exec, &d_pre, &params.w_self);
        let through_neighbors = prop.backward.apply(exec, &matmul_nt(exec, &d_pre, &params.w_neigh));
        g += &through_neighbors;
        g
    });
    (
        MsgPropLayerParams {
            w_self: d_w_self,
            w_neigh: d_w_neigh,
            b_msg: d_b_msg,
            w_rec: d_w_rec,
            b_rec: d_b_rec,
        },
        d_input,
    )
}

/// Single-layer forward with the default unit (neighbor mean + self term, ReLU).
/// Returns `(x_tilde, x_bounded)`.
pub fn msgprop_layer_forward(
    x_in: &Array2<f64>,
    graph: &SimilarityGraph,
    params: &MsgPropLayerParams,
    x_original: &Array2<f64>,
    mask: &MaskChunk,
) -> Result<(Array2<f64>, Array2<f64>)> {
    params.check()?;
    let original = x_original.mapv(|v| if v.is_nan() { 0.0 } else { v });
    let cache = forward(
        Execution::default(),
        params,
        &Propagation::mean(graph),
        Activation::Relu,
        x_in.clone(),
        &original,
        mask,
    )?;
    Ok((cache.x_tilde, cache.x_bounded))
}

/// Parameters under which a layer with `Propagation::normalized` and
/// `Activation::Identity` reduces exactly to one feature-propagation step:
/// zero self term, identity pass-through of the first D hidden units.
pub fn feaprop_reduction(dim: usize, hidden: usize) -> MsgPropLayerParams {
    assert!(hidden >= dim);
    let mut p = MsgPropLayerParams::zeros(dim, hidden, dim);
    for d in 0..dim {
        p.w_neigh[[d, d]] = 1.0;
        p.w_rec[[d, d]] = 1.0;
    }
    p
}

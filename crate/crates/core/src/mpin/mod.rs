//! Two stacked message-propagation layers trained transductively per chunk.
//!
//! Layer 1 reads the mean-filled chunk and reconstructs every attribute;
//! its bounded output (observed entries clamped back) feeds layer 2, whose
//! bounded output is the imputed chunk. The loss is a weighted sum of both
//! layers' masked reconstruction errors, measured before the bound.

pub mod layer;
pub mod optim;
pub mod train;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{mean_fill_matrix, SimilarityGraph};
use crate::stream::{DataChunk, MaskChunk};

pub use layer::{msgprop_layer_forward, Activation, MsgPropLayerParams, Propagation};
pub use optim::AdamW;
pub use train::{train_impute, TrainConfig, TrainOutcome};

/// Hidden width used when none is configured: `max(2·D, 32)`.
pub fn default_hidden_dim(dim: usize) -> usize {
    (2 * dim).max(32)
}

/// All learnable parameters of the two-layer network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub layer1: MsgPropLayerParams,
    pub layer2: MsgPropLayerParams,
    /// Seed the state was (last) initialized from.
    pub rng_seed: u64,
}

impl ModelState {
    pub fn fresh(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer1 = MsgPropLayerParams::init(dim, hidden, dim, &mut rng);
        let layer2 = MsgPropLayerParams::init(dim, hidden, dim, &mut rng);
        Self {
            layer1,
            layer2,
            rng_seed: seed,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |p: &MsgPropLayerParams| {
            MsgPropLayerParams::zeros(p.input_dim(), p.hidden_dim(), p.output_dim())
        };
        Self {
            layer1: z(&self.layer1),
            layer2: z(&self.layer2),
            rng_seed: self.rng_seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.layer1.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1.hidden_dim()
    }

    pub fn check(&self) -> Result<()> {
        self.layer1.check()?;
        self.layer2.check()?;
        let d = self.layer1.input_dim();
        if self.layer1.output_dim() != d || self.layer2.input_dim() != d || self.layer2.output_dim() != d {
            return Err(Error::shape("both layers must map D attributes back to D"));
        }
        Ok(())
    }

    pub fn layers(&self) -> [&MsgPropLayerParams; 2] {
        [&self.layer1, &self.layer2]
    }

    pub fn layers_mut(&mut self) -> [&mut MsgPropLayerParams; 2] {
        [&mut self.layer1, &mut self.layer2]
    }

    pub fn is_finite(&self) -> bool {
        self.layer1.is_finite() && self.layer2.is_finite()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        self.write_into(&mut c, "");
        c
    }

    /// Stores every tensor under `{prefix}layerN.{name}`.
    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        for (li, layer) in self.layers().into_iter().enumerate() {
            let shapes = [
                layer.w_self.dim(),
                layer.w_neigh.dim(),
                (1, layer.b_msg.len()),
                layer.w_rec.dim(),
                (1, layer.b_rec.len()),
            ];
            for ((name, values, _), shape) in layer.slices().into_iter().zip(shapes) {
                let m = Array2::from_shape_vec(shape, values.to_vec()).unwrap();
                c.put_tensor(format!("{prefix}layer{}.{name}", li + 1), m);
            }
        }
        c.put_meta(format!("{prefix}rng_seed"), self.rng_seed);
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Self::read_from(c, "")
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let layer = |li: usize| -> Result<MsgPropLayerParams> {
            let get = |name: &str| c.tensor(&format!("{prefix}layer{li}.{name}"));
            let vector = |name: &str| -> Result<ndarray::Array1<f64>> {
                let t = get(name)?;
                if t.nrows() != 1 {
                    return Err(Error::Checkpoint(format!("{name} must be a 1-row tensor")));
                }
                Ok(t.row(0).to_owned())
            };
            let p = MsgPropLayerParams {
                w_self: get("w_self")?.clone(),
                w_neigh: get("w_neigh")?.clone(),
                b_msg: vector("b_msg")?,
                w_rec: get("w_rec")?.clone(),
                b_rec: vector("b_rec")?,
            };
            p.check()
                .map_err(|e| Error::Checkpoint(format!("layer {li}: {e}")))?;
            Ok(p)
        };
        let state = Self {
            layer1: layer(1)?,
            layer2: layer(2)?,
            rng_seed: c.meta(&format!("{prefix}rng_seed"))?,
        };
        state
            .check()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(state)
    }
}

/// Layer operator and unit choices shared by both layers.
#[derive(Clone, Debug)]
pub struct Network {
    pub propagation: Propagation,
    pub activation: Activation,
}

impl Network {
    /// Default unit: neighbor mean with self term, ReLU.
    pub fn for_graph(graph: &SimilarityGraph) -> Self {
        Self {
            propagation: Propagation::mean(graph),
            activation: Activation::Relu,
        }
    }
}

/// Inputs of one forward pass in the network's working space.
#[derive(Clone, Debug)]
pub struct NetworkInput {
    /// Mean-filled chunk fed to layer 1.
    pub filled: Array2<f64>,
    /// Observed values, zero elsewhere.
    pub original: Array2<f64>,
    pub mask: MaskChunk,
}

impl NetworkInput {
    /// From a NaN-encoded matrix.
    pub fn from_values(values: &Array2<f64>) -> Self {
        Self {
            filled: mean_fill_matrix(values),
            original: values.mapv(|v| if v.is_nan() { 0.0 } else { v }),
            mask: MaskChunk::from_values(values),
        }
    }
}

/// Outputs of both layers: pre-bound reconstructions and bounded results.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub x_tilde_1: Array2<f64>,
    pub x_1: Array2<f64>,
    pub x_tilde_2: Array2<f64>,
    pub x_2: Array2<f64>,
}

pub(crate) struct Caches {
    l1: layer::LayerCache,
    l2: layer::LayerCache,
}

impl Caches {
    fn pass(&self) -> ForwardPass {
        ForwardPass {
            x_tilde_1: self.l1.x_tilde.clone(),
            x_1: self.l1.x_bounded.clone(),
            x_tilde_2: self.l2.x_tilde.clone(),
            x_2: self.l2.x_bounded.clone(),
        }
    }

    pub(crate) fn output(&self) -> &Array2<f64> {
        &self.l2.x_bounded
    }
}

pub(crate) fn forward_cached(
    exec: Execution,
    state: &ModelState,
    net: &Network,
    input: &NetworkInput,
) -> Result<Caches> {
    let l1 = layer::forward(
        exec,
        &state.layer1,
        &net.propagation,
        net.activation,
        input.filled.clone(),
        &input.original,
        &input.mask,
    )?;
    let l2 = layer::forward(
        exec,
        &state.layer2,
        &net.propagation,
        net.activation,
        l1.x_bounded.clone(),
        &input.original,
        &input.mask,
    )?;
    Ok(Caches { l1, l2 })
}

/// Forward pass of the whole network in an explicit configuration.
pub fn network_forward(
    exec: Execution,
    state: &ModelState,
    net: &Network,
    input: &NetworkInput,
) -> Result<ForwardPass> {
    state.check()?;
    Ok(forward_cached(exec, state, net, input)?.pass())
}

/// Forward pass of the default network over a chunk and its graph.
pub fn mpin_forward(chunk: &DataChunk, graph: &SimilarityGraph, state: &ModelState) -> Result<ForwardPass> {
    if graph.node_count() != chunk.len() {
        return Err(Error::shape(format!(
            "graph has {} nodes, chunk has {} rows",
            graph.node_count(),
            chunk.len()
        )));
    }
    let input = NetworkInput::from_values(&chunk.values());
    network_forward(Execution::default(), state, &Network::for_graph(graph), &input)
}

/// Masked mean squared error: squared differences summed over masked entries
/// divided by their count.
fn masked_mse(x0: &Array2<f64>, mask: &MaskChunk, x: &Array2<f64>, count: usize) -> f64 {
    let mut sum = 0.0;
    Zip::from(x0).and(&mask.bits).and(x).for_each(|&a, &m, &b| {
        if m {
            sum += (a - b) * (a - b);
        }
    });
    sum / count as f64
}

/// `λ1·MSE(x0, x̃1) + λ2·MSE(x0, x̃2)` over the entries selected by `mask`.
pub fn mpin_loss(
    x0: &Array2<f64>,
    mask: &MaskChunk,
    x_tilde_1: &Array2<f64>,
    x_tilde_2: &Array2<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    if x0.dim() != mask.bits.dim() || x0.dim() != x_tilde_1.dim() || x0.dim() != x_tilde_2.dim() {
        return Err(Error::shape("loss inputs must share one shape"));
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::LossUndefined);
    }
    Ok(lambda1 * masked_mse(x0, mask, x_tilde_1, count) + lambda2 * masked_mse(x0, mask, x_tilde_2, count))
}

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

/// Loss value, the forward pass it came from, and the analytic gradient of
/// the loss with respect to every parameter.
pub struct LossAndGradient {
    pub loss: f64,
    pub gradient: ModelState,
    pub(crate) caches: Caches,
}

impl LossAndGradient {
    pub fn forward(&self) -> ForwardPass {
        self.caches.pass()
    }
}

pub fn loss_and_gradient(
    exec: Execution,
    state: &ModelState,
    net: &Network,
    input: &NetworkInput,
    weights: LossWeights,
) -> Result<LossAndGradient> {
    let caches = forward_cached(exec, state, net, input)?;
    let count = input.mask.count();
    if count == 0 {
        return Err(Error::LossUndefined);
    }
    let loss = weights.lambda1 * masked_mse(&input.original, &input.mask, &caches.l1.x_tilde, count)
        + weights.lambda2 * masked_mse(&input.original, &input.mask, &caches.l2.x_tilde, count);

    let residual_grad = |x_tilde: &Array2<f64>, lambda: f64| {
        let scale = 2.0 * lambda / count as f64;
        let mut g = Array2::zeros(x_tilde.dim());
        Zip::from(&mut g)
            .and(x_tilde)
            .and(&input.original)
            .and(&input.mask.bits)
            .for_each(|g, &xt, &x0, &m| {
                if m {
                    *g = scale * (xt - x0);
                }
            });
        g
    };

    let d_xt2 = residual_grad(&caches.l2.x_tilde, weights.lambda2);
    let (g2, d_x1) = layer::backward(
        exec,
        &state.layer2,
        &net.propagation,
        net.activation,
        &caches.l2,
        &d_xt2,
        true,
    );
    // gradient reaches x̃1 through the bound only at unobserved entries
    let mut d_xt1 = residual_grad(&caches.l1.x_tilde, weights.lambda1);
    Zip::from(&mut d_xt1)
        .and(&d_x1.expect("input gradient requested"))
        .and(&input.mask.bits)
        .for_each(|g, &d, &m| {
            if !m {
                *g += d;
            }
        });
    let (g1, _) = layer::backward(
        exec,
        &state.layer1,
        &net.propagation,
        net.activation,
        &caches.l1,
        &d_xt1,
        false,
    );
    Ok(LossAndGradient {
        loss,
        gradient: ModelState {
            layer1: g1,
            layer2: g2,
            rng_seed: state.rng_seed,
        },
        caches,
    })
}

/// Copies the message-passing parameters of `best` and re-initializes both
/// reconstruction modules from `seed`.
pub fn transfer_state(best: &ModelState, seed: u64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = best.clone();
    for layer in next.layers_mut() {
        layer.reset_reconstruction(&mut rng);
    }
    next.rng_seed = seed;
    next
}

//! Graph embedding network: encoder MLP, directional message-passing layers
//! and a gated-sum aggregator, with an exact reverse pass.

use serde::{Deserialize, Serialize};

use super::layers::{Linear, Mlp, MlpCache};
use crate::acfg::{AttributedCfg, OpcodeVocabulary};
use crate::error::{Error, Result};
use crate::pairgen::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the node feature vectors (vocabulary size + UNK).
    pub input_dim: usize,
    pub node_state_dim: usize,
    pub graph_embedding_dim: usize,
    pub propagation_layers: usize,
    pub encoder_hidden: Vec<usize>,
    pub update_hidden: Vec<usize>,
    pub aggregator_hidden: Vec<usize>,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 0,
            node_state_dim: 32,
            graph_embedding_dim: 128,
            propagation_layers: 5,
            encoder_hidden: vec![],
            update_hidden: vec![64],
            aggregator_hidden: vec![],
            margin: 0.1,
            learning_rate: 1e-3,
            batch_size: 32,
            max_nodes: 2000,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_vocabulary(mut self, vocab: &OpcodeVocabulary) -> Self {
        self.input_dim = vocab.feature_dim();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.node_state_dim, self.graph_embedding_dim]
            .into_iter()
            .chain(self.encoder_hidden.iter().copied())
            .chain(self.update_hidden.iter().copied())
            .chain(self.aggregator_hidden.iter().copied());
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if dims.into_iter().any(|d| d == 0) {
            return bad("all model dimensions must be at least 1");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_nodes == 0 {
            return bad("batch size and node cap must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationLayer {
    pub w_in: Linear,
    pub w_out: Linear,
    pub update: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregator {
    pub gate: Linear,
    pub proj: Linear,
    pub out: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub layers: Vec<PropagationLayer>,
    pub aggregator: Aggregator,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

/// Glorot-uniform weights and zero biases, drawn from `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut r = rng(config.seed);
    let d = config.node_state_dim;
    let g = config.graph_embedding_dim;
    let encoder = Mlp::init(&sizes(config.input_dim, &config.encoder_hidden, d), &mut r);
    let layers = (0..config.propagation_layers)
        .map(|_| PropagationLayer {
            w_in: Linear::init(d, d, false, &mut r),
            w_out: Linear::init(d, d, false, &mut r),
            update: Mlp::init(&sizes(3 * d, &config.update_hidden, d), &mut r),
        })
        .collect();
    let aggregator = Aggregator {
        gate: Linear::init(d, g, true, &mut r),
        proj: Linear::init(d, g, true, &mut r),
        out: Mlp::init(&sizes(g, &config.aggregator_hidden, g), &mut r),
    };
    Ok(ModelParams {
        encoder,
        layers,
        aggregator,
    })
}

fn linear_zeros(l: &Linear) -> Linear {
    Linear::zeros(l.fan_in, l.fan_out, l.bias.is_some())
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: self.encoder.zeros_like(),
            layers: self
                .layers
                .iter()
                .map(|l| PropagationLayer {
                    w_in: linear_zeros(&l.w_in),
                    w_out: linear_zeros(&l.w_out),
                    update: l.update.zeros_like(),
                })
                .collect(),
            aggregator: Aggregator {
                gate: linear_zeros(&self.aggregator.gate),
                proj: linear_zeros(&self.aggregator.proj),
                out: self.aggregator.out.zeros_like(),
            },
        }
    }

    /// Visits every tensor as `(name, shape, data)` in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        let mut lin = |name: String, l: &Linear| {
            f(&format!("{name}.weight"), &[l.fan_in, l.fan_out], &l.weight);
            if let Some(b) = &l.bias {
                f(&format!("{name}.bias"), &[l.fan_out], b);
            }
        };
        for (i, l) in self.encoder.layers.iter().enumerate() {
            lin(format!("encoder.{i}"), l);
        }
        for (t, layer) in self.layers.iter().enumerate() {
            lin(format!("prop.{t}.w_in"), &layer.w_in);
            lin(format!("prop.{t}.w_out"), &layer.w_out);
            for (i, l) in layer.update.layers.iter().enumerate() {
                lin(format!("prop.{t}.update.{i}"), l);
            }
        }
        lin("aggregator.gate".into(), &self.aggregator.gate);
        lin("aggregator.proj".into(), &self.aggregator.proj);
        for (i, l) in self.aggregator.out.layers.iter().enumerate() {
            lin(format!("aggregator.out.{i}"), l);
        }
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        let mut lin = |name: String, l: &mut Linear| {
            f(&format!("{name}.weight"), &mut l.weight);
            if let Some(b) = &mut l.bias {
                f(&format!("{name}.bias"), b);
            }
        };
        for (i, l) in self.encoder.layers.iter_mut().enumerate() {
            lin(format!("encoder.{i}"), l);
        }
        for (t, layer) in self.layers.iter_mut().enumerate() {
            lin(format!("prop.{t}.w_in"), &mut layer.w_in);
            lin(format!("prop.{t}.w_out"), &mut layer.w_out);
            for (i, l) in layer.update.layers.iter_mut().enumerate() {
                lin(format!("prop.{t}.update.{i}"), l);
            }
        }
        lin("aggregator.gate".into(), &mut self.aggregator.gate);
        lin("aggregator.proj".into(), &mut self.aggregator.proj);
        for (i, l) in self.aggregator.out.layers.iter_mut().enumerate() {
            lin(format!("aggregator.out.{i}"), l);
        }
    }

    pub fn flat_slices(&self) -> Vec<&[f64]> {
        let mut slices = Vec::new();
        for l in self.linears() {
            slices.push(l.weight.as_slice());
            if let Some(b) = &l.bias {
                slices.push(b.as_slice());
            }
        }
        slices
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut v: Vec<&Linear> = self.encoder.layers.iter().collect();
        for layer in &self.layers {
            v.push(&layer.w_in);
            v.push(&layer.w_out);
            v.extend(layer.update.layers.iter());
        }
        v.push(&self.aggregator.gate);
        v.push(&self.aggregator.proj);
        v.extend(self.aggregator.out.layers.iter());
        v
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v: Vec<&mut Linear> = self.encoder.layers.iter_mut().collect();
        for layer in &mut self.layers {
            v.push(&mut layer.w_in);
            v.push(&mut layer.w_out);
            v.extend(layer.update.layers.iter_mut());
        }
        v.push(&mut self.aggregator.gate);
        v.push(&mut self.aggregator.proj);
        v.extend(self.aggregator.out.layers.iter_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.flat_slices().iter().map(|s| s.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.linears_mut().into_iter().zip(other.linears()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += alpha * y;
            }
            if let (Some(ab), Some(bb)) = (&mut a.bias, &b.bias) {
                for (x, y) in ab.iter_mut().zip(bb) {
                    *x += alpha * y;
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.visit_mut(|_, t| t.iter_mut().for_each(|x| *x *= alpha));
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut found = None;
        self.visit(|name, _, data| {
            if found.is_none() && data.iter().any(|x| !x.is_finite()) {
                found = Some(name.to_string());
            }
        });
        found
    }

    pub fn is_zero(&self) -> bool {
        self.flat_slices().iter().all(|s| s.iter().all(|&x| x == 0.0))
    }

    /// Applies `f(param, other)` elementwise across two identically shaped sets.
    pub fn zip_apply(&mut self, other: &ModelParams, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.linears_mut().into_iter().zip(other.linears()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                f(x, *y);
            }
            if let (Some(ab), Some(bb)) = (&mut a.bias, &b.bias) {
                for (x, y) in ab.iter_mut().zip(bb) {
                    f(x, *y);
                }
            }
        }
    }
}

/// A graph reduced to what the network consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedGraph {
    pub nodes: usize,
    /// Row-major `nodes x input_dim` opcode counts.
    pub features: Vec<f64>,
    /// `(src, dst)` node positions.
    pub edges: Vec<(usize, usize)>,
}

impl PreparedGraph {
    pub fn new(cfg: &AttributedCfg, vocab: &OpcodeVocabulary) -> Self {
        PreparedGraph {
            nodes: cfg.node_count(),
            features: vocab.featurize_graph(cfg),
            edges: cfg.edge_positions(),
        }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.nodes > config.max_nodes {
            return Err(Error::GraphTooLarge {
                nodes: self.nodes,
                cap: config.max_nodes,
            });
        }
        if self.features.len() != self.nodes * config.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.nodes * config.input_dim,
                actual: self.features.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Initial node states from per-node features.
pub fn encode(features: &[f64], nodes: usize, params: &ModelParams) -> Result<Vec<f64>> {
    let expected = nodes * params.encoder.input_dim();
    if features.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            actual: features.len(),
        });
    }
    Ok(params.encoder.forward(features.to_vec(), nodes).0)
}

/// Concatenation of each node's state with its incoming and outgoing message sums.
fn message_input(states: &[f64], nodes: usize, edges: &[(usize, usize)], layer: &PropagationLayer) -> Vec<f64> {
    let d = layer.w_in.fan_in;
    let p_in = layer.w_in.forward(states, nodes);
    let p_out = layer.w_out.forward(states, nodes);
    let mut z = vec![0.0; nodes * 3 * d];
    for v in 0..nodes {
        z[v * 3 * d..v * 3 * d + d].copy_from_slice(&states[v * d..(v + 1) * d]);
    }
    for &(u, w) in edges {
        // m_in(w) += W_in h(u); m_out(u) += W_out h(w)
        let zin = &mut z[w * 3 * d + d..w * 3 * d + 2 * d];
        for (a, b) in zin.iter_mut().zip(&p_in[u * d..(u + 1) * d]) {
            *a += b;
        }
        let zout = &mut z[u * 3 * d + 2 * d..u * 3 * d + 3 * d];
        for (a, b) in zout.iter_mut().zip(&p_out[w * d..(w + 1) * d]) {
            *a += b;
        }
    }
    z
}

/// One propagation step through `params.layers[layer]`.
pub fn propagate(states: &[f64], edges: &[(usize, usize)], params: &ModelParams, layer: usize) -> Vec<f64> {
    let l = &params.layers[layer];
    let nodes = states.len() / l.w_in.fan_in;
    let z = message_input(states, nodes, edges, l);
    l.update.forward(z, nodes).0
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated sum of node states followed by the output MLP.
pub fn aggregate(states: &[f64], params: &ModelParams) -> Embedding {
    let agg = &params.aggregator;
    let nodes = states.len() / agg.gate.fan_in;
    let gates = agg.gate.forward(states, nodes);
    let proj = agg.proj.forward(states, nodes);
    let g = agg.gate.fan_out;
    let mut pooled = vec![0.0; g];
    for v in 0..nodes {
        for k in 0..g {
            pooled[k] += sigmoid(gates[v * g + k]) * proj[v * g + k];
        }
    }
    Embedding(agg.out.forward(pooled, 1).0)
}

/// Everything the reverse pass needs from one forward pass.
pub struct ForwardTrace {
    nodes: usize,
    encoder: MlpCache,
    layers: Vec<(Vec<f64>, MlpCache)>,
    states: Vec<f64>,
    gate_sig: Vec<f64>,
    proj: Vec<f64>,
    out: MlpCache,
    pub embedding: Embedding,
}

pub fn forward(graph: &PreparedGraph, params: &ModelParams, config: &ModelConfig) -> Result<ForwardTrace> {
    graph.check(config)?;
    let n = graph.nodes;
    let (mut h, encoder) = params.encoder.forward(graph.features.clone(), n);
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let z = message_input(&h, n, &graph.edges, layer);
        let (next, cache) = layer.update.forward(z, n);
        layers.push((h, cache));
        h = next;
    }
    let agg = &params.aggregator;
    let g = agg.gate.fan_out;
    let mut gate_sig = agg.gate.forward(&h, n);
    gate_sig.iter_mut().for_each(|x| *x = sigmoid(*x));
    let proj = agg.proj.forward(&h, n);
    let mut pooled = vec![0.0; g];
    for v in 0..n {
        for k in 0..g {
            pooled[k] += gate_sig[v * g + k] * proj[v * g + k];
        }
    }
    let (e, out) = agg.out.forward(pooled, 1);
    Ok(ForwardTrace {
        nodes: n,
        encoder,
        layers,
        states: h,
        gate_sig,
        proj,
        out,
        embedding: Embedding(e),
    })
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d embedding`.
pub fn backward(
    graph: &PreparedGraph,
    trace: &ForwardTrace,
    d_embedding: &[f64],
    params: &ModelParams,
    grad: &mut ModelParams,
) {
    let n = trace.nodes;
    let agg = &params.aggregator;
    let g = agg.gate.fan_out;
    let d_pooled = agg
        .out
        .backward(&trace.out, d_embedding.to_vec(), &mut grad.aggregator.out, true)
        .expect("dx requested");
    let mut d_gate = vec![0.0; n * g];
    let mut d_proj = vec![0.0; n * g];
    for v in 0..n {
        for k in 0..g {
            let i = v * g + k;
            let s = trace.gate_sig[i];
            d_proj[i] = d_pooled[k] * s;
            d_gate[i] = d_pooled[k] * trace.proj[i] * s * (1.0 - s);
        }
    }
    let mut dh = agg
        .gate
        .backward(&trace.states, n, &d_gate, &mut grad.aggregator.gate, true)
        .expect("dx requested");
    let dh_proj = agg
        .proj
        .backward(&trace.states, n, &d_proj, &mut grad.aggregator.proj, true)
        .expect("dx requested");
    dh.iter_mut().zip(&dh_proj).for_each(|(a, b)| *a += b);

    for (t, layer) in params.layers.iter().enumerate().rev() {
        let (h_prev, cache) = &trace.layers[t];
        let d = layer.w_in.fan_in;
        let gl = &mut grad.layers[t];
        let dz = layer
            .update
            .backward(cache, dh, &mut gl.update, true)
            .expect("dx requested");
        let mut dh_prev = vec![0.0; n * d];
        let mut dp_in = vec![0.0; n * d];
        let mut dp_out = vec![0.0; n * d];
        for v in 0..n {
            dh_prev[v * d..(v + 1) * d].copy_from_slice(&dz[v * 3 * d..v * 3 * d + d]);
        }
        for &(u, w) in &graph.edges {
            let din = &dz[w * 3 * d + d..w * 3 * d + 2 * d];
            for (a, b) in dp_in[u * d..(u + 1) * d].iter_mut().zip(din) {
                *a += b;
            }
            let dout = &dz[u * 3 * d + 2 * d..u * 3 * d + 3 * d];
            for (a, b) in dp_out[w * d..(w + 1) * d].iter_mut().zip(dout) {
                *a += b;
            }
        }
        let a = layer.w_in.backward(h_prev, n, &dp_in, &mut gl.w_in, true).expect("dx requested");
        let b = layer.w_out.backward(h_prev, n, &dp_out, &mut gl.w_out, true).expect("dx requested");
        for ((x, y), z) in dh_prev.iter_mut().zip(&a).zip(&b) {
            *x += y + z;
        }
        dh = dh_prev;
    }
    params.encoder.backward(&trace.encoder, dh, &mut grad.encoder, false);
}

pub fn embed_prepared(graph: &PreparedGraph, params: &ModelParams, config: &ModelConfig) -> Result<Embedding> {
    graph.check(config)?;
    let mut h = encode(&graph.features, graph.nodes, params)?;
    for t in 0..params.layers.len() {
        h = propagate(&h, &graph.edges, params, t);
    }
    Ok(aggregate(&h, params))
}

/// Featurize, encode, propagate `T` times, aggregate.
pub fn embed(
    cfg: &AttributedCfg,
    vocab: &OpcodeVocabulary,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Embedding> {
    if cfg.node_count() > config.max_nodes {
        return Err(Error::GraphTooLarge {
            nodes: cfg.node_count(),
            cap: config.max_nodes,
        });
    }
    embed_prepared(&PreparedGraph::new(cfg, vocab), params, config)
}

pub fn euclidean_distance(a: &Embedding, b: &Embedding) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Margin hinge `max(0, margin - t (1 - d))`.
pub fn pair_loss(distance: f64, label: i8, margin: f64) -> Result<f64> {
    if label != 1 && label != -1 {
        return Err(Error::InvalidLabel(label));
    }
    Ok((margin - f64::from(label) * (1.0 - distance)).max(0.0))
}

/// Loss of one pair and its gradient accumulated into `grad`.
pub fn pair_loss_and_grad(
    query: &PreparedGraph,
    target: &PreparedGraph,
    label: i8,
    params: &ModelParams,
    config: &ModelConfig,
    grad: &mut ModelParams,
) -> Result<f64> {
    let tq = forward(query, params, config)?;
    let tt = forward(target, params, config)?;
    let d = euclidean_distance(&tq.embedding, &tt.embedding);
    let loss = pair_loss(d, label, config.margin)?;
    // kink and d = 0 take subgradient 0
    if loss > 0.0 && d > 0.0 {
        let scale = f64::from(label) / d;
        let dq: Vec<f64> = tq
            .embedding
            .0
            .iter()
            .zip(&tt.embedding.0)
            .map(|(a, b)| scale * (a - b))
            .collect();
        let dt: Vec<f64> = dq.iter().map(|x| -x).collect();
        backward(query, &tq, &dq, params, grad);
        backward(target, &tt, &dt, params, grad);
    }
    Ok(loss)
}

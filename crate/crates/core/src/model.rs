//! The KGCN forward pass, its hand-written reverse-mode gradient, and the
//! inner-product matrix-factorization baseline.
//!
//! Representations are stored per aggregation iteration `h` and receptive
//! field layer `l`: `reps[h][l]` is a flat `K^l × d` buffer holding the
//! h-order representation of every entry of layer `l`. Iteration `h` reads
//! layers `0..=H-h+1` of iteration `h-1` and writes layers `0..=H-h`, so
//! after `H` iterations only the root remains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{receptive_field, NeighborSample, ReceptiveField};
use crate::numerics::{axpy, clamped_sigmoid, dot, sigmoid, Activation, GradientStore, Matrix, ParamShape, ParameterStore, PROB_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Concat,
    Neighbor,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Sum, Aggregator::Concat, Aggregator::Neighbor];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Concat => "concat",
            Aggregator::Neighbor => "neighbor",
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregator::Sum),
            "concat" => Ok(Aggregator::Concat),
            "neighbor" => Ok(Aggregator::Neighbor),
            other => Err(Error::Config(format!("unknown aggregator `{other}`"))),
        }
    }
}

/// What a parameter store was trained for; persisted in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Kgcn {
        aggregator: Aggregator,
        uniform_weights: bool,
    },
    MatrixFactorization,
}

const UNIFORM_FLAG: u32 = 0x100;

impl Architecture {
    pub fn tag(self) -> u32 {
        match self {
            Architecture::Kgcn {
                aggregator,
                uniform_weights,
            } => {
                let base = match aggregator {
                    Aggregator::Sum => 0,
                    Aggregator::Concat => 1,
                    Aggregator::Neighbor => 2,
                };
                if uniform_weights {
                    base | UNIFORM_FLAG
                } else {
                    base
                }
            }
            Architecture::MatrixFactorization => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        let uniform_weights = tag & UNIFORM_FLAG != 0;
        let aggregator = match tag & !UNIFORM_FLAG {
            0 => Aggregator::Sum,
            1 => Aggregator::Concat,
            2 => Aggregator::Neighbor,
            3 if !uniform_weights => return Some(Architecture::MatrixFactorization),
            _ => return None,
        };
        Some(Architecture::Kgcn {
            aggregator,
            uniform_weights,
        })
    }

    pub fn hop_input_dim(self, dim: usize) -> usize {
        match self {
            Architecture::Kgcn {
                aggregator: Aggregator::Concat,
                ..
            } => 2 * dim,
            _ => dim,
        }
    }
}

/// KGCN hyper-parameters. Both scoring functions are inner products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Receptive-field depth `H`.
    pub depth: usize,
    /// Neighbor sample size `K`.
    pub sample_size: usize,
    pub aggregator: Aggregator,
    /// KGCN-avg: replace user-relation attention with a plain mean.
    pub uniform_weights: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension d must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("receptive-field depth H must be at least 1".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("neighbor sample size K must be at least 1".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::Kgcn {
            aggregator: self.aggregator,
            uniform_weights: self.uniform_weights,
        }
    }

    /// Activation of aggregation iteration `h` (1-based): ReLU before the
    /// last iteration, tanh on it.
    pub fn activation(&self, h: usize) -> Activation {
        if h == self.depth {
            Activation::Tanh
        } else {
            Activation::Relu
        }
    }
}

/// Either the KGCN model or the KG-free matrix-factorization baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    Kgcn(ModelConfig),
    MatrixFactorization { dim: usize },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Kgcn(c) => c.validate(),
            ModelSpec::MatrixFactorization { dim: 0 } => {
                Err(Error::Config("embedding dimension d must be at least 1".into()))
            }
            ModelSpec::MatrixFactorization { .. } => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Kgcn(c) => c.dim,
            ModelSpec::MatrixFactorization { dim } => *dim,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            ModelSpec::Kgcn(c) => c.architecture(),
            ModelSpec::MatrixFactorization { .. } => Architecture::MatrixFactorization,
        }
    }

    /// Parameter layout for `users` users and `entities` entities; the
    /// relation table and hop transforms exist only for KGCN.
    pub fn param_shape(&self, users: usize, entities: usize, relation_rows: usize) -> ParamShape {
        match self {
            ModelSpec::Kgcn(c) => ParamShape {
                users,
                entities,
                relations: relation_rows,
                dim: c.dim,
                hops: c.depth,
                hop_input_dim: c.architecture().hop_input_dim(c.dim),
            },
            ModelSpec::MatrixFactorization { dim } => ParamShape {
                users,
                entities,
                relations: 0,
                dim: *dim,
                hops: 0,
                hop_input_dim: *dim,
            },
        }
    }
}

/// π: importance of a relation to a user.
pub fn user_relation_score(user: &[f64], relation: &[f64]) -> f64 {
    dot(user, relation)
}

/// Attention weights over `K` children: softmax of user-relation scores,
/// or `1/K` each when `uniform`.
fn mixing_weights(user: &[f64], relation_vecs: &[&[f64]], uniform: bool, out: &mut [f64]) {
    if uniform {
        out.fill(1.0 / out.len() as f64);
    } else {
        for (w, r) in out.iter_mut().zip(relation_vecs) {
            *w = user_relation_score(user, r);
        }
        crate::numerics::softmax_in_place(out);
    }
}

/// User-biased linear combination of `K` neighbor representations.
pub fn neighborhood_mix(
    neighbor_reps: &[&[f64]],
    relation_vecs: &[&[f64]],
    user: &[f64],
    uniform_weights: bool,
) -> Result<Vec<f64>> {
    if neighbor_reps.len() != relation_vecs.len() || neighbor_reps.is_empty() {
        return Err(Error::Shape(format!(
            "{} neighbors with {} relations",
            neighbor_reps.len(),
            relation_vecs.len()
        )));
    }
    let mut weights = vec![0.0; neighbor_reps.len()];
    mixing_weights(user, relation_vecs, uniform_weights, &mut weights);
    let mut out = vec![0.0; user.len()];
    for (w, rep) in weights.iter().zip(neighbor_reps) {
        axpy(*w, rep, &mut out);
    }
    Ok(out)
}

fn aggregator_input(variant: Aggregator, self_rep: &[f64], mixed: &[f64], out: &mut Vec<f64>) {
    out.clear();
    match variant {
        Aggregator::Sum => out.extend(self_rep.iter().zip(mixed).map(|(a, b)| a + b)),
        Aggregator::Concat => {
            out.extend_from_slice(self_rep);
            out.extend_from_slice(mixed);
        }
        Aggregator::Neighbor => out.extend_from_slice(mixed),
    }
}

/// Combines an entity's own representation with its mixed neighborhood.
pub fn aggregate(
    self_rep: &[f64],
    mixed: &[f64],
    weight: &Matrix,
    bias: &[f64],
    activation: Activation,
    variant: Aggregator,
) -> Result<Vec<f64>> {
    if self_rep.len() != mixed.len() {
        return Err(Error::Shape(format!(
            "self representation of length {} with neighborhood of length {}",
            self_rep.len(),
            mixed.len()
        )));
    }
    let mut input = Vec::new();
    aggregator_input(variant, self_rep, mixed, &mut input);
    let pre = crate::numerics::affine(weight, &input, bias)?;
    Ok(crate::numerics::activate(&pre, activation))
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerState {
    user: usize,
    dim: usize,
    /// `reps[h][l]`, `h = 0..=H`, `l = 0..=H-h`.
    reps: Vec<Vec<Vec<f64>>>,
    /// `weights[h-1][l]`: `K^l × K` attention weights used in iteration h.
    weights: Vec<Vec<Vec<f64>>>,
    /// `mixed[h-1][l]`: `K^l × d` neighborhood representations.
    mixed: Vec<Vec<Vec<f64>>>,
    /// `pre[h-1][l]`: `K^l × d` pre-activations.
    pre: Vec<Vec<Vec<f64>>>,
    logit: f64,
    prediction: f64,
}

impl LayerState {
    pub fn prediction(&self) -> f64 {
        self.prediction
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// The user-specific item representation `v^u`.
    pub fn item_representation(&self) -> &[f64] {
        &self.reps[self.reps.len() - 1][0]
    }

    /// h-order representations of receptive-field layer `l`.
    pub fn representations(&self, h: usize, l: usize) -> &[f64] {
        &self.reps[h][l]
    }

    /// Smallest |pre-activation| over ReLU iterations; finite-difference
    /// checks are only meaningful away from the kink.
    pub fn min_relu_margin(&self) -> f64 {
        let relu_iters = self.pre.len().saturating_sub(1);
        self.pre[..relu_iters]
            .iter()
            .flatten()
            .flatten()
            .map(|x| x.abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

fn check_field(field: &ReceptiveField, config: &ModelConfig, params: &ParameterStore) -> Result<()> {
    if field.depth() != config.depth || field.sample_size() != config.sample_size {
        return Err(Error::Config(format!(
            "receptive field has depth {} and K={}, model expects H={} and K={}",
            field.depth(),
            field.sample_size(),
            config.depth,
            config.sample_size
        )));
    }
    if params.dim() != config.dim || params.hop_weights.len() != config.depth {
        return Err(Error::Shape(format!(
            "parameters have d={} and {} hops, model expects d={} and H={}",
            params.dim(),
            params.hop_weights.len(),
            config.dim,
            config.depth
        )));
    }
    Ok(())
}

/// Predicted engagement probability of `user` with the root item of `field`.
pub fn kgcn_forward(
    user: usize,
    field: &ReceptiveField,
    params: &ParameterStore,
    config: &ModelConfig,
) -> Result<(f64, LayerState)> {
    check_field(field, config, params)?;
    if user >= params.users.rows() {
        return Err(Error::Data(format!("user index {user} out of range")));
    }
    let d = config.dim;
    let k = config.sample_size;
    let depth = config.depth;
    let u = params.users.row(user);

    let mut reps = Vec::with_capacity(depth + 1);
    reps.push(
        field
            .entities
            .iter()
            .map(|layer| {
                let mut flat = Vec::with_capacity(layer.len() * d);
                for &e in layer {
                    flat.extend_from_slice(params.entities.row(e));
                }
                flat
            })
            .collect::<Vec<_>>(),
    );
    let mut all_weights = Vec::with_capacity(depth);
    let mut all_mixed = Vec::with_capacity(depth);
    let mut all_pre = Vec::with_capacity(depth);

    let mut input = Vec::with_capacity(2 * d);
    let mut relation_vecs: Vec<&[f64]> = Vec::with_capacity(k);
    for h in 1..=depth {
        let w = &params.hop_weights[h - 1];
        let b = &params.hop_biases[h - 1];
        let act = config.activation(h);
        let prev = &reps[h - 1];
        let mut out_layers = Vec::with_capacity(depth - h + 1);
        let mut weight_layers = Vec::with_capacity(depth - h + 1);
        let mut mixed_layers = Vec::with_capacity(depth - h + 1);
        let mut pre_layers = Vec::with_capacity(depth - h + 1);
        for l in 0..=depth - h {
            let n = field.entities[l].len();
            let children = &prev[l + 1];
            let mut out = vec![0.0; n * d];
            let mut weights = vec![0.0; n * k];
            let mut mixed = vec![0.0; n * d];
            let mut pre = vec![0.0; n * d];
            for j in 0..n {
                relation_vecs.clear();
                relation_vecs.extend(
                    field.relations[l + 1][j * k..(j + 1) * k]
                        .iter()
                        .map(|&r| params.relations.row(r)),
                );
                let wj = &mut weights[j * k..(j + 1) * k];
                mixing_weights(u, &relation_vecs, config.uniform_weights, wj);
                let mj = &mut mixed[j * d..(j + 1) * d];
                for (c, &wc) in wj.iter().enumerate() {
                    let child = &children[(j * k + c) * d..(j * k + c + 1) * d];
                    axpy(wc, child, mj);
                }
                aggregator_input(config.aggregator, &prev[l][j * d..(j + 1) * d], mj, &mut input);
                let pj = &mut pre[j * d..(j + 1) * d];
                w.mul_vec_into(&input, pj);
                for (p, bi) in pj.iter_mut().zip(b) {
                    *p += bi;
                }
                for (o, &p) in out[j * d..(j + 1) * d].iter_mut().zip(pj.iter()) {
                    *o = act.apply(p);
                }
            }
            if out.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("representation at hop {h}")));
            }
            out_layers.push(out);
            weight_layers.push(weights);
            mixed_layers.push(mixed);
            pre_layers.push(pre);
        }
        reps.push(out_layers);
        all_weights.push(weight_layers);
        all_mixed.push(mixed_layers);
        all_pre.push(pre_layers);
    }

    let logit = dot(u, &reps[depth][0]);
    if !logit.is_finite() {
        return Err(Error::NonFinite("prediction logit".into()));
    }
    let prediction = clamped_sigmoid(logit);
    Ok((
        prediction,
        LayerState {
            user,
            dim: d,
            reps,
            weights: all_weights,
            mixed: all_mixed,
            pre: all_pre,
            logit,
            prediction,
        },
    ))
}

/// `dŷ/dlogit`, zero where the output clamp is active.
fn prediction_slope(logit: f64) -> f64 {
    let s = sigmoid(logit);
    if s <= PROB_EPSILON || s >= 1.0 - PROB_EPSILON {
        0.0
    } else {
        s * (1.0 - s)
    }
}

/// Exact gradient of `upstream · ŷ` with respect to every parameter the
/// forward pass touched.
pub fn kgcn_backward(
    state: &LayerState,
    field: &ReceptiveField,
    params: &ParameterStore,
    config: &ModelConfig,
    upstream: f64,
) -> GradientStore {
    let mut grads = GradientStore::zeros_like(params);
    let dlogit = upstream * prediction_slope(state.logit);
    if dlogit == 0.0 {
        return grads;
    }
    let d = state.dim();
    let k = config.sample_size;
    let depth = config.depth;
    let u = params.users.row(state.user);

    let mut du = vec![0.0; d];
    axpy(dlogit, state.item_representation(), &mut du);
    let mut upper: Vec<Vec<f64>> = vec![u.iter().map(|x| dlogit * x).collect()];

    let mut input = Vec::with_capacity(2 * d);
    let mut dpre = vec![0.0; d];
    let in_dim = params.hop_weights[0].cols();
    let mut dinput = vec![0.0; in_dim];
    let mut child_scores = vec![0.0; k];
    for h in (1..=depth).rev() {
        let w = &params.hop_weights[h - 1];
        let act = config.activation(h);
        let prev = &state.reps[h - 1];
        let mut lower: Vec<Vec<f64>> = prev.iter().map(|layer| vec![0.0; layer.len()]).collect();
        for l in 0..=depth - h {
            let n = field.entities[l].len();
            let out = &state.reps[h][l];
            let pre = &state.pre[h - 1][l];
            let mixed = &state.mixed[h - 1][l];
            let weights = &state.weights[h - 1][l];
            for j in 0..n {
                let span = j * d..(j + 1) * d;
                for i in 0..d {
                    dpre[i] = upper[l][j * d + i] * act.derivative(pre[j * d + i], out[j * d + i]);
                }
                if dpre.iter().all(|&x| x == 0.0) {
                    continue;
                }
                aggregator_input(config.aggregator, &prev[l][span.clone()], &mixed[span.clone()], &mut input);
                grads.hop_weights[h - 1].add_outer(&dpre, &input);
                axpy(1.0, &dpre, &mut grads.hop_biases[h - 1]);
                dinput.fill(0.0);
                w.add_transpose_mul_vec(&dpre, &mut dinput);
                let dmixed: &[f64] = match config.aggregator {
                    Aggregator::Sum => {
                        axpy(1.0, &dinput, &mut lower[l][span.clone()]);
                        &dinput
                    }
                    Aggregator::Concat => {
                        axpy(1.0, &dinput[..d], &mut lower[l][span.clone()]);
                        &dinput[d..]
                    }
                    Aggregator::Neighbor => &dinput,
                };
                let wj = &weights[j * k..(j + 1) * k];
                for c in 0..k {
                    let at = (j * k + c) * d;
                    let child = &prev[l + 1][at..at + d];
                    child_scores[c] = dot(dmixed, child);
                    axpy(wj[c], dmixed, &mut lower[l + 1][at..at + d]);
                }
                if !config.uniform_weights {
                    let mean: f64 = wj.iter().zip(&child_scores).map(|(w, s)| w * s).sum();
                    for c in 0..k {
                        let dscore = wj[c] * (child_scores[c] - mean);
                        if dscore == 0.0 {
                            continue;
                        }
                        let rel = field.relations[l + 1][j * k + c];
                        axpy(dscore, params.relations.row(rel), &mut du);
                        axpy(dscore, u, grads.relation_row(rel));
                    }
                }
            }
        }
        upper = lower;
    }

    for (l, layer) in field.entities.iter().enumerate() {
        for (j, &e) in layer.iter().enumerate() {
            axpy(1.0, &upper[l][j * d..(j + 1) * d], grads.entity_row(e));
        }
    }
    axpy(1.0, &du, grads.user_row(state.user));
    grads
}

/// KG-free baseline: `sigmoid(u · e_item)`.
pub fn mf_forward(user: usize, item: usize, params: &ParameterStore) -> f64 {
    clamped_sigmoid(dot(params.users.row(user), params.entities.row(item)))
}

pub fn mf_backward(user: usize, item: usize, params: &ParameterStore, upstream: f64) -> GradientStore {
    let mut grads = GradientStore::zeros_like(params);
    let u = params.users.row(user);
    let v = params.entities.row(item);
    let dlogit = upstream * prediction_slope(dot(u, v));
    if dlogit != 0.0 {
        axpy(dlogit, v, grads.user_row(user));
        axpy(dlogit, u, grads.entity_row(item));
    }
    grads
}

/// A trained model ready to score (user, item) pairs.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParameterStore,
    pub sample: &'a NeighborSample,
}

impl<'a> Predictor<'a> {
    pub fn new(spec: &'a ModelSpec, params: &'a ParameterStore, sample: &'a NeighborSample) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shape(params.users.rows(), params.entities.rows(), params.relations.rows());
        if expected != params.shape() {
            return Err(Error::Shape(format!(
                "parameters {:?} do not match model {:?}",
                params.shape(),
                spec
            )));
        }
        if let ModelSpec::Kgcn(cfg) = spec {
            if sample.sample_size() != cfg.sample_size {
                return Err(Error::Config(format!(
                    "neighbor sample has K={}, model expects K={}",
                    sample.sample_size(),
                    cfg.sample_size
                )));
            }
            if sample.num_entities() > params.entities.rows() || sample.relation_rows() > params.relations.rows() {
                return Err(Error::Shape("knowledge graph is larger than the parameter tables".into()));
            }
        }
        Ok(Predictor { spec, params, sample })
    }

    pub fn num_users(&self) -> usize {
        self.params.users.rows()
    }

    fn check(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.params.users.rows() {
            return Err(Error::Data(format!("user index {user} out of range")));
        }
        let limit = match self.spec {
            ModelSpec::Kgcn(_) => self.sample.num_entities(),
            ModelSpec::MatrixFactorization { .. } => self.params.entities.rows(),
        };
        if item >= limit {
            return Err(Error::Data(format!("item index {item} out of range")));
        }
        Ok(())
    }

    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.check(user, item)?;
        match self.spec {
            ModelSpec::Kgcn(cfg) => {
                let field = receptive_field(self.sample, item, cfg.depth);
                kgcn_forward(user, &field, self.params, cfg).map(|(p, _)| p)
            }
            ModelSpec::MatrixFactorization { .. } => Ok(mf_forward(user, item, self.params)),
        }
    }

    /// Prediction, per-record cross-entropy, and its gradient.
    pub fn loss_and_gradient(&self, user: usize, item: usize, label: bool) -> Result<(f64, f64, GradientStore)> {
        self.check(user, item)?;
        let upstream = |p: f64| if label { -1.0 / p } else { 1.0 / (1.0 - p) };
        let loss = |p: f64| if label { -p.ln() } else { -(1.0 - p).ln() };
        match self.spec {
            ModelSpec::Kgcn(cfg) => {
                let field = receptive_field(self.sample, item, cfg.depth);
                let (p, state) = kgcn_forward(user, &field, self.params, cfg)?;
                let grads = kgcn_backward(&state, &field, self.params, cfg, upstream(p));
                Ok((p, loss(p), grads))
            }
            ModelSpec::MatrixFactorization { .. } => {
                let p = mf_forward(user, item, self.params);
                Ok((p, loss(p), mf_backward(user, item, self.params, upstream(p))))
            }
        }
    }
}

impl crate::eval::Scorer for Predictor<'_> {
    fn score(&self, user: usize, item: usize) -> Result<f64> {
        self.predict(user, item)
    }

    fn num_users(&self) -> usize {
        self.params.users.rows()
    }
}

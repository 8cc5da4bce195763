//! Test-only oracles, kept independent of the batched implementation.
#![allow(dead_code)]

use kgcn::kg::{build_adjacency, receptive_field, sample_neighborhood, KnowledgeGraph, NeighborSample, Triple};
use kgcn::model::{kgcn_forward, Aggregator, ModelConfig, ModelSpec, Predictor};
use kgcn::numerics::{finite_difference_gradient, init_params, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three entities, two relations: entity 0 links to 1 (relation 0) and
/// to 2 (relation 1). d = 2, K = 2, H = 1.
pub struct Fixture {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub sample: NeighborSample,
}

pub fn three_entity_fixture(aggregator: Aggregator) -> Fixture {
    let kg = KnowledgeGraph::from_triples(vec![Triple::new(0, 0, 1), Triple::new(0, 1, 2)]);
    let sample = sample_neighborhood(&build_adjacency(&kg, 3), 2, 0).unwrap();
    let config = ModelConfig {
        dim: 2,
        depth: 1,
        sample_size: 2,
        aggregator,
        uniform_weights: false,
    };
    let spec = ModelSpec::Kgcn(config);
    let mut params = ParameterStore::zeros(spec.param_shape(1, 3, 3));
    params.users.as_mut_slice().copy_from_slice(&[0.5, -0.3]);
    params
        .entities
        .as_mut_slice()
        .copy_from_slice(&[0.1, 0.2, -0.4, 0.3, 0.25, -0.15]);
    params
        .relations
        .as_mut_slice()
        .copy_from_slice(&[0.3, 0.7, -0.2, 0.4, 0.0, 0.0]);
    let w: &[f64] = match aggregator {
        Aggregator::Concat => &[0.9, -0.2, 0.4, 0.1, 0.3, 0.8, -0.5, 0.6],
        _ => &[0.9, -0.2, 0.3, 0.8],
    };
    params.hop_weights[0].as_mut_slice().copy_from_slice(w);
    params.hop_biases[0].copy_from_slice(&[0.05, -0.1]);
    Fixture { config, params, sample }
}

/// Straight-line evaluation of the one-hop model for the fixture, reading
/// neighbors from the graph definition rather than the sampler.
pub fn straight_line_prediction(fx: &Fixture, item: usize) -> f64 {
    let p = &fx.params;
    let u = [p.users.row(0)[0], p.users.row(0)[1]];
    let e = |i: usize| [p.entities.row(i)[0], p.entities.row(i)[1]];
    let r = |i: usize| [p.relations.row(i)[0], p.relations.row(i)[1]];
    // Full neighborhoods of the undirected graph; each has exactly K = 2
    // entries once the with-replacement rule is applied (1 and 2 have a
    // single neighbor, drawn twice).
    let neighbors: [(usize, usize); 2] = match item {
        0 => [(1, 0), (2, 1)],
        1 => [(0, 0), (0, 0)],
        2 => [(0, 1), (0, 1)],
        _ => unreachable!(),
    };
    let pi: Vec<f64> = neighbors
        .iter()
        .map(|&(_, rel)| u[0] * r(rel)[0] + u[1] * r(rel)[1])
        .collect();
    let z = pi[0].exp() + pi[1].exp();
    let w0 = pi[0].exp() / z;
    let w1 = pi[1].exp() / z;
    let (n0, n1) = (e(neighbors[0].0), e(neighbors[1].0));
    let mixed = [w0 * n0[0] + w1 * n1[0], w0 * n0[1] + w1 * n1[1]];
    let own = e(item);
    let wm = p.hop_weights[0].as_slice();
    let b = &p.hop_biases[0];
    let pre = match fx.config.aggregator {
        Aggregator::Sum => {
            let x = [own[0] + mixed[0], own[1] + mixed[1]];
            [wm[0] * x[0] + wm[1] * x[1] + b[0], wm[2] * x[0] + wm[3] * x[1] + b[1]]
        }
        Aggregator::Concat => {
            let x = [own[0], own[1], mixed[0], mixed[1]];
            [
                wm[0] * x[0] + wm[1] * x[1] + wm[2] * x[2] + wm[3] * x[3] + b[0],
                wm[4] * x[0] + wm[5] * x[1] + wm[6] * x[2] + wm[7] * x[3] + b[1],
            ]
        }
        Aggregator::Neighbor => [
            wm[0] * mixed[0] + wm[1] * mixed[1] + b[0],
            wm[2] * mixed[0] + wm[3] * mixed[1] + b[1],
        ],
    };
    let v = [pre[0].tanh(), pre[1].tanh()];
    let logit = u[0] * v[0] + u[1] * v[1];
    1.0 / (1.0 + (-logit).exp())
}

pub fn batched_prediction(fx: &Fixture, item: usize) -> f64 {
    let field = receptive_field(&fx.sample, item, 1);
    kgcn_forward(0, &field, &fx.params, &fx.config).unwrap().0
}

/// Relative error with a floor on the denominator: central differences at
/// ε = 1e-6 carry ~1e-10 absolute round-off, so coordinates with
/// near-zero gradients are compared on an absolute scale of `GRAD_FLOOR`.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub struct GradCheck {
    pub max_relative_error: f64,
    pub coordinates: usize,
}

/// Builds a random tiny instance and compares the analytic gradient of
/// the per-record cross-entropy against central differences. Instances
/// whose ReLU pre-activations sit within 1e-4 of the kink are redrawn.
pub fn gradient_check(aggregator: Aggregator, seed: u64) -> GradCheck {
    let mut attempt = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(attempt));
        attempt += 1;
        let dim = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=3);
        let depth = rng.gen_range(1..=2);
        let entities = 6;
        let relations = 3;
        let triples: Vec<Triple> = (0..rng.gen_range(3..9))
            .map(|_| Triple::new(rng.gen_range(0..5), rng.gen_range(0..relations), rng.gen_range(0..5)))
            .collect();
        let mut kg = KnowledgeGraph::from_triples(triples);
        kg.num_relations = relations;
        let sample = sample_neighborhood(&build_adjacency(&kg, entities), k, rng.gen()).unwrap();
        let config = ModelConfig {
            dim,
            depth,
            sample_size: k,
            aggregator,
            uniform_weights: false,
        };
        let spec = ModelSpec::Kgcn(config);
        let mut params = init_params(spec.param_shape(2, entities, sample.relation_rows()), rng.gen());
        for id in params.block_ids() {
            for x in params.block_mut(id) {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        let user = rng.gen_range(0..2);
        let item = rng.gen_range(0..entities);
        let label = rng.gen_bool(0.5);

        let field = receptive_field(&sample, item, depth);
        let (_, state) = kgcn_forward(user, &field, &params, &config).unwrap();
        if state.min_relu_margin() < 1e-4 {
            continue;
        }
        let predictor = Predictor::new(&spec, &params, &sample).unwrap();
        let (_, _, analytic) = predictor.loss_and_gradient(user, item, label).unwrap();
        let loss = |p: &ParameterStore| {
            let (y, _) = kgcn_forward(user, &field, p, &config).unwrap();
            if label {
                -y.ln()
            } else {
                -(1.0 - y).ln()
            }
        };
        let numeric = finite_difference_gradient(loss, &params, 1e-6);
        let mut worst: f64 = 0.0;
        let mut coordinates = 0;
        for id in params.block_ids() {
            for i in 0..params.block(id).len() {
                worst = worst.max(relative_error(analytic.get(id, i), numeric.get(id, i)));
                coordinates += 1;
            }
        }
        return GradCheck {
            max_relative_error: worst,
            coordinates,
        };
    }
}

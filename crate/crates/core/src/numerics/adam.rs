use super::params::{Block, GradientStore, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators, one dense buffer per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    blocks: Vec<Block>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterStore, config: AdamConfig) -> Self {
        let blocks = params.block_ids();
        let first: Vec<Vec<f64>> = blocks
            .iter()
            .map(|&b| vec![0.0; params.block(b).len()])
            .collect();
        AdamState {
            config,
            step: 0,
            blocks,
            second: first.clone(),
            first,
        }
    }

    pub fn second_moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.second.iter().flatten().copied()
    }
}

/// One Adam update with bias correction. The L2 penalty `λ‖θ‖²` enters as
/// `2λθ` added to every parameter's gradient before the moment updates.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &GradientStore,
    state: &mut AdamState,
    learning_rate: f64,
    l2_weight: f64,
) -> Result<()> {
    if state.blocks != params.block_ids() {
        return Err(Error::Shape(
            "optimizer state does not match parameter layout".into(),
        ));
    }
    for &id in &state.blocks {
        if grads.stored_values(id).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {id}")));
        }
    }

    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    for (i, &id) in state.blocks.iter().enumerate() {
        let theta = params.block_mut(id);
        let g = grads.dense_block(id, theta.len());
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..theta.len() {
            let gj = g[j] + 2.0 * l2_weight * theta[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            theta[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

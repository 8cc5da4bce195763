use super::params::{Block, GradientStore, ParameterStore};

/// Central-difference gradient of `loss` at `params`, one coordinate at a
/// time. Every table row is populated in the result.
pub fn finite_difference_gradient<F>(loss: F, params: &ParameterStore, epsilon: f64) -> GradientStore
where
    F: Fn(&ParameterStore) -> f64,
{
    let mut grad = GradientStore::zeros_like(params);
    let dim = params.dim();
    let mut probe = params.clone();
    for id in params.block_ids() {
        let len = params.block(id).len();
        let mut values = vec![0.0; len];
        for (i, value) in values.iter_mut().enumerate() {
            let original = probe.block(id)[i];
            probe.block_mut(id)[i] = original + epsilon;
            let up = loss(&probe);
            probe.block_mut(id)[i] = original - epsilon;
            let down = loss(&probe);
            probe.block_mut(id)[i] = original;
            *value = (up - down) / (2.0 * epsilon);
        }
        match id {
            Block::Users | Block::Entities | Block::Relations => {
                let table = match id {
                    Block::Users => &mut grad.users,
                    Block::Entities => &mut grad.entities,
                    _ => &mut grad.relations,
                };
                if dim > 0 {
                    for (row, chunk) in values.chunks(dim).enumerate() {
                        table.insert(row, chunk.to_vec());
                    }
                }
            }
            Block::HopWeight(h) => grad.hop_weights[h].as_mut_slice().copy_from_slice(&values),
            Block::HopBias(h) => grad.hop_biases[h] = values,
        }
    }
    grad
}

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;

/// Table sizes for a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    pub users: usize,
    pub entities: usize,
    /// Rows of the relation table, including the reserved self-relation.
    pub relations: usize,
    pub dim: usize,
    pub hops: usize,
    /// Input width of each hop transform: `dim`, or `2 * dim` for concat.
    pub hop_input_dim: usize,
}

/// Identifies one contiguous block of trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    Users,
    Entities,
    Relations,
    HopWeight(usize),
    HopBias(usize),
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Users => write!(f, "user embeddings"),
            Block::Entities => write!(f, "entity embeddings"),
            Block::Relations => write!(f, "relation embeddings"),
            Block::HopWeight(h) => write!(f, "hop {} weight", h + 1),
            Block::HopBias(h) => write!(f, "hop {} bias", h + 1),
        }
    }
}

/// All trainable parameters: embedding tables plus one transform per hop.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub users: Matrix,
    pub entities: Matrix,
    pub relations: Matrix,
    pub hop_weights: Vec<Matrix>,
    pub hop_biases: Vec<Vec<f64>>,
}

impl ParameterStore {
    pub fn zeros(shape: ParamShape) -> Self {
        ParameterStore {
            users: Matrix::zeros(shape.users, shape.dim),
            entities: Matrix::zeros(shape.entities, shape.dim),
            relations: Matrix::zeros(shape.relations, shape.dim),
            hop_weights: (0..shape.hops)
                .map(|_| Matrix::zeros(shape.dim, shape.hop_input_dim))
                .collect(),
            hop_biases: vec![vec![0.0; shape.dim]; shape.hops],
        }
    }

    pub fn shape(&self) -> ParamShape {
        ParamShape {
            users: self.users.rows(),
            entities: self.entities.rows(),
            relations: self.relations.rows(),
            dim: self.users.cols(),
            hops: self.hop_weights.len(),
            hop_input_dim: self
                .hop_weights
                .first()
                .map_or(self.users.cols(), Matrix::cols),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn block_ids(&self) -> Vec<Block> {
        let mut ids = vec![Block::Users, Block::Entities, Block::Relations];
        for h in 0..self.hop_weights.len() {
            ids.push(Block::HopWeight(h));
            ids.push(Block::HopBias(h));
        }
        ids
    }

    pub fn block(&self, id: Block) -> &[f64] {
        match id {
            Block::Users => self.users.as_slice(),
            Block::Entities => self.entities.as_slice(),
            Block::Relations => self.relations.as_slice(),
            Block::HopWeight(h) => self.hop_weights[h].as_slice(),
            Block::HopBias(h) => &self.hop_biases[h],
        }
    }

    pub fn block_mut(&mut self, id: Block) -> &mut [f64] {
        match id {
            Block::Users => self.users.as_mut_slice(),
            Block::Entities => self.entities.as_mut_slice(),
            Block::Relations => self.relations.as_mut_slice(),
            Block::HopWeight(h) => self.hop_weights[h].as_mut_slice(),
            Block::HopBias(h) => &mut self.hop_biases[h],
        }
    }

    /// Sum of squares over every trainable parameter.
    pub fn squared_norm(&self) -> f64 {
        self.block_ids()
            .into_iter()
            .map(|id| self.block(id).iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.block_ids()
            .into_iter()
            .map(|id| self.block(id).len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.block_ids()
            .into_iter()
            .all(|id| self.block(id).iter().all(|x| x.is_finite()))
    }
}

/// Glorot-uniform initialization of every table and hop weight; biases zero.
pub fn init_params(shape: ParamShape, seed: u64) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::zeros(shape);
    let fill = |m: &mut Matrix, rng: &mut ChaCha8Rng| {
        let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
        for x in m.as_mut_slice() {
            *x = rng.gen_range(-bound..=bound);
        }
    };
    fill(&mut store.users, &mut rng);
    fill(&mut store.entities, &mut rng);
    fill(&mut store.relations, &mut rng);
    for w in &mut store.hop_weights {
        fill(w, &mut rng);
    }
    store
}

/// Gradient with the layout of a [`ParameterStore`]. Embedding tables are
/// accumulated sparsely by row; absent rows have exactly zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStore {
    dim: usize,
    pub users: BTreeMap<usize, Vec<f64>>,
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, Vec<f64>>,
    pub hop_weights: Vec<Matrix>,
    pub hop_biases: Vec<Vec<f64>>,
}

impl GradientStore {
    pub fn zeros_like(params: &ParameterStore) -> Self {
        let shape = params.shape();
        GradientStore {
            dim: shape.dim,
            users: BTreeMap::new(),
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
            hop_weights: (0..shape.hops)
                .map(|_| Matrix::zeros(shape.dim, shape.hop_input_dim))
                .collect(),
            hop_biases: vec![vec![0.0; shape.dim]; shape.hops],
        }
    }

    fn table(&self, id: Block) -> Option<&BTreeMap<usize, Vec<f64>>> {
        match id {
            Block::Users => Some(&self.users),
            Block::Entities => Some(&self.entities),
            Block::Relations => Some(&self.relations),
            _ => None,
        }
    }

    pub(crate) fn user_row(&mut self, row: usize) -> &mut [f64] {
        let dim = self.dim;
        self.users.entry(row).or_insert_with(|| vec![0.0; dim])
    }

    pub(crate) fn entity_row(&mut self, row: usize) -> &mut [f64] {
        let dim = self.dim;
        self.entities.entry(row).or_insert_with(|| vec![0.0; dim])
    }

    pub(crate) fn relation_row(&mut self, row: usize) -> &mut [f64] {
        let dim = self.dim;
        self.relations.entry(row).or_insert_with(|| vec![0.0; dim])
    }

    /// Adds `other` into `self`. Summation order is fixed by the caller's
    /// merge order, which makes batch reductions reproducible.
    pub fn merge(&mut self, other: &GradientStore) {
        fn merge_table(dst: &mut BTreeMap<usize, Vec<f64>>, src: &BTreeMap<usize, Vec<f64>>) {
            for (&row, values) in src {
                match dst.get_mut(&row) {
                    Some(acc) => super::axpy(1.0, values, acc),
                    None => {
                        dst.insert(row, values.clone());
                    }
                }
            }
        }
        merge_table(&mut self.users, &other.users);
        merge_table(&mut self.entities, &other.entities);
        merge_table(&mut self.relations, &other.relations);
        for (a, b) in self.hop_weights.iter_mut().zip(&other.hop_weights) {
            super::axpy(1.0, b.as_slice(), a.as_mut_slice());
        }
        for (a, b) in self.hop_biases.iter_mut().zip(&other.hop_biases) {
            super::axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let tables = [&mut self.users, &mut self.entities, &mut self.relations];
        for table in tables {
            for row in table.values_mut() {
                row.iter_mut().for_each(|x| *x *= factor);
            }
        }
        for w in &mut self.hop_weights {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
        for b in &mut self.hop_biases {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Gradient value at flat index `index` of block `id`.
    pub fn get(&self, id: Block, index: usize) -> f64 {
        match self.table(id) {
            Some(table) => table
                .get(&(index / self.dim))
                .map_or(0.0, |row| row[index % self.dim]),
            None => match id {
                Block::HopWeight(h) => self.hop_weights[h].as_slice()[index],
                Block::HopBias(h) => self.hop_biases[h][index],
                _ => unreachable!(),
            },
        }
    }

    /// Dense copy of block `id`, `len` values long.
    pub fn dense_block(&self, id: Block, len: usize) -> Vec<f64> {
        match self.table(id) {
            Some(table) => {
                let mut out = vec![0.0; len];
                for (&row, values) in table {
                    out[row * self.dim..(row + 1) * self.dim].copy_from_slice(values);
                }
                out
            }
            None => match id {
                Block::HopWeight(h) => self.hop_weights[h].as_slice().to_vec(),
                Block::HopBias(h) => self.hop_biases[h].clone(),
                _ => unreachable!(),
            },
        }
    }

    /// Iterates over every stored value of block `id` (sparse for tables).
    pub fn stored_values(&self, id: Block) -> Box<dyn Iterator<Item = f64> + '_> {
        match self.table(id) {
            Some(table) => Box::new(table.values().flat_map(|r| r.iter().copied())),
            None => match id {
                Block::HopWeight(h) => Box::new(self.hop_weights[h].as_slice().iter().copied()),
                Block::HopBias(h) => Box::new(self.hop_biases[h].iter().copied()),
                _ => unreachable!(),
            },
        }
    }

    pub fn is_zero(&self, blocks: &[Block]) -> bool {
        blocks
            .iter()
            .all(|&id| self.stored_values(id).all(|x| x == 0.0))
    }
}

//! Knowledge-graph triples, the undirected adjacency, fixed-size neighbor
//! sampling and layered receptive fields.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub triples: Vec<Triple>,
    pub num_entities: usize,
    pub num_relations: usize,
}

impl KnowledgeGraph {
    /// Entity and relation counts are `1 + max index` seen in `triples`.
    pub fn from_triples(triples: Vec<Triple>) -> Self {
        let num_entities = triples
            .iter()
            .map(|t| t.head.max(t.tail) + 1)
            .max()
            .unwrap_or(0);
        let num_relations = triples.iter().map(|t| t.relation + 1).max().unwrap_or(0);
        KnowledgeGraph {
            triples,
            num_entities,
            num_relations,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for t in &self.triples {
            writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `head<TAB>relation<TAB>tail` lines of non-negative integers.
pub fn load_kg(path: &Path) -> Result<KnowledgeGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_kg(BufReader::new(file), path)
}

pub fn parse_kg<R: BufRead>(reader: R, path: &Path) -> Result<KnowledgeGraph> {
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let mut ids = [0usize; 3];
        for (slot, field) in ids.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| {
                Error::parse(path, i + 1, format!("`{field}` is not a non-negative integer"))
            })?;
        }
        triples.push(Triple::new(ids[0], ids[1], ids[2]));
    }
    Ok(KnowledgeGraph::from_triples(triples))
}

/// Undirected adjacency: every triple is visible from both endpoints under
/// the same relation index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    lists: Vec<Vec<(usize, usize)>>,
    num_relations: usize,
}

impl Adjacency {
    pub fn neighbors(&self, entity: usize) -> &[(usize, usize)] {
        &self.lists[entity]
    }

    pub fn num_entities(&self) -> usize {
        self.lists.len()
    }

    /// Relation count of the source graph; also the index reserved for the
    /// self-relation of isolated entities.
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }
}

/// Builds the adjacency over `num_entities` entities (at least as many as
/// the triples reference). Duplicate triples are kept.
pub fn build_adjacency(kg: &KnowledgeGraph, num_entities: usize) -> Adjacency {
    let n = num_entities.max(kg.num_entities);
    let mut lists = vec![Vec::new(); n];
    for t in &kg.triples {
        lists[t.head].push((t.tail, t.relation));
        lists[t.tail].push((t.head, t.relation));
    }
    Adjacency {
        lists,
        num_relations: kg.num_relations,
    }
}

/// The fixed mapping from each entity to exactly `K` (neighbor, relation)
/// pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSample {
    sample_size: usize,
    seed: u64,
    self_relation: usize,
    pairs: Vec<(usize, usize)>,
}

impl NeighborSample {
    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_entities(&self) -> usize {
        self.pairs.len() / self.sample_size
    }

    pub fn self_relation(&self) -> usize {
        self.self_relation
    }

    /// Rows needed in the relation table, self-relation included.
    pub fn relation_rows(&self) -> usize {
        self.self_relation + 1
    }

    pub fn of(&self, entity: usize) -> &[(usize, usize)] {
        &self.pairs[entity * self.sample_size..(entity + 1) * self.sample_size]
    }
}

/// Samples `K` neighbors per entity: without replacement when the entity
/// has at least `K`, with replacement when it has fewer, and `K` self-pairs
/// under the reserved relation when it has none.
pub fn sample_neighborhood(adjacency: &Adjacency, k: usize, seed: u64) -> Result<NeighborSample> {
    if k == 0 {
        return Err(Error::Config("neighbor sample size K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let self_relation = adjacency.num_relations();
    let mut pairs = Vec::with_capacity(adjacency.num_entities() * k);
    for entity in 0..adjacency.num_entities() {
        let neighbors = adjacency.neighbors(entity);
        match neighbors.len() {
            0 => pairs.extend(std::iter::repeat_n((entity, self_relation), k)),
            n if n >= k => pairs.extend(index::sample(&mut rng, n, k).into_iter().map(|i| neighbors[i])),
            n => pairs.extend((0..k).map(|_| neighbors[rng.gen_range(0..n)])),
        }
    }
    Ok(NeighborSample {
        sample_size: k,
        seed,
        self_relation,
        pairs,
    })
}

/// Fixed-shape H-hop expansion of one item. Entry `j` of layer `h` has its
/// sampled children at entries `j*K .. j*K + K` of layer `h + 1`; the
/// relation arrays record the edge from parent to child (layer 0 holds the
/// self-relation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveField {
    sample_size: usize,
    pub entities: Vec<Vec<usize>>,
    pub relations: Vec<Vec<usize>>,
}

impl ReceptiveField {
    pub fn root(&self) -> usize {
        self.entities[0][0]
    }

    pub fn depth(&self) -> usize {
        self.entities.len() - 1
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn total_entries(&self) -> usize {
        self.entities.iter().map(Vec::len).sum()
    }
}

pub fn receptive_field(sample: &NeighborSample, item: usize, depth: usize) -> ReceptiveField {
    let k = sample.sample_size();
    let mut entities = vec![vec![item]];
    let mut relations = vec![vec![sample.self_relation()]];
    for h in 0..depth {
        let mut next_entities = Vec::with_capacity(entities[h].len() * k);
        let mut next_relations = Vec::with_capacity(entities[h].len() * k);
        for &parent in &entities[h] {
            for &(child, relation) in sample.of(parent) {
                next_entities.push(child);
                next_relations.push(relation);
            }
        }
        entities.push(next_entities);
        relations.push(next_relations);
    }
    ReceptiveField {
        sample_size: k,
        entities,
        relations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kg(triples: &[(usize, usize, usize)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect())
    }

    #[test]
    fn parses_triples_and_counts() {
        let g = parse_kg("0\t5\t1\n".as_bytes(), Path::new("kg")).unwrap();
        assert_eq!(g.triples, vec![Triple::new(0, 5, 1)]);
        let empty = parse_kg("".as_bytes(), Path::new("kg")).unwrap();
        assert!(empty.triples.is_empty());
        assert_eq!(empty.num_entities, 0);
        let g = kg(&[(0, 0, 1), (2, 1, 0)]);
        assert_eq!((g.num_entities, g.num_relations), (3, 2));
    }

    #[test]
    fn rejects_malformed_lines_with_line_number() {
        let err = parse_kg("0\t1\t2\n3\t-1\t4\n".as_bytes(), Path::new("kg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_kg("0\t1\n".as_bytes(), Path::new("kg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn adjacency_is_undirected() {
        let adj = build_adjacency(&kg(&[(0, 5, 1)]), 2);
        assert_eq!(adj.neighbors(0), &[(1, 5)]);
        assert_eq!(adj.neighbors(1), &[(0, 5)]);
        let adj = build_adjacency(&kg(&[]), 3);
        assert!((0..3).all(|e| adj.neighbors(e).is_empty()));
        let adj = build_adjacency(&kg(&[(0, 1, 0)]), 1);
        assert_eq!(adj.neighbors(0), &[(0, 1), (0, 1)]);
    }

    #[test]
    fn duplicate_triples_are_kept() {
        let adj = build_adjacency(&kg(&[(0, 0, 1), (0, 0, 1), (0, 1, 2)]), 3);
        assert_eq!(adj.neighbors(0), &[(1, 0), (1, 0), (2, 1)]);
        assert_eq!(adj.neighbors(1), &[(0, 0), (0, 0)]);
    }

    #[test]
    fn sampling_rules() {
        let star: Vec<_> = (1..=3).map(|t| (0, t - 1, t)).collect();
        let adj = build_adjacency(&kg(&star), 4);
        let s = sample_neighborhood(&adj, 8, 1).unwrap();
        assert_eq!(s.of(0).len(), 8);
        assert!(s.of(0).iter().all(|p| adj.neighbors(0).contains(p)));

        let star: Vec<_> = (1..=8).map(|t| (0, 0, t)).collect();
        let adj = build_adjacency(&kg(&star), 9);
        let s = sample_neighborhood(&adj, 8, 3).unwrap();
        let mut got: Vec<_> = s.of(0).to_vec();
        got.sort();
        let mut want = adj.neighbors(0).to_vec();
        want.sort();
        assert_eq!(got, want);

        let adj = build_adjacency(&kg(&[(0, 0, 1)]), 3);
        let s = sample_neighborhood(&adj, 4, 0).unwrap();
        assert_eq!(s.of(2), &[(2, 1); 4]);
        assert_eq!(s.relation_rows(), 2);

        assert!(sample_neighborhood(&adj, 0, 0).is_err());
    }

    #[test]
    fn receptive_field_shapes() {
        let adj = build_adjacency(&kg(&[(0, 0, 1), (0, 1, 2), (1, 0, 2)]), 3);
        let s = sample_neighborhood(&adj, 2, 4).unwrap();
        let f = receptive_field(&s, 0, 0);
        assert_eq!(f.entities, vec![vec![0]]);
        let f = receptive_field(&s, 0, 2);
        let sizes: Vec<_> = f.entities.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 2, 4]);
        assert_eq!(f.total_entries(), 7);
    }

    #[test]
    fn single_neighbor_is_repeated() {
        let adj = build_adjacency(&kg(&[(0, 0, 1)]), 2);
        let s = sample_neighborhood(&adj, 3, 99).unwrap();
        let f = receptive_field(&s, 0, 1);
        assert_eq!(f.entities[1], vec![1, 1, 1]);
        assert_eq!(f.relations[1], vec![0, 0, 0]);
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, usize)>)> {
        (1usize..20).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0..n, 0usize..4, 0..n), 0..40),
            )
        })
    }

    proptest! {
        #[test]
        fn adjacency_symmetry((n, triples) in arb_graph()) {
            let adj = build_adjacency(&kg(&triples), n);
            for h in 0..adj.num_entities() {
                for &(t, r) in adj.neighbors(h) {
                    let back = adj.neighbors(t).iter().filter(|&&p| p == (h, r)).count();
                    let fwd = adj.neighbors(h).iter().filter(|&&p| p == (t, r)).count();
                    prop_assert!(back >= 1);
                    if h != t {
                        prop_assert_eq!(back, fwd);
                    }
                }
            }
        }

        #[test]
        fn receptive_field_shape_law_and_membership(
            (n, triples) in arb_graph(),
            k in prop::sample::select(vec![1usize, 2, 4, 8]),
            depth in 0usize..=3,
            seed in any::<u64>(),
        ) {
            let adj = build_adjacency(&kg(&triples), n);
            let s = sample_neighborhood(&adj, k, seed).unwrap();
            prop_assert_eq!(&s, &sample_neighborhood(&adj, k, seed).unwrap());
            let item = seed as usize % n;
            let f = receptive_field(&s, item, depth);
            prop_assert_eq!(f.entities.len(), depth + 1);
            for h in 0..=depth {
                prop_assert_eq!(f.entities[h].len(), k.pow(h as u32));
                prop_assert_eq!(f.relations[h].len(), k.pow(h as u32));
            }
            for h in 0..depth {
                for (j, &parent) in f.entities[h].iter().enumerate() {
                    for c in 0..k {
                        let pair = (f.entities[h + 1][j * k + c], f.relations[h + 1][j * k + c]);
                        prop_assert!(s.of(parent).contains(&pair));
                        let legal = adj.neighbors(parent).contains(&pair)
                            || (adj.neighbors(parent).is_empty() && pair == (parent, s.self_relation()));
                        prop_assert!(legal);
                    }
                }
            }
        }
    }
}

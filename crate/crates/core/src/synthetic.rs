//! Generated datasets whose labels depend on shared KG attributes.
//!
//! Items `0..items` each link to one genre entity (relation 0) and one era
//! entity (relation 1). Every user picks a seed item and likes exactly the
//! items sharing its genre; eras carry no signal. Positives are a sample
//! of the liked items, negatives are sampled unwatched items.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_unwatched_negatives, Interaction, InteractionDataset};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    pub eras: usize,
    pub positives_per_user: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 300,
            items: 1000,
            genres: 50,
            eras: 10,
            positives_per_user: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: InteractionDataset,
    pub kg: KnowledgeGraph,
    /// Genre index of every item.
    pub item_genre: Vec<usize>,
    /// Genre each user likes.
    pub user_genre: Vec<usize>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.users == 0 || cfg.items == 0 || cfg.genres == 0 || cfg.eras == 0 || cfg.positives_per_user == 0 {
        return Err(Error::Config(format!("degenerate synthetic config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let item_genre: Vec<usize> = (0..cfg.items).map(|_| rng.gen_range(0..cfg.genres)).collect();
    let item_era: Vec<usize> = (0..cfg.items).map(|_| rng.gen_range(0..cfg.eras)).collect();

    let genre_entity = |g: usize| cfg.items + g;
    let era_entity = |e: usize| cfg.items + cfg.genres + e;
    let mut triples = Vec::with_capacity(2 * cfg.items);
    for item in 0..cfg.items {
        triples.push(Triple::new(item, 0, genre_entity(item_genre[item])));
        triples.push(Triple::new(item, 1, era_entity(item_era[item])));
    }
    let mut kg = KnowledgeGraph::from_triples(triples);
    kg.num_entities = cfg.items + cfg.genres + cfg.eras;

    let mut user_genre = Vec::with_capacity(cfg.users);
    let mut positives: Vec<BTreeSet<usize>> = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let seed_item = rng.gen_range(0..cfg.items);
        let genre = item_genre[seed_item];
        let liked: Vec<usize> = (0..cfg.items).filter(|&i| item_genre[i] == genre).collect();
        let take = cfg.positives_per_user.min(liked.len());
        positives.push(index::sample(&mut rng, liked.len(), take).into_iter().map(|i| liked[i]).collect());
        user_genre.push(genre);
    }
    let negatives = sample_unwatched_negatives(&positives, cfg.items, rng.gen());
    let mut records: Vec<Interaction> = positives
        .iter()
        .enumerate()
        .flat_map(|(user, items)| items.iter().map(move |&item| Interaction { user, item, label: true }))
        .collect();
    records.extend(negatives);
    records.sort_by_key(|r| (r.user, !r.label, r.item));
    let dataset = InteractionDataset::new(records, cfg.users, cfg.items)?;
    Ok(SyntheticData {
        dataset,
        kg,
        item_genre,
        user_genre,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_genres() {
        let cfg = SyntheticConfig {
            users: 20,
            items: 60,
            genres: 6,
            eras: 3,
            positives_per_user: 4,
            seed: 1,
        };
        let data = generate(&cfg).unwrap();
        assert_eq!(data.kg.triples.len(), 120);
        assert_eq!(data.kg.num_entities, 69);
        for r in data.dataset.records.iter().filter(|r| r.label) {
            assert_eq!(data.item_genre[r.item], data.user_genre[r.user]);
        }
        assert_eq!(data.dataset.num_positives() * 2, data.dataset.len());
    }
}

//! Rating ingestion: explicit ratings to implicit feedback, unwatched
//! negatives, dense re-indexing against the item→entity mapping, and the
//! train/validation/test split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
    DoubleColon,
    Semicolon,
    Whitespace,
}

impl Delimiter {
    fn split(self, line: &str) -> Vec<&str> {
        let fields: Vec<&str> = match self {
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
            Delimiter::DoubleColon => line.split("::").collect(),
            Delimiter::Semicolon => line.split(';').collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        };
        fields
            .into_iter()
            .map(|f| f.trim().trim_matches('"'))
            .collect()
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "\t" | "\\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            "::" | "double-colon" => Ok(Delimiter::DoubleColon),
            "semicolon" | ";" => Ok(Delimiter::Semicolon),
            "whitespace" | "space" => Ok(Delimiter::Whitespace),
            other => Err(Error::Config(format!("unknown delimiter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingsFormat {
    pub delimiter: Delimiter,
    /// Skip the first line (column names).
    pub skip_header: bool,
}

impl Default for RatingsFormat {
    fn default() -> Self {
        RatingsFormat {
            delimiter: Delimiter::Tab,
            skip_header: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

pub fn load_ratings(path: &Path, format: RatingsFormat) -> Result<Vec<RawRating>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(BufReader::new(file), path, format)
}

/// One rating per non-empty line; fields beyond the third (timestamps)
/// are ignored.
pub fn parse_ratings<R: BufRead>(reader: R, path: &Path, format: RatingsFormat) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if (format.skip_header && i == 0) || line.trim().is_empty() {
            continue;
        }
        let fields = format.delimiter.split(&line);
        if fields.len() < 3 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected at least 3 fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(path, i + 1, "empty user or item key"));
        }
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("`{}` is not a number", fields[2])))?;
        if !rating.is_finite() {
            return Err(Error::parse(path, i + 1, "rating is not finite"));
        }
        out.push(RawRating {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating,
        });
    }
    Ok(out)
}

/// Positive (user, item) pairs: rating ≥ threshold, or every pair when no
/// threshold is set. Repeated pairs keep their maximum rating and appear
/// once, in order of first occurrence.
pub fn implicitize(ratings: &[RawRating], threshold: Option<f64>) -> Vec<(String, String)> {
    let mut best: HashMap<(&str, &str), f64> = HashMap::new();
    let mut order = Vec::new();
    for r in ratings {
        let key = (r.user.as_str(), r.item.as_str());
        match best.get_mut(&key) {
            Some(v) => *v = v.max(r.rating),
            None => {
                best.insert(key, r.rating);
                order.push(key);
            }
        }
    }
    order
        .into_iter()
        .filter(|key| threshold.is_none_or(|t| best[key] >= t))
        .map(|(u, i)| (u.to_string(), i.to_string()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub label: bool,
}

/// For each user, as many items as they have positives, drawn uniformly
/// without replacement from the items they have no positive for.
pub fn sample_unwatched_negatives(positives: &[BTreeSet<usize>], num_items: usize, seed: u64) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (user, seen) in positives.iter().enumerate() {
        if seen.is_empty() {
            continue;
        }
        let unwatched: Vec<usize> = (0..num_items).filter(|i| !seen.contains(i)).collect();
        let take = seen.len().min(unwatched.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, unwatched.len(), take)
            .into_iter()
            .map(|i| unwatched[i])
            .collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|item| Interaction {
            user,
            item,
            label: false,
        }));
    }
    out
}

/// Labeled records over dense user and item indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InteractionDataset {
    pub records: Vec<Interaction>,
    pub num_users: usize,
    pub num_items: usize,
}

impl InteractionDataset {
    pub fn new(records: Vec<Interaction>, num_users: usize, num_items: usize) -> Result<Self> {
        let ds = InteractionDataset {
            records,
            num_users,
            num_items,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.user >= self.num_users || r.item >= self.num_items {
                return Err(Error::Data(format!(
                    "record ({}, {}) outside {} users x {} items",
                    r.user, r.item, self.num_users, self.num_items
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Data(format!("duplicate record for user {} item {}", r.user, r.item)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    /// Positive item sets indexed by user.
    pub fn positives_by_user(&self) -> Vec<HashSet<usize>> {
        let mut out = vec![HashSet::new(); self.num_users];
        for r in self.records.iter().filter(|r| r.label) {
            out[r.user].insert(r.item);
        }
        out
    }

    fn subset(&self, records: Vec<Interaction>) -> Self {
        InteractionDataset {
            records,
            num_users: self.num_users,
            num_items: self.num_items,
        }
    }

    /// Writes `user<TAB>item<TAB>label` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            writeln!(out, "{}\t{}\t{}", r.user, r.item, u8::from(r.label)).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a final ratings file. User and item counts are `1 + max index`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, i + 1, format!("expected 3 fields, found {}", fields.len())));
            }
            let num = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("`{s}` is not a non-negative integer")))
            };
            let label = match fields[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(path, i + 1, format!("label `{other}` is not 0 or 1"))),
            };
            records.push(Interaction {
                user: num(fields[0])?,
                item: num(fields[1])?,
                label,
            });
        }
        let num_users = records.iter().map(|r| r.user + 1).max().unwrap_or(0);
        let num_items = records.iter().map(|r| r.item + 1).max().unwrap_or(0);
        let ds = InteractionDataset {
            records,
            num_users,
            num_items,
        };
        ds.validate().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(ds)
    }
}

/// Raw item id → entity token, with entity indices assigned in order of
/// first appearance. Item indices are these entity indices, so items occupy
/// a prefix of the entity index space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemMapping {
    item_to_entity: HashMap<String, usize>,
    entity_tokens: Vec<String>,
}

impl ItemMapping {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut mapping = ItemMapping::default();
        let mut entity_index: HashMap<String, usize> = HashMap::new();
        for (item, entity) in pairs {
            let (item, entity) = (item.into(), entity.into());
            let next = entity_index.len();
            let idx = *entity_index.entry(entity.clone()).or_insert_with(|| {
                mapping.entity_tokens.push(entity);
                next
            });
            if mapping.item_to_entity.insert(item.clone(), idx).is_some() {
                return Err(Error::Data(format!("item `{item}` is mapped more than once")));
            }
        }
        Ok(mapping)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::parse(path, i + 1, "expected `item<TAB>entity`"));
            }
            pairs.push((fields[0].to_string(), fields[1].to_string()));
        }
        Self::from_pairs(pairs).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn item_index(&self, raw_item: &str) -> Option<usize> {
        self.item_to_entity.get(raw_item).copied()
    }

    pub fn num_items(&self) -> usize {
        self.entity_tokens.len()
    }

    pub fn entity_tokens(&self) -> &[String] {
        &self.entity_tokens
    }
}

/// Result of re-indexing positives and joining them with sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Remapped {
    pub dataset: InteractionDataset,
    /// Raw user id of each dense user index.
    pub users: Vec<String>,
    /// Positive pairs whose item had no entity.
    pub dropped_records: usize,
}

/// Maps users to dense indices (first-appearance order) and items to their
/// entity indices, dropping items without an entity, then adds one sampled
/// unwatched negative per positive.
pub fn remap_and_join(positives: &[(String, String)], mapping: &ItemMapping, seed: u64) -> Result<Remapped> {
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut per_user: Vec<BTreeSet<usize>> = Vec::new();
    let mut dropped = 0;
    for (user, item) in positives {
        let Some(item) = mapping.item_index(item) else {
            dropped += 1;
            continue;
        };
        let next = user_index.len();
        let u = *user_index.entry(user.as_str()).or_insert_with(|| {
            users.push(user.clone());
            per_user.push(BTreeSet::new());
            next
        });
        per_user[u].insert(item);
    }
    let num_items = mapping.num_items();
    let negatives = sample_unwatched_negatives(&per_user, num_items, seed);

    let mut records: Vec<Interaction> = per_user
        .iter()
        .enumerate()
        .flat_map(|(user, items)| {
            items.iter().map(move |&item| Interaction {
                user,
                item,
                label: true,
            })
        })
        .collect();
    records.extend(negatives);
    records.sort_by_key(|r| (r.user, !r.label, r.item));
    let dataset = InteractionDataset::new(records, users.len(), num_items)?;
    Ok(Remapped {
        dataset,
        users,
        dropped_records: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: InteractionDataset,
    pub validation: InteractionDataset,
    pub test: InteractionDataset,
    pub seed: u64,
}

/// Uniform random partition by normalized `ratios` (train, validation, test).
pub fn split(dataset: &InteractionDataset, ratios: [f64; 3], seed: u64) -> Result<SplitDataset> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    if dataset.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let n = dataset.len();
    let total: f64 = ratios.iter().sum();
    let train_end = ((n as f64) * ratios[0] / total).round() as usize;
    let val_end = (((n as f64) * (ratios[0] + ratios[1]) / total).round() as usize).max(train_end);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<Interaction> {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| dataset.records[i]).collect()
    };
    let parts = [take(0..train_end), take(train_end..val_end), take(val_end..n)];
    for (name, (part, ratio)) in ["train", "validation", "test"].iter().zip(parts.iter().zip(ratios)) {
        if part.is_empty() && ratio > 0.0 && n >= 3 {
            log::warn!("{name} split is empty despite ratio {ratio}");
        }
    }
    let [train, validation, test] = parts;
    Ok(SplitDataset {
        train: dataset.subset(train),
        validation: dataset.subset(validation),
        test: dataset.subset(test),
        seed,
    })
}

/// Reads `head<TAB>relation<TAB>tail` with opaque tokens.
pub fn load_raw_kg(path: &Path) -> Result<Vec<[String; 3]>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, i + 1, "expected `head<TAB>relation<TAB>tail`"));
        }
        out.push([fields[0].to_string(), fields[1].to_string(), fields[2].to_string()]);
    }
    Ok(out)
}

/// Index vocabulary for a re-indexed knowledge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KgVocabulary {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

/// Assigns entity indices (mapped items first, then other entities in order
/// of appearance) and relation indices (order of appearance).
pub fn remap_kg(raw: &[[String; 3]], mapping: &ItemMapping) -> (KnowledgeGraph, KgVocabulary) {
    let mut entities: Vec<String> = mapping.entity_tokens().to_vec();
    let mut entity_index: HashMap<String, usize> =
        entities.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let mut relations = Vec::new();
    let mut relation_index: HashMap<String, usize> = HashMap::new();
    let intern = |token: &str, index: &mut HashMap<String, usize>, list: &mut Vec<String>| -> usize {
        if let Some(&i) = index.get(token) {
            return i;
        }
        index.insert(token.to_string(), list.len());
        list.push(token.to_string());
        list.len() - 1
    };
    let mut triples = Vec::with_capacity(raw.len());
    for [h, r, t] in raw {
        let head = intern(h, &mut entity_index, &mut entities);
        let relation = intern(r, &mut relation_index, &mut relations);
        let tail = intern(t, &mut entity_index, &mut entities);
        triples.push(Triple::new(head, relation, tail));
    }
    let kg = KnowledgeGraph {
        triples,
        num_entities: entities.len(),
        num_relations: relations.len(),
    };
    (kg, KgVocabulary { entities, relations })
}

/// Dataset statistics in the conventional reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    /// Positive (label 1) interactions.
    pub interactions: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "# users\t{}", self.users)?;
        writeln!(f, "# items\t{}", self.items)?;
        writeln!(f, "# interactions\t{}", self.interactions)?;
        writeln!(f, "# entities\t{}", self.entities)?;
        writeln!(f, "# relations\t{}", self.relations)?;
        write!(f, "# KG triples\t{}", self.triples)
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessInputs<'a> {
    pub ratings: &'a Path,
    pub format: RatingsFormat,
    pub item_mapping: &'a Path,
    pub kg: &'a Path,
    pub threshold: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub dataset: InteractionDataset,
    pub kg: KnowledgeGraph,
    pub users: Vec<String>,
    pub vocabulary: KgVocabulary,
    pub dropped_records: usize,
    pub stats: DatasetStats,
}

pub const RATINGS_FILE: &str = "ratings_final.txt";
pub const KG_FILE: &str = "kg_final.txt";

/// Full ingestion pipeline from raw files to indexed ratings and KG.
pub fn preprocess(inputs: &PreprocessInputs<'_>) -> Result<PreprocessOutput> {
    let ratings = load_ratings(inputs.ratings, inputs.format)?;
    let mapping = ItemMapping::load(inputs.item_mapping)?;
    let positives = implicitize(&ratings, inputs.threshold);
    let remapped = remap_and_join(&positives, &mapping, inputs.seed)?;
    if remapped.dataset.num_positives() == 0 {
        return Err(Error::Data("no interactions".into()));
    }
    let raw_kg = load_raw_kg(inputs.kg)?;
    let (kg, vocabulary) = remap_kg(&raw_kg, &mapping);
    let stats = DatasetStats {
        users: remapped.dataset.num_users,
        items: remapped.dataset.num_items,
        interactions: remapped.dataset.num_positives(),
        entities: vocabulary.entities.len(),
        relations: vocabulary.relations.len(),
        triples: kg.triples.len(),
    };
    Ok(PreprocessOutput {
        dataset: remapped.dataset,
        kg,
        users: remapped.users,
        vocabulary,
        dropped_records: remapped.dropped_records,
        stats,
    })
}

fn write_index(path: &Path, tokens: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, t) in tokens.iter().enumerate() {
        writeln!(out, "{t}\t{i}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

impl PreprocessOutput {
    /// Writes the ratings and KG files plus the index tables used for
    /// reverse lookup.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dataset.write(&dir.join(RATINGS_FILE))?;
        self.kg.write(&dir.join(KG_FILE))?;
        write_index(&dir.join("user_index.tsv"), &self.users)?;
        write_index(&dir.join("entity_index.tsv"), &self.vocabulary.entities)?;
        write_index(&dir.join("relation_index.tsv"), &self.vocabulary.relations)?;
        let stats = dir.join("stats.txt");
        std::fs::write(&stats, format!("{}\n", self.stats)).map_err(|e| Error::io(&stats, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, delimiter: Delimiter) -> Result<Vec<RawRating>> {
        parse_ratings(
            text.as_bytes(),
            Path::new("ratings"),
            RatingsFormat {
                delimiter,
                skip_header: false,
            },
        )
    }

    fn raw(user: &str, item: &str, rating: f64) -> RawRating {
        RawRating {
            user: user.into(),
            item: item.into(),
            rating,
        }
    }

    #[test]
    fn load_ratings_examples() {
        assert_eq!(parse("196\t242\t3.0\n", Delimiter::Tab).unwrap(), vec![raw("196", "242", 3.0)]);
        assert!(parse("", Delimiter::Tab).unwrap().is_empty());
        let err = parse("1 2 3\na b\n", Delimiter::Whitespace).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse("1\t2\tx\n", Delimiter::Tab).is_err());
    }

    #[test]
    fn delimiters_and_headers() {
        let ml = "userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n";
        let rows = parse_ratings(
            ml.as_bytes(),
            Path::new("ml"),
            RatingsFormat {
                delimiter: Delimiter::Comma,
                skip_header: true,
            },
        )
        .unwrap();
        assert_eq!(rows, vec![raw("1", "31", 2.5)]);
        assert_eq!(parse("1::1193::5::978300760\n", Delimiter::DoubleColon).unwrap()[0].rating, 5.0);
        let bx = "\"276725\";\"034545104X\";\"0\"\n";
        assert_eq!(parse(bx, Delimiter::Semicolon).unwrap(), vec![raw("276725", "034545104X", 0.0)]);
    }

    #[test]
    fn implicitize_examples() {
        let ratings = [raw("u", "a", 4.0), raw("u", "b", 3.0), raw("v", "c", 1.0)];
        let kept = implicitize(&ratings, Some(4.0));
        assert_eq!(kept, vec![("u".to_string(), "a".to_string())]);
        assert_eq!(implicitize(&ratings, None).len(), 3);
        let dup = [raw("u", "a", 2.0), raw("u", "a", 5.0), raw("u", "a", 1.0)];
        assert_eq!(implicitize(&dup, Some(4.0)).len(), 1);
    }

    #[test]
    fn negative_examples() {
        let one = [BTreeSet::from([0])];
        let negs = sample_unwatched_negatives(&one, 3, 17);
        assert_eq!(negs.len(), 1);
        assert!(negs[0].item == 1 || negs[0].item == 2);
        assert!(!negs[0].label);
        let full = [BTreeSet::from([0, 1, 2])];
        assert!(sample_unwatched_negatives(&full, 3, 17).is_empty());
        let users: Vec<BTreeSet<usize>> = (0..20).map(|u| (u..u + 5).collect()).collect();
        assert_eq!(
            sample_unwatched_negatives(&users, 40, 5),
            sample_unwatched_negatives(&users, 40, 5)
        );
    }

    #[test]
    fn remap_examples() {
        let mapping = ItemMapping::from_pairs([("a", "e0"), ("b", "e1"), ("c", "e2")]).unwrap();
        let pos: Vec<(String, String)> = [("x", "a"), ("y", "c"), ("y", "zz")]
            .iter()
            .map(|(u, i)| (u.to_string(), i.to_string()))
            .collect();
        let out = remap_and_join(&pos, &mapping, 0).unwrap();
        assert_eq!(out.dataset.num_users, 2);
        assert!(out.dataset.records.iter().all(|r| r.item < 3));
        assert_eq!(out.dropped_records, 1);
        assert_eq!(out.users, vec!["x", "y"]);
        assert_eq!(out.dataset.num_positives(), 2);
        assert_eq!(out.dataset.len(), 4);

        assert!(ItemMapping::from_pairs([("a", "e0"), ("a", "e1")]).is_err());
    }

    #[test]
    fn split_examples() {
        let records: Vec<Interaction> = (0..10)
            .map(|i| Interaction {
                user: 0,
                item: i,
                label: i % 2 == 0,
            })
            .collect();
        let ds = InteractionDataset::new(records, 1, 10).unwrap();
        let s = split(&ds, [6.0, 2.0, 2.0], 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        let s = split(&ds, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(split(&ds, [0.0, 0.0, 0.0], 3).is_err());
        assert!(split(&InteractionDataset::default(), [6.0, 2.0, 2.0], 3).is_err());
    }

    #[test]
    fn kg_remap_puts_items_first() {
        let mapping = ItemMapping::from_pairs([("i1", "m.1"), ("i2", "m.2")]).unwrap();
        let raw = vec![
            ["m.9".to_string(), "genre".to_string(), "m.2".to_string()],
            ["m.1".to_string(), "genre".to_string(), "m.9".to_string()],
            ["m.1".to_string(), "origin".to_string(), "m.7".to_string()],
        ];
        let (kg, vocab) = remap_kg(&raw, &mapping);
        assert_eq!(vocab.entities, vec!["m.1", "m.2", "m.9", "m.7"]);
        assert_eq!(vocab.relations, vec!["genre", "origin"]);
        assert_eq!(kg.triples[0], Triple::new(2, 0, 1));
        assert_eq!((kg.num_entities, kg.num_relations), (4, 2));
    }

    proptest! {
        #[test]
        fn negatives_balance_positives(
            sets in prop::collection::vec(prop::collection::btree_set(0usize..12, 0..12), 1..8),
            seed in any::<u64>(),
        ) {
            let negs = sample_unwatched_negatives(&sets, 12, seed);
            for (u, seen) in sets.iter().enumerate() {
                let mine: Vec<_> = negs.iter().filter(|r| r.user == u).collect();
                prop_assert_eq!(mine.len(), seen.len().min(12 - seen.len()));
                let distinct: HashSet<_> = mine.iter().map(|r| r.item).collect();
                prop_assert_eq!(distinct.len(), mine.len());
                prop_assert!(mine.iter().all(|r| !seen.contains(&r.item)));
            }
        }

        #[test]
        fn split_is_a_partition(seed in any::<u64>()) {
            let records: Vec<Interaction> = (0..1000)
                .map(|i| Interaction { user: i / 50, item: i % 50, label: i % 3 == 0 })
                .collect();
            let ds = InteractionDataset::new(records, 20, 50).unwrap();
            let s = split(&ds, [6.0, 2.0, 2.0], seed).unwrap();
            prop_assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (600, 200, 200));
            let mut all: Vec<_> = s.train.records.iter().chain(&s.validation.records).chain(&s.test.records).copied().collect();
            all.sort();
            let mut want = ds.records.clone();
            want.sort();
            prop_assert_eq!(all, want);
        }
    }
}

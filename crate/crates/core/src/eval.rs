//! CTR metrics (AUC, F1) and top-K recall.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::InteractionDataset;
use crate::error::{Error, Result};

/// Anything that assigns an engagement probability to a (user, item) pair.
pub trait Scorer: Sync {
    fn score(&self, user: usize, item: usize) -> Result<f64>;

    fn num_users(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredRecord {
    pub user: usize,
    pub item: usize,
    pub label: bool,
    pub score: f64,
}

/// Area under the ROC curve via the Mann–Whitney rank sum, with midranks
/// for tied scores.
pub fn auc(records: &[ScoredRecord]) -> Result<f64> {
    let positives = records.iter().filter(|r| r.label).count();
    let negatives = records.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data(
            "AUC needs at least one positive and one negative record".into(),
        ));
    }
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::NonFinite(format!("score for user {} item {}", r.user, r.item)));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].score.total_cmp(&records[b].score));

    // Ranks are 1-based; doubling keeps midranks integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && records[order[j + 1]].score == records[order[i]].score {
            j += 1;
        }
        let doubled_midrank = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            if records[idx].label {
                doubled_rank_sum += doubled_midrank;
            }
        }
        i = j + 1;
    }
    let p = positives as u64;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / 2.0 / (positives as f64 * negatives as f64))
}

/// F1 of the classifier "predict 1 iff score ≥ threshold"; 0 when both
/// precision and recall are 0.
pub fn f1(records: &[ScoredRecord], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for r in records {
        match (r.score >= threshold, r.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Candidate items for `user` ranked by descending score, ties broken by
/// ascending item index. Items in `exclude` are not candidates.
pub fn rank_candidates<S: Scorer + ?Sized>(
    model: &S,
    user: usize,
    exclude: &HashSet<usize>,
    num_items: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut scored = Vec::with_capacity(num_items);
    for item in 0..num_items {
        if !exclude.contains(&item) {
            scored.push((item, model.score(user, item)?));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

fn recall_from_ranking(ranked: &[(usize, f64)], k: usize, test_positives: &HashSet<usize>) -> f64 {
    if test_positives.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|(item, _)| test_positives.contains(item))
        .count();
    hits as f64 / test_positives.len() as f64
}

/// Fraction of `test_positives` among the top `k` of all items the user
/// has no training positive for.
pub fn recall_at_k<S: Scorer + ?Sized>(
    model: &S,
    user: usize,
    k: usize,
    train_positives: &HashSet<usize>,
    test_positives: &HashSet<usize>,
    num_items: usize,
) -> Result<f64> {
    if k == 0 {
        return Ok(0.0);
    }
    let ranked = rank_candidates(model, user, train_positives, num_items)?;
    Ok(recall_from_ranking(&ranked, k, test_positives))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CtrReport {
    pub auc: f64,
    pub f1: f64,
    pub records: usize,
}

/// Scores every record of `dataset` in parallel.
pub fn score_records<S: Scorer + ?Sized>(model: &S, dataset: &InteractionDataset) -> Result<Vec<ScoredRecord>> {
    dataset
        .records
        .par_iter()
        .map(|r| {
            Ok(ScoredRecord {
                user: r.user,
                item: r.item,
                label: r.label,
                score: model.score(r.user, r.item)?,
            })
        })
        .collect()
}

pub fn ctr_eval<S: Scorer + ?Sized>(model: &S, dataset: &InteractionDataset) -> Result<CtrReport> {
    if dataset.records.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let scored = score_records(model, dataset)?;
    Ok(CtrReport {
        auc: auc(&scored)?,
        f1: f1(&scored, 0.5),
        records: scored.len(),
    })
}

pub const DEFAULT_K_LIST: [usize; 7] = [1, 2, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKReport {
    pub k_list: Vec<usize>,
    pub recall: Vec<f64>,
    pub users: usize,
}

/// Mean Recall@k over users with at least one test positive. Candidates
/// exclude each user's training positives.
pub fn topk_eval<S: Scorer + ?Sized>(
    model: &S,
    train: &InteractionDataset,
    test: &InteractionDataset,
    num_items: usize,
    k_list: &[usize],
) -> Result<TopKReport> {
    if test.records.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let train_pos = train.positives_by_user();
    let test_pos = test.positives_by_user();
    let empty = HashSet::new();
    let users: Vec<usize> = (0..test_pos.len()).filter(|&u| !test_pos[u].is_empty()).collect();
    if users.is_empty() {
        return Err(Error::Data("no user has a positive test record".into()));
    }
    let max_k = k_list.iter().copied().max().unwrap_or(0);
    let per_user: Vec<Vec<f64>> = users
        .par_iter()
        .map(|&u| {
            let exclude = train_pos.get(u).unwrap_or(&empty);
            let mut ranked = rank_candidates(model, u, exclude, num_items)?;
            ranked.truncate(max_k);
            Ok(k_list
                .iter()
                .map(|&k| recall_from_ranking(&ranked, k, &test_pos[u]))
                .collect())
        })
        .collect::<Result<_>>()?;
    let recall = (0..k_list.len())
        .map(|i| per_user.iter().map(|r| r[i]).sum::<f64>() / users.len() as f64)
        .collect();
    Ok(TopKReport {
        k_list: k_list.to_vec(),
        recall,
        users: users.len(),
    })
}

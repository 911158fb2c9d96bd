//! Objective functions: relevance, intra-list diversity and novelty.
//!
//! The free functions operate on item ids and are the reference definitions.
//! [`Evaluator`] precomputes per-candidate quantities for one user so that the
//! optimizer can score thousands of lists cheaply; its results agree with the
//! free functions.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::constraints;
use crate::domain::{
    decode_positions, dot, Catalog, ConstraintReport, ConstraintThresholds, ItemId,
    ObjectiveVector, Solution, UserContext,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    /// Weight of category overlap in relevance; the remainder goes to embedding similarity.
    pub overlap_weight: f64,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            overlap_weight: 0.5,
        }
    }
}

/// Cosine similarity between unit vectors, clamped to `[0, 1]`.
fn clamped_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(0.0, 1.0)
}

/// Cosine distance between unit vectors, rescaled to `[0, 1]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    ((1.0 - dot(a, b)) / 2.0).clamp(0.0, 1.0)
}

fn history_similarity(item: &[f64], history: &[&[f64]]) -> f64 {
    history
        .iter()
        .map(|h| clamped_similarity(item, h))
        .fold(0.0, f64::max)
}

/// Relevance with the default 0.5/0.5 weighting.
pub fn relevance(list: &[ItemId], user: &UserContext, catalog: &Catalog) -> Result<f64> {
    relevance_weighted(list, user, catalog, ObjectiveSettings::default().overlap_weight)
}

/// `w * overlap + (1 - w) * sim`, where overlap is the share of the list's
/// category labels that also occur in the history and sim is the mean over
/// list items of their best (clamped) cosine similarity to a history item.
pub fn relevance_weighted(
    list: &[ItemId],
    user: &UserContext,
    catalog: &Catalog,
    overlap_weight: f64,
) -> Result<f64> {
    if list.is_empty() {
        return Ok(0.0);
    }
    let mut history_categories = BTreeSet::new();
    let mut history_embeddings = Vec::with_capacity(user.history.len());
    for (id, _) in &user.history {
        let item = catalog.get(id)?;
        history_categories.extend(item.categories.iter().map(String::as_str));
        history_embeddings.push(item.embedding.as_slice());
    }
    let mut list_categories = BTreeSet::new();
    let mut sim = 0.0;
    for id in list {
        let item = catalog.get(id)?;
        list_categories.extend(item.categories.iter().map(String::as_str));
        sim += history_similarity(&item.embedding, &history_embeddings);
    }
    sim /= list.len() as f64;
    let shared = list_categories.intersection(&history_categories).count();
    let overlap = shared as f64 / list_categories.len() as f64;
    Ok((overlap_weight * overlap + (1.0 - overlap_weight) * sim).clamp(0.0, 1.0))
}

/// Mean pairwise cosine distance; 0 for lists shorter than two.
pub fn diversity(list: &[ItemId], catalog: &Catalog) -> Result<f64> {
    let embeddings = list
        .iter()
        .map(|id| catalog.get(id).map(|item| item.embedding.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_pairwise_distance(&embeddings))
}

fn mean_pairwise_distance(embeddings: &[&[f64]]) -> f64 {
    let k = embeddings.len();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += cosine_distance(embeddings[i], embeddings[j]);
        }
    }
    total * 2.0 / (k * (k - 1)) as f64
}

/// Mean of `1 - popularity` over the list.
pub fn novelty(list: &[ItemId], catalog: &Catalog) -> Result<f64> {
    if list.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for id in list {
        total += 1.0 - catalog.get(id)?.popularity;
    }
    Ok(total / list.len() as f64)
}

/// Evaluates a key vector for one user from scratch.
pub fn evaluate(
    keys: &[f64],
    k: usize,
    user: &UserContext,
    catalog: &Catalog,
    thresholds: &ConstraintThresholds,
) -> Result<Solution> {
    Evaluator::new(user, catalog, thresholds, k, ObjectiveSettings::default())?.evaluate(keys)
}

struct Candidate {
    catalog_index: usize,
    categories: Vec<u32>,
    primary: u32,
    seller: u32,
    recent: bool,
    history_sim: f64,
}

/// Per-user precomputation of everything the objectives and constraints need.
pub struct Evaluator<'a> {
    catalog: &'a Catalog,
    pool: Vec<ItemId>,
    candidates: Vec<Candidate>,
    history_category: Vec<bool>,
    n_categories: usize,
    thresholds: ConstraintThresholds,
    settings: ObjectiveSettings,
    k: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        user: &UserContext,
        catalog: &'a Catalog,
        thresholds: &ConstraintThresholds,
        k: usize,
        settings: ObjectiveSettings,
    ) -> Result<Self> {
        user.validate(k)?;
        let mut category_ids: HashMap<&str, u32> = HashMap::new();
        let mut seller_ids: HashMap<&str, u32> = HashMap::new();
        let intern = |map: &mut HashMap<&'a str, u32>, s: &'a str| {
            let next = map.len() as u32;
            *map.entry(s).or_insert(next)
        };

        let mut history_embeddings = Vec::with_capacity(user.history.len());
        let mut history_cats = Vec::new();
        for (id, _) in &user.history {
            let item = catalog.get(id)?;
            history_embeddings.push(item.embedding.as_slice());
            for c in &item.categories {
                history_cats.push(intern(&mut category_ids, c));
            }
        }

        let mut candidates = Vec::with_capacity(user.candidate_pool.len());
        for id in &user.candidate_pool {
            let catalog_index = catalog.index_of(id)?;
            let item = &catalog.items()[catalog_index];
            let categories: Vec<u32> = item
                .categories
                .iter()
                .map(|c| intern(&mut category_ids, c))
                .collect();
            candidates.push(Candidate {
                catalog_index,
                primary: categories[0],
                categories,
                seller: intern(&mut seller_ids, &item.seller_id),
                recent: constraints::is_recent(item.listed_at, thresholds),
                history_sim: history_similarity(&item.embedding, &history_embeddings),
            });
        }

        let n_categories = category_ids.len();
        let mut history_category = vec![false; n_categories];
        for c in history_cats {
            history_category[c as usize] = true;
        }

        Ok(Self {
            catalog,
            pool: user.candidate_pool.clone(),
            candidates,
            history_category,
            n_categories,
            thresholds: thresholds.clone(),
            settings,
            k,
        })
    }

    pub fn pool(&self) -> &[ItemId] {
        &self.pool
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn thresholds(&self) -> &ConstraintThresholds {
        &self.thresholds
    }

    /// Decodes and scores a key vector.
    pub fn evaluate(&self, keys: &[f64]) -> Result<Solution> {
        let positions = decode_positions(keys, &self.pool, self.k)?;
        let (objectives, constraints) = self.score_positions(&positions);
        Ok(Solution {
            keys: keys.to_vec(),
            decoded_list: positions.iter().map(|&p| self.pool[p].clone()).collect(),
            objectives,
            constraints,
        })
    }

    fn score_positions(&self, positions: &[usize]) -> (ObjectiveVector, ConstraintReport) {
        let k = positions.len();
        let items = self.catalog.items();

        let mut in_list = vec![false; self.n_categories];
        let mut sim = 0.0;
        let mut novelty = 0.0;
        for &p in positions {
            let c = &self.candidates[p];
            for &cat in &c.categories {
                in_list[cat as usize] = true;
            }
            sim += c.history_sim;
            novelty += 1.0 - items[c.catalog_index].popularity;
        }
        let list_categories = in_list.iter().filter(|&&b| b).count();
        let shared = in_list
            .iter()
            .zip(&self.history_category)
            .filter(|(&a, &b)| a && b)
            .count();
        let (relevance, novelty) = if k == 0 {
            (0.0, 0.0)
        } else {
            let overlap = shared as f64 / list_categories as f64;
            let w = self.settings.overlap_weight;
            (
                (w * overlap + (1.0 - w) * sim / k as f64).clamp(0.0, 1.0),
                novelty / k as f64,
            )
        };
        let embeddings: Vec<&[f64]> = positions
            .iter()
            .map(|&p| items[self.candidates[p].catalog_index].embedding.as_slice())
            .collect();
        let objectives = ObjectiveVector::new(relevance, mean_pairwise_distance(&embeddings), novelty);

        let mut counts: HashMap<u32, usize> = HashMap::new();
        let mut sellers: Vec<u32> = Vec::with_capacity(k);
        let mut recent = 0;
        for &p in positions {
            let c = &self.candidates[p];
            *counts.entry(c.primary).or_default() += 1;
            sellers.push(c.seller);
            recent += usize::from(c.recent);
        }
        sellers.sort_unstable();
        sellers.dedup();
        let th = &self.thresholds;
        let g_fair = constraints::gini_of_groups(counts.values().copied(), k) - th.theta_fair;
        let g_seller = constraints::shortfall(th.theta_seller, sellers.len(), k);
        let g_new = constraints::shortfall(th.theta_new, recent, k);
        (objectives, ConstraintReport::new(g_fair, g_seller, g_new))
    }
}

//! Core value types shared by the optimizer: catalog items, user context,
//! solutions and their cached objective/constraint evaluations.
//!
//! A recommendation list is encoded as a vector of continuous keys, one per
//! candidate-pool entry. The list itself is recovered by [`decode_keys`],
//! which keeps the `k` entries with the largest keys.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ItemId = String;

/// Seconds in one day.
pub const DAY: i64 = 86_400;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub categories: Vec<String>,
    pub seller_id: String,
    /// Listing time in seconds since the epoch.
    pub listed_at: i64,
    /// Normalized interaction frequency in `[0, 1]`.
    pub popularity: f64,
    /// Unit-norm item embedding.
    pub embedding: Vec<f64>,
}

impl ItemRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidItem {
            item: self.item_id.clone(),
            reason: reason.to_string(),
        };
        if self.categories.is_empty() {
            return Err(invalid("categories must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.popularity) {
            return Err(invalid("popularity must lie in [0, 1]"));
        }
        if self.embedding.is_empty() {
            return Err(invalid("embedding is empty"));
        }
        let norm = l2_norm(&self.embedding);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(invalid("embedding is not unit-norm"));
        }
        Ok(())
    }

    /// The first category label; used for category-balance accounting.
    pub fn primary_category(&self) -> &str {
        &self.categories[0]
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Immutable, validated item collection with id lookup.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<ItemRecord>,
    index: HashMap<ItemId, usize>,
}

impl Catalog {
    pub fn new(items: Vec<ItemRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        let dim = items.first().map(|item| item.embedding.len());
        for (i, item) in items.iter().enumerate() {
            item.validate()?;
            if let Some(dim) = dim {
                if item.embedding.len() != dim {
                    return Err(Error::DimensionMismatch {
                        item: item.item_id.clone(),
                        expected: dim,
                        found: item.embedding.len(),
                    });
                }
            }
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::InvalidItem {
                    item: item.item_id.clone(),
                    reason: "duplicate item id".into(),
                });
            }
        }
        Ok(Self { items, index })
    }

    pub fn get(&self, id: &str) -> Result<&ItemRecord> {
        self.index
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.items.first().map(|item| item.embedding.len())
    }

    pub fn latest_listing(&self) -> Option<i64> {
        self.items.iter().map(|item| item.listed_at).max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserContext {
    pub user_id: String,
    /// Interaction history as `(item_id, timestamp)` pairs.
    pub history: Vec<(ItemId, i64)>,
    /// Items reserved for ranking evaluation.
    pub held_out: Vec<ItemId>,
    /// Items eligible for recommendation, in a fixed order.
    pub candidate_pool: Vec<ItemId>,
}

impl UserContext {
    /// Checks the context invariants for lists of size `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let invalid = |reason: String| Error::InvalidUser {
            user: self.user_id.clone(),
            reason,
        };
        if self.history.is_empty() {
            return Err(invalid("history is empty".into()));
        }
        let history: HashSet<&str> = self.history.iter().map(|(id, _)| id.as_str()).collect();
        if let Some(id) = self.held_out.iter().find(|id| history.contains(id.as_str())) {
            return Err(invalid(format!("held-out item `{id}` is also in the history")));
        }
        if let Some(id) = self
            .candidate_pool
            .iter()
            .find(|id| history.contains(id.as_str()))
        {
            return Err(invalid(format!("candidate `{id}` is also in the history")));
        }
        let unique: HashSet<&str> = self.candidate_pool.iter().map(String::as_str).collect();
        if unique.len() != self.candidate_pool.len() {
            return Err(invalid("candidate pool contains duplicates".into()));
        }
        if self.candidate_pool.len() < k {
            return Err(Error::PoolTooSmall {
                k,
                pool: self.candidate_pool.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub relevance: f64,
    pub diversity: f64,
    pub novelty: f64,
}

impl ObjectiveVector {
    pub fn new(relevance: f64, diversity: f64, novelty: f64) -> Self {
        Self {
            relevance,
            diversity,
            novelty,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.relevance, self.diversity, self.novelty]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Componentwise maximum.
    pub fn max(&self, other: &Self) -> Self {
        Self::new(
            self.relevance.max(other.relevance),
            self.diversity.max(other.diversity),
            self.novelty.max(other.novelty),
        )
    }
}

/// Constraint violations `g_j` (positive = violated) and their positive-part sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub g_fair: f64,
    pub g_seller: f64,
    pub g_new: f64,
    pub total_violation: f64,
}

impl ConstraintReport {
    pub fn new(g_fair: f64, g_seller: f64, g_new: f64) -> Self {
        let mut report = Self {
            g_fair,
            g_seller,
            g_new,
            total_violation: 0.0,
        };
        report.total_violation = crate::constraints::total_violation(&report);
        report
    }

    pub fn is_feasible(&self) -> bool {
        self.total_violation == 0.0
    }

    pub fn is_eps_feasible(&self, epsilon: f64) -> bool {
        self.total_violation <= epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintThresholds {
    /// Maximum Gini coefficient of the primary-category distribution.
    pub theta_fair: f64,
    /// Minimum fraction of distinct sellers.
    pub theta_seller: f64,
    /// Minimum fraction of recently listed items.
    pub theta_new: f64,
    /// Recency window in seconds.
    pub recency_window: i64,
    /// Reference time for recency, seconds since the epoch.
    pub now: i64,
}

impl Default for ConstraintThresholds {
    fn default() -> Self {
        Self {
            theta_fair: 0.6,
            theta_seller: 0.2,
            theta_new: 0.1,
            recency_window: 30 * DAY,
            now: 0,
        }
    }
}

impl ConstraintThresholds {
    pub fn with_now(now: i64) -> Self {
        Self {
            now,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("theta_fair", self.theta_fair),
            ("theta_seller", self.theta_seller),
            ("theta_new", self.theta_new),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {value} must lie in (0, 1)"
                )));
            }
        }
        if self.recency_window <= 0 {
            return Err(Error::InvalidConfig(
                "recency_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A candidate recommendation list: random-key genome plus its cached evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub keys: Vec<f64>,
    /// The decoded list, ordered by descending key.
    pub decoded_list: Vec<ItemId>,
    pub objectives: ObjectiveVector,
    pub constraints: ConstraintReport,
}

impl Solution {
    pub fn total_violation(&self) -> f64 {
        self.constraints.total_violation
    }

    pub fn is_feasible(&self) -> bool {
        self.constraints.is_feasible()
    }
}

/// Orders pool positions by descending key, then ascending item id.
pub(crate) fn key_order(keys: &[f64], pool: &[ItemId], a: usize, b: usize) -> Ordering {
    keys[b]
        .total_cmp(&keys[a])
        .then_with(|| pool[a].cmp(&pool[b]))
}

/// Pool positions of the `k` largest keys, ordered by descending key with
/// ties broken by ascending item id.
pub fn decode_positions(keys: &[f64], pool: &[ItemId], k: usize) -> Result<Vec<usize>> {
    if keys.len() != pool.len() {
        return Err(Error::KeyPoolMismatch {
            keys: keys.len(),
            pool: pool.len(),
        });
    }
    if k > pool.len() {
        return Err(Error::PoolTooSmall { k, pool: pool.len() });
    }
    let mut positions: Vec<usize> = (0..pool.len()).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < positions.len() {
        positions.select_nth_unstable_by(k - 1, |&a, &b| key_order(keys, pool, a, b));
        positions.truncate(k);
    }
    positions.sort_by(|&a, &b| key_order(keys, pool, a, b));
    Ok(positions)
}

/// Decodes a key vector into the `k` pool items with the largest keys.
pub fn decode_keys(keys: &[f64], pool: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
    Ok(decode_positions(keys, pool, k)?
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

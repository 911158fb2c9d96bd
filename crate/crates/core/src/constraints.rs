//! Business constraints (category fairness, seller coverage, new-item
//! exposure), the total violation used by constrained dominance, and the
//! decaying epsilon relaxation schedule.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{Catalog, ConstraintReport, ConstraintThresholds, ItemId, Solution};
use crate::error::{Error, Result};

/// Absorbs floating-point noise in products such as `0.7 * 10`.
const COUNT_SLACK: f64 = 1e-9;

/// Gini coefficient of a count vector of length `k` whose entries sum to `k`.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let sum: usize = counts.iter().sum();
    if sum != counts.len() {
        return Err(Error::GiniCountMismatch {
            sum,
            expected: counts.len(),
        });
    }
    Ok(sorted_gini(counts.to_vec()))
}

/// Mean-difference Gini via the sorted closed form
/// `sum_i (2i - n - 1) x_(i) / (n * sum x)`.
fn sorted_gini(mut counts: Vec<usize>) -> f64 {
    let n = counts.len();
    let total: usize = counts.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    counts.sort_unstable();
    let weighted: i64 = counts
        .iter()
        .enumerate()
        .map(|(i, &x)| (2 * (i as i64 + 1) - n as i64 - 1) * x as i64)
        .sum();
    weighted as f64 / (n as f64 * total as f64)
}

/// Gini over group sizes zero-padded to `k` slots.
pub(crate) fn gini_of_groups(groups: impl IntoIterator<Item = usize>, k: usize) -> f64 {
    let mut counts: Vec<usize> = groups.into_iter().collect();
    counts.resize(k.max(counts.len()), 0);
    sorted_gini(counts)
}

/// Number of list slots implied by "at least `theta * k`".
pub fn required_count(theta: f64, k: usize) -> usize {
    (theta * k as f64 - COUNT_SLACK).ceil().max(0.0) as usize
}

/// Normalized shortfall `(ceil(theta * k) - have) / k`.
pub(crate) fn shortfall(theta: f64, have: usize, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    (required_count(theta, k) as f64 - have as f64) / k as f64
}

/// Whether an item listed at `listed_at` falls in the closed recency window.
pub fn is_recent(listed_at: i64, thresholds: &ConstraintThresholds) -> bool {
    thresholds.now - listed_at <= thresholds.recency_window
}

/// Gini of the padded primary-category counts minus `theta_fair`.
pub fn fairness_violation(
    list: &[ItemId],
    catalog: &Catalog,
    thresholds: &ConstraintThresholds,
) -> Result<f64> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in list {
        *counts.entry(catalog.get(id)?.primary_category()).or_default() += 1;
    }
    Ok(gini_of_groups(counts.into_values(), list.len()) - thresholds.theta_fair)
}

pub fn seller_violation(
    list: &[ItemId],
    catalog: &Catalog,
    thresholds: &ConstraintThresholds,
) -> Result<f64> {
    let mut sellers = BTreeSet::new();
    for id in list {
        sellers.insert(catalog.get(id)?.seller_id.as_str());
    }
    Ok(shortfall(thresholds.theta_seller, sellers.len(), list.len()))
}

pub fn new_item_violation(
    list: &[ItemId],
    catalog: &Catalog,
    thresholds: &ConstraintThresholds,
) -> Result<f64> {
    let mut recent = 0;
    for id in list {
        recent += usize::from(is_recent(catalog.get(id)?.listed_at, thresholds));
    }
    Ok(shortfall(thresholds.theta_new, recent, list.len()))
}

pub fn constraint_report(
    list: &[ItemId],
    catalog: &Catalog,
    thresholds: &ConstraintThresholds,
) -> Result<ConstraintReport> {
    Ok(ConstraintReport::new(
        fairness_violation(list, catalog, thresholds)?,
        seller_violation(list, catalog, thresholds)?,
        new_item_violation(list, catalog, thresholds)?,
    ))
}

/// Sum of positive parts of the three violations.
pub fn total_violation(report: &ConstraintReport) -> f64 {
    report.g_fair.max(0.0) + report.g_seller.max(0.0) + report.g_new.max(0.0)
}

/// `epsilon(t) = epsilon0 * gamma^(t / t_max)`, forced to zero at `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub epsilon0: f64,
    pub gamma: f64,
    pub t_max: usize,
}

impl EpsilonSchedule {
    pub fn new(epsilon0: f64, gamma: f64, t_max: usize) -> Result<Self> {
        if !(epsilon0 >= 0.0 && epsilon0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon0 = {epsilon0} must be finite and non-negative"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {gamma} must lie in (0, 1)"
            )));
        }
        if t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be positive".into()));
        }
        Ok(Self {
            epsilon0,
            gamma,
            t_max,
        })
    }

    pub fn epsilon_at(&self, t: usize) -> Result<f64> {
        if t > self.t_max {
            return Err(Error::GenerationOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        if t == self.t_max {
            return Ok(0.0);
        }
        Ok(self.epsilon0 * self.gamma.powf(t as f64 / self.t_max as f64))
    }
}

/// Nearest-rank percentile (`p` in `(0, 1]`) of a non-empty sample.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64 - COUNT_SLACK).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Initial relaxation: 80th percentile of total violation in the initial population.
pub fn calibrate_epsilon0(initial_population: &[Solution]) -> Result<f64> {
    let violations: Vec<f64> = initial_population
        .iter()
        .map(Solution::total_violation)
        .collect();
    nearest_rank_percentile(&violations, 0.8)
}

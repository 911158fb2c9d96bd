//! Evaluation metrics: exact 3-D hypervolume, NDCG@k, feasibility rate and
//! the per-run metrics report.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::{Catalog, ItemId, ObjectiveVector, Solution, UserContext};
use crate::engine::{OptimizationResult, RunOutcome};
use crate::error::{Error, Result};
use crate::objectives;

/// Totally ordered `f64` key for the staircase map.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coord(f64);

impl Eq for Coord {}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Coord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Non-dominated 2-D staircase (maximization) with its dominated area
/// relative to the origin. Keys are x, values are y; y decreases as x grows.
#[derive(Default)]
struct Staircase {
    steps: BTreeMap<Coord, f64>,
    area: f64,
}

impl Staircase {
    fn insert(&mut self, x: f64, y: f64) {
        // Height to the right of x: the first step at or beyond x.
        let mut height = match self.steps.range(Coord(x)..).next() {
            Some((_, &h)) if h >= y => return,
            Some((_, &h)) => h,
            None => 0.0,
        };
        let mut right = x;
        let mut added = 0.0;
        let mut dominated = Vec::new();
        let mut blocked = false;
        for (&Coord(sx), &sy) in self.steps.range(..=Coord(x)).rev() {
            added += (right - sx) * (y - height).max(0.0);
            right = sx;
            height = sy;
            if sy > y {
                blocked = true;
                break;
            }
            dominated.push(Coord(sx));
        }
        if !blocked {
            added += right * (y - height).max(0.0);
        }
        for key in dominated {
            self.steps.remove(&key);
        }
        self.steps.insert(Coord(x), y);
        self.area += added;
    }
}

/// Exact hypervolume of the union of boxes `[reference, p]` (maximization).
///
/// Sweeps the third objective from the top while maintaining the dominated
/// area of the first two; `O(n log n)` amortized. Points that fail to weakly
/// dominate the reference are skipped with a warning.
pub fn hypervolume3(points: &[ObjectiveVector], reference: &ObjectiveVector) -> f64 {
    let r = reference.as_array();
    let mut shifted: Vec<[f64; 3]> = Vec::with_capacity(points.len());
    for p in points {
        let a = p.as_array();
        if a.iter().zip(&r).any(|(x, y)| !(x >= y)) {
            warn!("hypervolume: point {a:?} does not dominate the reference {r:?}; skipped");
            continue;
        }
        shifted.push([a[0] - r[0], a[1] - r[1], a[2] - r[2]]);
    }
    shifted.sort_by(|a, b| b[2].total_cmp(&a[2]));
    let mut stairs = Staircase::default();
    let mut volume = 0.0;
    for (i, p) in shifted.iter().enumerate() {
        stairs.insert(p[0], p[1]);
        let next_z = shifted.get(i + 1).map_or(0.0, |q| q[2]);
        volume += stairs.area * (p[2] - next_z);
    }
    volume
}

/// Hypervolume with the origin as reference.
pub fn hypervolume(points: &[ObjectiveVector]) -> f64 {
    hypervolume3(points, &ObjectiveVector::default())
}

/// Binary-gain NDCG over the first `k` entries of `ranked`.
pub fn ndcg_at_k(ranked: &[ItemId], held_out: &[ItemId], k: usize) -> f64 {
    let relevant: HashSet<&str> = held_out.iter().map(String::as_str).collect();
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id.as_str()))
        .map(|(i, _)| discount(i))
        .fold(0.0, |acc, d| acc + d);
    let ideal: f64 = (0..k.min(relevant.len())).map(discount).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Share of solutions with zero total violation.
pub fn feasibility_rate(population: &[Solution]) -> Result<f64> {
    if population.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let feasible = population.iter().filter(|s| s.is_feasible()).count();
    Ok(feasible as f64 / population.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Hypervolume of the returned Pareto set.
    pub hypervolume: f64,
    /// NDCG@k of the designated list.
    pub ndcg_at_k: f64,
    /// Diversity of the designated list.
    pub diversity: f64,
    /// Mean diversity over the Pareto set.
    pub diversity_set_mean: f64,
    /// Feasibility over the final exploitation population.
    pub feasibility_rate: f64,
    /// Feasibility over the returned Pareto set.
    pub front_feasibility: f64,
    pub pareto_size: usize,
    /// Whether the run produced a designated list.
    pub success: bool,
}

/// Aggregates one run into a report row. Failed runs report the
/// least-violating list in place of the designated one and a zero hypervolume.
pub fn report(result: &OptimizationResult, user: &UserContext, catalog: &Catalog) -> Result<MetricsReport> {
    let k = result.k;
    let (pareto, designated, success) = match &result.outcome {
        RunOutcome::Success { pareto_set, l_star } => (pareto_set.as_slice(), l_star, true),
        RunOutcome::Infeasible { best, .. } => (&[][..], best, false),
    };
    let objectives: Vec<ObjectiveVector> = pareto.iter().map(|s| s.objectives).collect();
    let diversity_set_mean = if pareto.is_empty() {
        0.0
    } else {
        pareto.iter().map(|s| s.objectives.diversity).sum::<f64>() / pareto.len() as f64
    };
    Ok(MetricsReport {
        hypervolume: hypervolume(&objectives),
        ndcg_at_k: ndcg_at_k(&designated.decoded_list, &user.held_out, k),
        diversity: objectives::diversity(&designated.decoded_list, catalog)?,
        diversity_set_mean,
        feasibility_rate: feasibility_rate(&result.final_exploit)?,
        front_feasibility: if pareto.is_empty() {
            0.0
        } else {
            feasibility_rate(pareto)?
        },
        pareto_size: pareto.len(),
        success,
    })
}

//! The dual-population optimization loop.
//!
//! The exploitation population evolves under constrained dominance with a
//! decaying epsilon tolerance; the exploration population ignores
//! constraints and mutates twice as hard. After every generation the two
//! exchange their least crowded elites, and every `coordination_interval`
//! generations a [`Coordinator`] redistributes the population budget.
//!
//! Strictly feasible non-dominated lists seen in the exploitation population
//! are kept in an archive, which is what the run returns.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{calibrate_epsilon0, EpsilonSchedule};
use crate::coordinator::{
    AlphaBounds, Coordinator, DecisionSource, OptimizationSummary, RuleCoordinator,
};
use crate::domain::{Catalog, ConstraintThresholds, ObjectiveVector, Solution, UserContext};
use crate::error::{Error, Result};
use crate::evolution::{
    best_first, cdp_compare, crowding_distance, de_pbest1, mutate, nondominated_sort,
    pareto_dominates, rank_population, select_survivors, Comparison, DeParams, MIN_POPULATION,
};
use crate::metrics::{feasibility_rate, hypervolume};
use crate::objectives::{Evaluator, ObjectiveSettings};

/// Absorbs floating-point noise in `alpha * N`.
const SIZE_SLACK: f64 = 1e-9;

const STREAM_INIT: u64 = 1;
const STREAM_EXPLOIT: u64 = 2;
const STREAM_EXPLORE: u64 = 3;
const STREAM_RESIZE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Both agents, transfer, and the supplied coordinator.
    Dual,
    /// One constrained population, no transfer, no coordination.
    SinglePopulation,
    /// Both agents with constraints ignored during selection.
    NoConstraints,
    /// Both agents with the rule policy in place of the supplied coordinator.
    NoLlm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Dual,
        Mode::NoLlm,
        Mode::SinglePopulation,
        Mode::NoConstraints,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Dual => "dual",
            Mode::SinglePopulation => "single-population",
            Mode::NoConstraints => "no-constraints",
            Mode::NoLlm => "no-llm",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Total population budget `N`.
    pub population_total: usize,
    pub t_max: usize,
    pub k: usize,
    /// Generations between coordinator calls.
    pub coordination_interval: usize,
    pub alpha_initial: f64,
    pub alpha_bounds: AlphaBounds,
    pub transfer_fraction: f64,
    pub gamma: f64,
    pub exploit_mutation: f64,
    pub explore_mutation: f64,
    pub de: DeParams,
    pub objectives: ObjectiveSettings,
    pub rng_seed: u64,
    pub mode: Mode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            population_total: 100,
            t_max: 50,
            k: 10,
            coordination_interval: 10,
            alpha_initial: 0.7,
            alpha_bounds: AlphaBounds::default(),
            transfer_fraction: 0.15,
            gamma: 0.8,
            exploit_mutation: 0.1,
            explore_mutation: 0.2,
            de: DeParams::default(),
            objectives: ObjectiveSettings::default(),
            rng_seed: 0,
            mode: Mode::Dual,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if self.t_max == 0 {
            return fail("t_max must be positive".into());
        }
        if self.coordination_interval == 0 || self.coordination_interval > self.t_max {
            return fail(format!(
                "coordination_interval = {} must lie in 1..={}",
                self.coordination_interval, self.t_max
            ));
        }
        if !(self.transfer_fraction > 0.0 && self.transfer_fraction <= 0.5) {
            return fail(format!(
                "transfer_fraction = {} must lie in (0, 0.5]",
                self.transfer_fraction
            ));
        }
        let b = self.alpha_bounds;
        if !(0.0 < b.min && b.min <= b.max && b.max < 1.0) {
            return fail(format!("alpha bounds [{}, {}] are invalid", b.min, b.max));
        }
        if !(self.alpha_initial >= b.min && self.alpha_initial <= b.max) {
            return fail(format!(
                "alpha_initial = {} must lie in [{}, {}]",
                self.alpha_initial, b.min, b.max
            ));
        }
        for (name, rate) in [
            ("exploit_mutation", self.exploit_mutation),
            ("explore_mutation", self.explore_mutation),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return fail(format!("{name} = {rate} must lie in [0, 1]"));
            }
        }
        let min_total = if self.mode == Mode::SinglePopulation {
            MIN_POPULATION
        } else {
            2 * MIN_POPULATION
        };
        if self.population_total < min_total {
            return fail(format!(
                "population_total = {} is below the minimum of {min_total}",
                self.population_total
            ));
        }
        Ok(())
    }

    /// Transfer size `ceil(transfer_fraction * N)`.
    pub fn transfer_size(&self) -> usize {
        (self.transfer_fraction * self.population_total as f64 - SIZE_SLACK).ceil() as usize
    }

    fn is_dual(&self) -> bool {
        self.mode != Mode::SinglePopulation
    }
}

/// `(floor(alpha * n), n - floor(alpha * n))`.
pub fn split_sizes(alpha: f64, n: usize) -> (usize, usize) {
    let exploit = ((alpha * n as f64 + SIZE_SLACK).floor() as usize).min(n);
    (exploit, n - exploit)
}

/// One row of the per-generation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub generation: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// Hypervolume of the feasible archive.
    pub hv_exploit: f64,
    pub hv_explore: f64,
    /// Strict feasibility over both populations.
    pub feasibility_rate: f64,
    pub best_objectives: ObjectiveVector,
    pub coordinator_rationale: Option<String>,
}

/// Bookkeeping for one coordinator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationEvent {
    pub generation: usize,
    pub alpha: f64,
    pub source: DecisionSource,
    pub fallback_reason: Option<String>,
    pub exploit_size: usize,
    pub explore_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Success {
        pareto_set: Vec<Solution>,
        l_star: Solution,
    },
    /// No strictly feasible list was found.
    Infeasible { best: Solution, diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub k: usize,
    pub mode: Mode,
    pub outcome: RunOutcome,
    pub trace: Vec<GenerationTrace>,
    pub coordination: Vec<CoordinationEvent>,
    pub final_exploit: Vec<Solution>,
    pub final_explore: Vec<Solution>,
    pub epsilon0: f64,
    pub warnings: Vec<String>,
    pub evaluations: usize,
}

impl OptimizationResult {
    pub fn is_success(&self) -> bool {
        matches!(self.outcome, RunOutcome::Success { .. })
    }

    pub fn pareto_set(&self) -> &[Solution] {
        match &self.outcome {
            RunOutcome::Success { pareto_set, .. } => pareto_set,
            RunOutcome::Infeasible { .. } => &[],
        }
    }
}

/// Non-dominated solutions seen so far. Candidates weakly dominated by a
/// member are rejected, so equal objective vectors are stored once.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    members: Vec<Solution>,
    feasible_only: bool,
}

impl Archive {
    pub fn new(feasible_only: bool) -> Self {
        Self {
            members: Vec::new(),
            feasible_only,
        }
    }

    pub fn offer(&mut self, candidate: &Solution) -> bool {
        if self.feasible_only && !candidate.is_feasible() {
            return false;
        }
        let c = candidate.objectives.as_array();
        let covered = self.members.iter().any(|m| {
            let a = m.objectives.as_array();
            a.iter().zip(&c).all(|(x, y)| x >= y)
        });
        if covered {
            return false;
        }
        self.members
            .retain(|m| !pareto_dominates(&candidate.objectives, &m.objectives));
        self.members.push(candidate.clone());
        true
    }

    pub fn offer_all(&mut self, candidates: &[Solution]) {
        for c in candidates {
            self.offer(c);
        }
    }

    pub fn members(&self) -> &[Solution] {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn hypervolume(&self) -> f64 {
        let points: Vec<ObjectiveVector> = self.members.iter().map(|s| s.objectives).collect();
        hypervolume(&points)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn random_keys<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// One generation of DE/pbest/1 plus uniform-reset mutation, followed by
/// elitist truncation back to the current size.
fn evolve<R: Rng>(
    population: Vec<Solution>,
    epsilon: f64,
    mutation: f64,
    params: &DeParams,
    evaluator: &Evaluator,
    rng: &mut R,
    evaluations: &mut usize,
) -> Result<Vec<Solution>> {
    let size = population.len();
    let ranking = best_first(&rank_population(&population, epsilon));
    let keys: Vec<&[f64]> = population.iter().map(|s| s.keys.as_slice()).collect();
    let mut offspring = Vec::with_capacity(size);
    for target in 0..size {
        let child = de_pbest1(&keys, &ranking, target, params, rng)?;
        let child = mutate(&child, mutation, rng);
        offspring.push(evaluator.evaluate(&child)?);
    }
    *evaluations += size;
    let mut merged = population;
    merged.extend(offspring);
    Ok(select_survivors(merged, size, epsilon))
}

/// Exchanges up to `k` elites between the populations.
///
/// Elites are the `k` members of the combined first front (plain Pareto) with
/// the largest crowding distance. In each population they displace the worst
/// members under that population's comparator, unless the comparator ranks
/// the displaced member above the elite. Elites already present are skipped.
pub fn knowledge_transfer(
    exploit: &mut [Solution],
    explore: &mut [Solution],
    k: usize,
    exploit_epsilon: f64,
) -> Result<()> {
    if k == 0 {
        return Ok(());
    }
    if k >= exploit.len() || k >= explore.len() {
        return Err(Error::TransferTooLarge {
            k,
            exploit: exploit.len(),
            explore: explore.len(),
        });
    }
    let combined: Vec<&Solution> = exploit.iter().chain(explore.iter()).collect();
    let first = nondominated_sort(&combined, |a, b| {
        pareto_dominates(&a.objectives, &b.objectives)
    })
    .into_iter()
    .next()
    .unwrap_or_default();
    let objectives: Vec<ObjectiveVector> = first.iter().map(|&i| combined[i].objectives).collect();
    let crowding = crowding_distance(&objectives);
    let mut order: Vec<usize> = (0..first.len()).collect();
    order.sort_by(|&a, &b| crowding[b].total_cmp(&crowding[a]).then(a.cmp(&b)));
    let elites: Vec<Solution> = order
        .into_iter()
        .take(k)
        .map(|j| combined[first[j]].clone())
        .collect();

    receive(exploit, &elites, exploit_epsilon);
    receive(explore, &elites, f64::INFINITY);
    Ok(())
}

fn receive(population: &mut [Solution], elites: &[Solution], epsilon: f64) {
    let ranking = best_first(&rank_population(population, epsilon));
    let mut victims = ranking.into_iter().rev().take(elites.len());
    for elite in elites {
        if population.iter().any(|s| s.keys == elite.keys) {
            continue;
        }
        let Some(victim) = victims.next() else { break };
        if cdp_compare(&population[victim], elite, epsilon) != Comparison::ABetter {
            population[victim] = elite.clone();
        }
    }
}

/// Shrinks by elitist truncation or grows by mutated clones of random members.
pub fn resize<R: Rng>(
    population: Vec<Solution>,
    new_size: usize,
    epsilon: f64,
    mutation: f64,
    evaluator: &Evaluator,
    rng: &mut R,
    warnings: &mut Vec<String>,
) -> Result<Vec<Solution>> {
    if population.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let target = if new_size < MIN_POPULATION {
        warnings.push(format!(
            "requested population size {new_size} raised to {MIN_POPULATION}"
        ));
        MIN_POPULATION
    } else {
        new_size
    };
    if target <= population.len() {
        return Ok(select_survivors(population, target, epsilon));
    }
    let mut grown = population;
    let parents = grown.len();
    while grown.len() < target {
        let parent = &grown[..parents]
            .choose(rng)
            .expect("population is non-empty")
            .keys;
        let keys = mutate(parent, mutation, rng);
        grown.push(evaluator.evaluate(&keys)?);
    }
    Ok(grown)
}

/// Index of the designated list: highest relevance, then largest exclusive
/// hypervolume contribution, then lexicographically smallest list.
pub fn designate(set: &[Solution]) -> Option<usize> {
    let best = set
        .iter()
        .map(|s| s.objectives.relevance)
        .max_by(f64::total_cmp)?;
    let tied: Vec<usize> = (0..set.len())
        .filter(|&i| set[i].objectives.relevance == best)
        .collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    let points: Vec<ObjectiveVector> = set.iter().map(|s| s.objectives).collect();
    let total = hypervolume(&points);
    let contribution = |i: usize| {
        let rest: Vec<ObjectiveVector> = points
            .iter()
            .enumerate()
            .filter_map(|(j, p)| (j != i).then_some(*p))
            .collect();
        total - hypervolume(&rest)
    };
    tied.into_iter()
        .map(|i| (i, contribution(i)))
        .max_by(|(a, ca), (b, cb)| {
            ca.total_cmp(cb)
                .then_with(|| set[*b].decoded_list.cmp(&set[*a].decoded_list))
        })
        .map(|(i, _)| i)
}

/// Strictly feasible non-dominated subset of `candidates` and its designated
/// list, or `None` when nothing is feasible.
pub fn select_final(candidates: &[Solution]) -> Option<(Vec<Solution>, Solution)> {
    let mut archive = Archive::new(true);
    archive.offer_all(candidates);
    let set = archive.members;
    let star = designate(&set)?;
    let l_star = set[star].clone();
    Some((set, l_star))
}

fn componentwise_best(solutions: &[Solution]) -> ObjectiveVector {
    solutions
        .iter()
        .fold(ObjectiveVector::default(), |acc, s| acc.max(&s.objectives))
}

/// Runs the optimizer for one user.
pub fn run(
    config: &EngineConfig,
    user: &UserContext,
    catalog: &Catalog,
    thresholds: &ConstraintThresholds,
    coordinator: &mut dyn Coordinator,
) -> Result<OptimizationResult> {
    config.validate()?;
    thresholds.validate()?;
    let evaluator = Evaluator::new(user, catalog, thresholds, config.k, config.objectives)?;
    let mut rule = RuleCoordinator {
        bounds: config.alpha_bounds,
    };
    let coordinator: &mut dyn Coordinator = if config.mode == Mode::NoLlm {
        &mut rule
    } else {
        coordinator
    };
    Engine::new(config, &evaluator)?.run(coordinator)
}

struct Engine<'c, 'e> {
    config: &'c EngineConfig,
    evaluator: &'e Evaluator<'e>,
    exploit: Vec<Solution>,
    explore: Vec<Solution>,
    archive: Archive,
    schedule: EpsilonSchedule,
    alpha: f64,
    trace: Vec<GenerationTrace>,
    coordination: Vec<CoordinationEvent>,
    warnings: Vec<String>,
    evaluations: usize,
}

impl<'c, 'e> Engine<'c, 'e> {
    fn new(config: &'c EngineConfig, evaluator: &'e Evaluator<'e>) -> Result<Self> {
        let n = config.population_total;
        let mut rng = stream(config.rng_seed, STREAM_INIT);
        let mut initial = Vec::with_capacity(n);
        for _ in 0..n {
            initial.push(evaluator.evaluate(&random_keys(evaluator.pool_size(), &mut rng))?);
        }
        let epsilon0 = calibrate_epsilon0(&initial)?;
        let schedule = EpsilonSchedule::new(epsilon0, config.gamma, config.t_max)?;
        let (alpha, exploit, explore) = if config.is_dual() {
            let (n_exploit, _) = split_sizes(config.alpha_initial, n);
            let explore = initial.split_off(n_exploit);
            (config.alpha_initial, initial, explore)
        } else {
            (1.0, initial, Vec::new())
        };
        Ok(Self {
            config,
            evaluator,
            exploit,
            explore,
            archive: Archive::new(config.mode != Mode::NoConstraints),
            schedule,
            alpha,
            trace: Vec::with_capacity(config.t_max + 1),
            coordination: Vec::new(),
            warnings: Vec::new(),
            evaluations: n,
        })
    }

    /// Selection tolerance of the exploitation agent at generation `t`.
    fn exploit_epsilon(&self, t: usize) -> Result<f64> {
        if self.config.mode == Mode::NoConstraints {
            Ok(f64::INFINITY)
        } else {
            self.schedule.epsilon_at(t)
        }
    }

    fn all_members(&self) -> impl Iterator<Item = &Solution> {
        self.exploit.iter().chain(self.explore.iter())
    }

    fn feasibility(&self) -> f64 {
        let all: Vec<Solution> = self.all_members().cloned().collect();
        feasibility_rate(&all).unwrap_or(0.0)
    }

    fn best_objectives(&self) -> ObjectiveVector {
        if self.archive.is_empty() {
            componentwise_best(&self.exploit)
        } else {
            componentwise_best(self.archive.members())
        }
    }

    fn record(&mut self, t: usize, rationale: Option<String>) -> Result<()> {
        let explore: Vec<ObjectiveVector> = self.explore.iter().map(|s| s.objectives).collect();
        let row = GenerationTrace {
            generation: t,
            epsilon: self.schedule.epsilon_at(t)?,
            alpha: self.alpha,
            hv_exploit: self.archive.hypervolume(),
            hv_explore: hypervolume(&explore),
            feasibility_rate: self.feasibility(),
            best_objectives: self.best_objectives(),
            coordinator_rationale: rationale,
        };
        self.trace.push(row);
        Ok(())
    }

    fn summary(&self, t: usize) -> Result<OptimizationSummary> {
        let hv = self.archive.hypervolume();
        let previous = self.trace[t - self.config.coordination_interval].hv_exploit;
        let hv_improvement = if previous > 0.0 {
            ((hv - previous) / previous).clamp(0.0, 1.0)
        } else if hv > 0.0 {
            1.0
        } else {
            0.0
        };
        let count = self.exploit.len() + self.explore.len();
        let avg_violation =
            self.all_members().map(Solution::total_violation).sum::<f64>() / count as f64;
        Ok(OptimizationSummary {
            generation: t,
            t_max: self.config.t_max,
            epsilon: self.schedule.epsilon_at(t)?,
            feasibility_rate: self.feasibility(),
            hv_exploit: hv,
            hv_explore: self.trace[t - 1].hv_explore,
            hv_improvement,
            avg_violation,
            best_objectives: self.best_objectives(),
            current_alpha: self.alpha,
        })
    }

    fn run(mut self, coordinator: &mut dyn Coordinator) -> Result<OptimizationResult> {
        let config = self.config;
        let mut exploit_rng = stream(config.rng_seed, STREAM_EXPLOIT);
        let mut explore_rng = stream(config.rng_seed, STREAM_EXPLORE);
        let mut resize_rng = stream(config.rng_seed, STREAM_RESIZE);
        let transfer = config.transfer_size();

        self.archive.offer_all(&self.exploit);
        self.record(0, None)?;

        for t in 1..=config.t_max {
            let eps = self.exploit_epsilon(t)?;
            let exploit = std::mem::take(&mut self.exploit);
            self.exploit = evolve(
                exploit,
                eps,
                config.exploit_mutation,
                &config.de,
                self.evaluator,
                &mut exploit_rng,
                &mut self.evaluations,
            )?;

            if config.is_dual() {
                let explore = std::mem::take(&mut self.explore);
                self.explore = evolve(
                    explore,
                    f64::INFINITY,
                    config.explore_mutation,
                    &config.de,
                    self.evaluator,
                    &mut explore_rng,
                    &mut self.evaluations,
                )?;
                let smaller = self.exploit.len().min(self.explore.len());
                let k = transfer.min(smaller / 2);
                knowledge_transfer(&mut self.exploit, &mut self.explore, k, eps)?;
            }
            self.archive.offer_all(&self.exploit);

            let mut rationale = None;
            if config.is_dual() && t % config.coordination_interval == 0 && t < config.t_max {
                let summary = self.summary(t)?;
                let decision = coordinator.decide(&summary);
                let alpha = config.alpha_bounds.clamp(decision.alpha);
                let (n_exploit, n_explore) = split_sizes(alpha, config.population_total);
                let exploit = std::mem::take(&mut self.exploit);
                self.exploit = resize(
                    exploit,
                    n_exploit,
                    eps,
                    config.exploit_mutation,
                    self.evaluator,
                    &mut resize_rng,
                    &mut self.warnings,
                )?;
                let explore = std::mem::take(&mut self.explore);
                self.explore = resize(
                    explore,
                    n_explore,
                    f64::INFINITY,
                    config.explore_mutation,
                    self.evaluator,
                    &mut resize_rng,
                    &mut self.warnings,
                )?;
                self.archive.offer_all(&self.exploit);
                self.alpha = alpha;
                self.coordination.push(CoordinationEvent {
                    generation: t,
                    alpha,
                    source: decision.source,
                    fallback_reason: decision.fallback_reason,
                    exploit_size: self.exploit.len(),
                    explore_size: self.explore.len(),
                });
                rationale = Some(decision.rationale);
            }
            self.record(t, rationale)?;
        }
        self.finish()
    }

    fn finish(self) -> Result<OptimizationResult> {
        let outcome = if self.archive.is_empty() {
            let best = self
                .all_members()
                .min_by(|a, b| a.total_violation().total_cmp(&b.total_violation()))
                .ok_or(Error::EmptyPopulation)?
                .clone();
            let diagnostic = format!(
                "no strictly feasible list after {} generations; least total violation {:.6} \
                 (fairness {:.4}, seller {:.4}, new items {:.4})",
                self.config.t_max,
                best.total_violation(),
                best.constraints.g_fair,
                best.constraints.g_seller,
                best.constraints.g_new
            );
            log::warn!("{diagnostic}");
            RunOutcome::Infeasible { best, diagnostic }
        } else {
            let pareto_set = self.archive.members().to_vec();
            let star = designate(&pareto_set).expect("archive is non-empty");
            RunOutcome::Success {
                l_star: pareto_set[star].clone(),
                pareto_set,
            }
        };
        Ok(OptimizationResult {
            k: self.config.k,
            mode: self.config.mode,
            outcome,
            trace: self.trace,
            coordination: self.coordination,
            final_exploit: self.exploit,
            final_explore: self.explore,
            epsilon0: self.schedule.epsilon0,
            warnings: self.warnings,
            evaluations: self.evaluations,
        })
    }
}

pub const TRACE_HEADER: [&str; 10] = [
    "gen",
    "epsilon",
    "alpha",
    "hv_exploit",
    "hv_explore",
    "feasibility_rate",
    "f1_best",
    "f2_best",
    "f3_best",
    "rationale",
];

/// Writes the trace as CSV, one row per generation.
pub fn write_trace_csv<W: Write>(trace: &[GenerationTrace], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(TRACE_HEADER).map_err(csv_error)?;
    for row in trace {
        let b = row.best_objectives;
        writer
            .write_record([
                row.generation.to_string(),
                row.epsilon.to_string(),
                row.alpha.to_string(),
                row.hv_exploit.to_string(),
                row.hv_explore.to_string(),
                row.feasibility_rate.to_string(),
                b.relevance.to_string(),
                b.diversity.to_string(),
                b.novelty.to_string(),
                row.coordinator_rationale.clone().unwrap_or_default(),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ConstraintReport;

    fn sol(id: &str, obj: [f64; 3], violation: f64) -> Solution {
        Solution {
            keys: vec![obj[0], obj[1], obj[2], violation],
            decoded_list: vec![id.to_string()],
            objectives: ObjectiveVector::from_array(obj),
            constraints: ConstraintReport::new(violation, 0.0, 0.0),
        }
    }

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(0.7, 100), (70, 30));
        assert_eq!(split_sizes(0.55, 100), (55, 45));
        assert_eq!(split_sizes(0.72, 100), (72, 28));
        assert_eq!(split_sizes(0.9, 50), (45, 5));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("both".parse::<Mode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        assert_eq!(EngineConfig::default().transfer_size(), 15);
        let bad = [
            EngineConfig { coordination_interval: 60, ..Default::default() },
            EngineConfig { transfer_fraction: 0.6, ..Default::default() },
            EngineConfig { alpha_initial: 0.95, ..Default::default() },
            EngineConfig { population_total: 6, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn archive_keeps_nondominated_feasible() {
        let mut a = Archive::new(true);
        assert!(a.offer(&sol("a", [0.5, 0.5, 0.5], 0.0)));
        assert!(!a.offer(&sol("b", [0.9, 0.9, 0.9], 0.1)));
        assert!(!a.offer(&sol("c", [0.5, 0.5, 0.5], 0.0)));
        assert!(a.offer(&sol("d", [0.6, 0.5, 0.5], 0.0)));
        assert_eq!(a.members().len(), 1);
        assert!(a.offer(&sol("e", [0.1, 0.9, 0.1], 0.0)));
        assert_eq!(a.members().len(), 2);
        assert!((a.hypervolume() - (0.6 * 0.5 * 0.5 + 0.1 * 0.4 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn designate_prefers_relevance() {
        let set = vec![sol("a", [0.9, 0.1, 0.1], 0.0), sol("b", [0.5, 0.9, 0.9], 0.0)];
        assert_eq!(designate(&set), Some(0));
        assert_eq!(designate(&set[1..]), Some(0));
        assert_eq!(designate(&[]), None);
    }

    #[test]
    fn designate_breaks_ties_by_contribution_then_list() {
        // Equal relevance; b covers more exclusive volume.
        let set = vec![sol("a", [0.5, 0.2, 0.2], 0.0), sol("b", [0.5, 0.1, 0.9], 0.0)];
        assert_eq!(designate(&set), Some(1));
        let same = vec![sol("z", [0.5, 0.5, 0.5], 0.0), sol("y", [0.5, 0.5, 0.5], 0.0)];
        assert_eq!(designate(&same), Some(1));
    }

    #[test]
    fn select_final_filters_infeasible() {
        let cands = vec![
            sol("a", [0.9, 0.9, 0.9], 0.2),
            sol("b", [0.4, 0.6, 0.5], 0.0),
            sol("c", [0.3, 0.5, 0.4], 0.0),
        ];
        let (set, star) = select_final(&cands).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(star.decoded_list, vec!["b".to_string()]);
        assert!(set.iter().all(Solution::is_feasible));
        assert!(select_final(&cands[..1]).is_none());
    }

    #[test]
    fn transfer_with_zero_k_is_identity() {
        let mut a: Vec<Solution> = (0..5).map(|i| sol(&i.to_string(), [0.1 * i as f64, 0.2, 0.3], 0.0)).collect();
        let mut b = a.clone();
        let (a0, b0) = (a.clone(), b.clone());
        knowledge_transfer(&mut a, &mut b, 0, 0.0).unwrap();
        assert_eq!((a, b), (a0, b0));
    }

    #[test]
    fn transfer_rejects_oversized_k() {
        let mut a: Vec<Solution> = (0..5).map(|i| sol(&i.to_string(), [0.1, 0.2, 0.1 * i as f64], 0.0)).collect();
        let mut b = a.clone();
        assert!(matches!(
            knowledge_transfer(&mut a, &mut b, 5, 0.0),
            Err(Error::TransferTooLarge { .. })
        ));
    }

    #[test]
    fn transfer_on_identical_populations_is_noop() {
        let mut a: Vec<Solution> = (0..6)
            .map(|i| sol(&i.to_string(), [0.1 * i as f64, 0.6 - 0.1 * i as f64, 0.3], 0.0))
            .collect();
        let mut b = a.clone();
        let a0 = a.clone();
        knowledge_transfer(&mut a, &mut b, 2, 0.0).unwrap();
        assert_eq!(a, a0);
        assert_eq!(b, a0);
    }

    #[test]
    fn extreme_explore_point_enters_exploit() {
        // Exploit clustered in the middle of a 2-objective trade-off;
        // explore holds one extreme point.
        let mut exploit: Vec<Solution> = (0..6)
            .map(|i| sol(&format!("x{i}"), [0.45 + 0.01 * i as f64, 0.55 - 0.01 * i as f64, 0.0], 0.0))
            .collect();
        let extreme = sol("far", [1.0, 0.0, 0.0], 0.0);
        let mut explore = vec![
            extreme.clone(),
            sol("d1", [0.1, 0.1, 0.0], 0.0),
            sol("d2", [0.2, 0.1, 0.0], 0.0),
            sol("d3", [0.1, 0.2, 0.0], 0.0),
            sol("d4", [0.2, 0.2, 0.0], 0.0),
        ];
        knowledge_transfer(&mut exploit, &mut explore, 2, 0.0).unwrap();
        assert_eq!(exploit.len(), 6);
        assert_eq!(explore.len(), 5);
        assert!(exploit.iter().any(|s| s == &extreme));
        let unique: std::collections::HashSet<String> =
            exploit.iter().map(|s| format!("{:?}", s.keys)).collect();
        assert_eq!(unique.len(), exploit.len());
    }
}

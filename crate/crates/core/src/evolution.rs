//! Selection and variation primitives.
//!
//! All objectives are maximized. Constrained comparison follows the
//! feasibility-first cascade with an epsilon tolerance on total violation;
//! passing `f64::INFINITY` as epsilon reduces it to plain Pareto comparison,
//! which is what the exploration population uses.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ObjectiveVector, Solution};
use crate::error::{Error, Result};

/// Smallest population DE/pbest/1 can draw a target plus two donors from.
pub const MIN_POPULATION: usize = 4;

/// `a` is at least as good as `b` everywhere and strictly better somewhere.
pub fn pareto_dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let (a, b) = (a.as_array(), b.as_array());
    let mut strictly = false;
    for (x, y) in a.iter().zip(&b) {
        if x < y {
            return false;
        }
        strictly |= x > y;
    }
    strictly
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    ABetter,
    BBetter,
    Tie,
}

impl Comparison {
    pub fn reverse(self) -> Self {
        match self {
            Self::ABetter => Self::BBetter,
            Self::BBetter => Self::ABetter,
            Self::Tie => Self::Tie,
        }
    }
}

/// Constrained-dominance comparison with epsilon-feasibility.
pub fn cdp_compare(a: &Solution, b: &Solution, epsilon: f64) -> Comparison {
    let (va, vb) = (a.total_violation(), b.total_violation());
    match (va <= epsilon, vb <= epsilon) {
        (true, false) => Comparison::ABetter,
        (false, true) => Comparison::BBetter,
        (false, false) => match va.total_cmp(&vb) {
            Ordering::Less => Comparison::ABetter,
            Ordering::Greater => Comparison::BBetter,
            Ordering::Equal => Comparison::Tie,
        },
        (true, true) => {
            if pareto_dominates(&a.objectives, &b.objectives) {
                Comparison::ABetter
            } else if pareto_dominates(&b.objectives, &a.objectives) {
                Comparison::BBetter
            } else {
                Comparison::Tie
            }
        }
    }
}

/// Fast non-dominated sort under an arbitrary strict "better than" relation.
/// Returns fronts of indices, best first; each front is in ascending index order.
pub fn nondominated_sort<T>(items: &[T], better: impl Fn(&T, &T) -> bool) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut beaten_by = vec![0usize; n];
    let mut beats: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if better(&items[i], &items[j]) {
                beats[i].push(j);
                beaten_by[j] += 1;
            } else if better(&items[j], &items[i]) {
                beats[j].push(i);
                beaten_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| beaten_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &beats[i] {
                beaten_by[j] -= 1;
                if beaten_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of a mutually non-dominated front.
pub fn crowding_distance(front: &[ObjectiveVector]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let values: Vec<[f64; 3]> = front.iter().map(ObjectiveVector::as_array).collect();
    let mut distance = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..3 {
        order.sort_by(|&a, &b| values[a][m].total_cmp(&values[b][m]).then(a.cmp(&b)));
        let lo = values[order[0]][m];
        let hi = values[order[n - 1]][m];
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        for w in 1..n - 1 {
            let gap = values[order[w + 1]][m] - values[order[w - 1]][m];
            distance[order[w]] += gap / range;
        }
    }
    distance
}

/// Selection state of one population member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedSolution {
    pub index: usize,
    /// 0 for the first (non-dominated) front.
    pub front_rank: usize,
    pub crowding: f64,
}

/// Front rank and crowding for every member under `cdp_compare` at `epsilon`.
/// The result is indexed by population position.
pub fn rank_population(population: &[Solution], epsilon: f64) -> Vec<RankedSolution> {
    let fronts = nondominated_sort(population, |a, b| {
        cdp_compare(a, b, epsilon) == Comparison::ABetter
    });
    let mut ranked = vec![
        RankedSolution {
            index: 0,
            front_rank: 0,
            crowding: 0.0,
        };
        population.len()
    ];
    for (rank, front) in fronts.iter().enumerate() {
        let objectives: Vec<ObjectiveVector> =
            front.iter().map(|&i| population[i].objectives).collect();
        for (&i, crowding) in front.iter().zip(crowding_distance(&objectives)) {
            ranked[i] = RankedSolution {
                index: i,
                front_rank: rank,
                crowding,
            };
        }
    }
    ranked
}

/// Population positions ordered best first: front rank, then crowding
/// (descending), then position.
pub fn best_first(ranked: &[RankedSolution]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&ranked[a], &ranked[b]);
        ra.front_rank
            .cmp(&rb.front_rank)
            .then(rb.crowding.total_cmp(&ra.crowding))
            .then(a.cmp(&b))
    });
    order
}

/// Elitist truncation to `size` members, keeping the relative order of survivors.
pub fn select_survivors(population: Vec<Solution>, size: usize, epsilon: f64) -> Vec<Solution> {
    if population.len() <= size {
        return population;
    }
    let ranked = rank_population(&population, epsilon);
    let mut keep = vec![false; population.len()];
    for &i in best_first(&ranked).iter().take(size) {
        keep[i] = true;
    }
    population
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeParams {
    /// Scale factor.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    /// Fraction of the population forming the pbest pool.
    pub p: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self {
            f: 0.5,
            cr: 0.9,
            p: 0.1,
        }
    }
}

/// `pbest + f * (r1 - r2)`, unclamped.
pub fn de_mutant(pbest: &[f64], r1: &[f64], r2: &[f64], f: f64) -> Vec<f64> {
    pbest
        .iter()
        .zip(r1.iter().zip(r2))
        .map(|(b, (x, y))| b + f * (x - y))
        .collect()
}

/// Binomial crossover; one randomly chosen gene always comes from the mutant.
pub fn binomial_crossover<R: Rng + ?Sized>(
    target: &[f64],
    mutant: &[f64],
    cr: f64,
    rng: &mut R,
) -> Vec<f64> {
    let forced = rng.random_range(0..target.len().max(1));
    target
        .iter()
        .zip(mutant)
        .enumerate()
        .map(|(j, (&t, &m))| {
            if j == forced || rng.random::<f64>() < cr {
                m
            } else {
                t
            }
        })
        .collect()
}

fn draw_excluding<R: Rng + ?Sized>(rng: &mut R, n: usize, exclude: &[usize]) -> usize {
    loop {
        let i = rng.random_range(0..n);
        if !exclude.contains(&i) {
            return i;
        }
    }
}

/// One DE/pbest/1/bin offspring for `target`. `ranking` lists population
/// positions best first under the agent's own comparator.
pub fn de_pbest1<R: Rng + ?Sized>(
    population: &[&[f64]],
    ranking: &[usize],
    target: usize,
    params: &DeParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = population.len();
    if n < MIN_POPULATION {
        return Err(Error::PopulationTooSmall(n));
    }
    let pool = ((params.p * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let pbest = ranking[rng.random_range(0..pool)];
    let r1 = draw_excluding(rng, n, &[target]);
    let r2 = draw_excluding(rng, n, &[target, r1]);
    let mutant = de_mutant(population[pbest], population[r1], population[r2], params.f);
    let mut child = binomial_crossover(population[target], &mutant, params.cr, rng);
    for gene in &mut child {
        *gene = gene.clamp(0.0, 1.0);
    }
    Ok(child)
}

/// Resets each gene to a fresh uniform draw with probability `rate`.
pub fn mutate<R: Rng + ?Sized>(keys: &[f64], rate: f64, rng: &mut R) -> Vec<f64> {
    keys.iter()
        .map(|&k| {
            if rng.random::<f64>() < rate {
                rng.random::<f64>()
            } else {
                k
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ConstraintReport;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ov(a: f64, b: f64, c: f64) -> ObjectiveVector {
        ObjectiveVector::new(a, b, c)
    }

    fn sol(obj: ObjectiveVector, violation: f64) -> Solution {
        Solution {
            keys: vec![],
            decoded_list: vec![],
            objectives: obj,
            constraints: ConstraintReport::new(violation, 0.0, 0.0),
        }
    }

    #[test]
    fn dominance_examples() {
        assert!(!pareto_dominates(&ov(0.5, 0.5, 0.5), &ov(0.5, 0.5, 0.5)));
        assert!(pareto_dominates(&ov(0.6, 0.5, 0.5), &ov(0.5, 0.5, 0.5)));
        assert!(!pareto_dominates(&ov(0.6, 0.4, 0.5), &ov(0.5, 0.5, 0.5)));
    }

    #[test]
    fn cdp_examples() {
        let x = ov(0.5, 0.5, 0.5);
        assert_eq!(cdp_compare(&sol(x, 0.0), &sol(x, 0.2), 0.0), Comparison::ABetter);
        assert_eq!(cdp_compare(&sol(x, 0.3), &sol(x, 0.1), 0.0), Comparison::BBetter);
        // Both epsilon-feasible: objectives decide even though a violates more.
        let a = sol(ov(0.6, 0.6, 0.6), 0.4);
        let b = sol(x, 0.2);
        assert_eq!(cdp_compare(&a, &b, 0.5), Comparison::ABetter);
    }

    #[test]
    fn sort_small_cases() {
        let one = [sol(ov(0.1, 0.1, 0.1), 0.0)];
        assert_eq!(nondominated_sort(&one, |a, b| cdp_compare(a, b, 0.0) == Comparison::ABetter), vec![vec![0]]);
        let chain = [
            sol(ov(0.3, 0.3, 0.3), 0.0),
            sol(ov(0.1, 0.1, 0.1), 0.0),
            sol(ov(0.2, 0.2, 0.2), 0.0),
        ];
        let fronts = nondominated_sort(&chain, |a, b| pareto_dominates(&a.objectives, &b.objectives));
        assert_eq!(fronts, vec![vec![0], vec![2], vec![1]]);
    }

    #[test]
    fn crowding_examples() {
        assert_eq!(crowding_distance(&[ov(0.1, 0.2, 0.3)]), vec![f64::INFINITY]);
        assert_eq!(
            crowding_distance(&[ov(0.1, 0.2, 0.3), ov(0.3, 0.2, 0.1)]),
            vec![f64::INFINITY; 2]
        );
        let d = crowding_distance(&[ov(0.0, 0.5, 0.5), ov(0.5, 0.5, 0.5), ov(1.0, 0.5, 0.5)]);
        assert_eq!(d[0], f64::INFINITY);
        assert_eq!(d[2], f64::INFINITY);
        assert!((d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn de_degenerate_difference() {
        let pbest = [0.2, 0.4, 0.9];
        let r = [0.7, 0.1, 0.3];
        assert_eq!(de_mutant(&pbest, &r, &r, 0.5), pbest.to_vec());
        assert_eq!(de_mutant(&pbest, &r, &[0.0, 0.0, 0.0], 0.0), pbest.to_vec());
    }

    #[test]
    fn de_bounds_and_size_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let keys: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..30).map(|_| rng.random::<f64>()).collect())
            .collect();
        let views: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        for _ in 0..200 {
            let (a, b, c) = (rng.random_range(0..20), rng.random_range(0..20), rng.random_range(0..20));
            let m = de_mutant(&keys[a], &keys[b], &keys[c], 0.5);
            assert!(m.iter().all(|&x| (-0.5..=1.5).contains(&x)));
        }
        let ranking: Vec<usize> = (0..20).collect();
        for t in 0..20 {
            let child = de_pbest1(&views, &ranking, t, &DeParams::default(), &mut rng).unwrap();
            assert_eq!(child.len(), 30);
            assert!(child.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        assert!(matches!(
            de_pbest1(&views[..3], &ranking[..3], 0, &DeParams::default(), &mut rng),
            Err(Error::PopulationTooSmall(3))
        ));
    }

    #[test]
    fn de_is_reproducible() {
        let keys: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 6.0; 8]).collect();
        let views: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let ranking: Vec<usize> = (0..6).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = de_pbest1(&views, &ranking, 2, &DeParams::default(), &mut rng).unwrap();
            mutate(&child, 0.2, &mut rng)
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn mutation_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keys = vec![2.0; 10_000];
        assert_eq!(mutate(&keys, 0.0, &mut rng), keys);
        assert!(mutate(&keys, 1.0, &mut rng).iter().all(|&x| x < 1.0));
        let out = mutate(&keys, 0.1, &mut rng);
        let reset = out.iter().filter(|&&x| x != 2.0).count() as f64 / 10_000.0;
        // Three binomial standard deviations: 3 * sqrt(0.1 * 0.9 / 10_000) = 0.009.
        assert!((reset - 0.1).abs() <= 0.01, "reset fraction {reset}");
    }

    #[test]
    fn survivor_selection_keeps_best_fronts() {
        let pop = vec![
            sol(ov(0.1, 0.1, 0.1), 0.0),
            sol(ov(0.9, 0.9, 0.9), 0.0),
            sol(ov(0.5, 0.5, 0.5), 0.0),
            sol(ov(0.9, 0.9, 0.9), 0.5),
        ];
        let kept = select_survivors(pop, 2, 0.0);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].objectives, ov(0.9, 0.9, 0.9));
        assert_eq!(kept[0].total_violation(), 0.0);
        assert_eq!(kept[1].objectives, ov(0.5, 0.5, 0.5));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn objective() -> impl Strategy<Value = ObjectiveVector> {
            (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| ov(a, b, c))
        }

        proptest! {
            #[test]
            fn cdp_is_antisymmetric(a in objective(), b in objective(), va in 0.0f64..0.5, vb in 0.0f64..0.5, eps in 0.0f64..0.5) {
                let (x, y) = (sol(a, va), sol(b, vb));
                prop_assert_eq!(cdp_compare(&x, &y, eps), cdp_compare(&y, &x, eps).reverse());
            }

            #[test]
            fn crowding_is_affine_invariant(
                pts in proptest::collection::vec(objective(), 3..12),
                scale in 0.1f64..10.0,
                shift in -1.0f64..1.0,
                axis in 0usize..3,
            ) {
                let base = crowding_distance(&pts);
                let moved: Vec<ObjectiveVector> = pts
                    .iter()
                    .map(|p| {
                        let mut a = p.as_array();
                        a[axis] = a[axis] * scale + shift;
                        ObjectiveVector::from_array(a)
                    })
                    .collect();
                let again = crowding_distance(&moved);
                for (x, y) in base.iter().zip(&again) {
                    if x.is_infinite() {
                        prop_assert!(y.is_infinite());
                    } else {
                        prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
                    }
                }
            }
        }
    }
}

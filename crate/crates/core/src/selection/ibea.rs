//! Indicator-based evolutionary subset search.
//!
//! A fixed-size population of bitmask solutions evolves under binary
//! tournament mating, single-point crossover and bit-flip mutation. Fitness
//! comes from the additive-epsilon indicator with per-phase adaptive
//! normalization of the five objectives; environmental selection repeatedly
//! drops the worst individual, updating the survivors' fitness
//! incrementally. Every evaluated individual feeds an unbounded
//! non-dominated archive, and the archive — not the final population — is
//! returned, so the front is never artificially truncated to the population
//! size.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{evaluate_solution, CandidateSet, ObjectiveVector, Solution};

/// Search hyperparameters. The defaults follow common indicator-based
/// optimizer settings: population 100, 30000 evaluations, single-point
/// crossover at 0.9, bit-flip mutation at 1/nc, kappa 0.05.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub population_size: usize,
    pub max_evaluations: usize,
    pub crossover_prob: f64,
    /// Per-bit flip probability; `None` means `1 / nc`.
    pub mutation_prob: Option<f64>,
    /// Fitness scaling factor of the indicator.
    pub kappa: f64,
    pub seed: u64,
    /// Size budget used when picking one solution off the front;
    /// `None` means `ceil(0.1 * nc)`.
    pub budget: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 100,
            max_evaluations: 30000,
            crossover_prob: 0.9,
            mutation_prob: None,
            kappa: 0.05,
            seed: 0,
            budget: None,
        }
    }
}

impl SearchConfig {
    pub fn check(&self, nc: usize) -> Result<()> {
        if nc < 2 {
            return Err(Error::Selection(format!(
                "need at least 2 candidates to search, got {nc}"
            )));
        }
        if self.population_size < 2 {
            return Err(Error::Selection("population size must be at least 2".into()));
        }
        if self.max_evaluations < self.population_size {
            return Err(Error::Selection(format!(
                "max_evaluations ({}) must be at least the population size ({})",
                self.max_evaluations, self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::Selection(format!(
                "crossover probability {} outside [0, 1]",
                self.crossover_prob
            )));
        }
        if let Some(pm) = self.mutation_prob {
            if !(0.0..=1.0).contains(&pm) {
                return Err(Error::Selection(format!(
                    "mutation probability {pm} outside [0, 1]"
                )));
            }
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Selection("kappa must be positive".into()));
        }
        if let Some(b) = self.budget {
            if b < 2 {
                return Err(Error::Selection("budget must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub fn mutation_for(&self, nc: usize) -> f64 {
        self.mutation_prob.unwrap_or(1.0 / nc as f64)
    }

    pub fn budget_for(&self, nc: usize) -> usize {
        self.budget
            .unwrap_or_else(|| (0.1 * nc as f64).ceil() as usize)
    }
}

struct Individual {
    bits: Vec<bool>,
    min: [f64; 5],
    fitness: f64,
}

/// Unbounded archive of mutually non-dominated (solution, objectives) pairs.
/// Exact duplicate objective vectors keep their first representative.
struct Archive {
    members: Vec<(Vec<bool>, ObjectiveVector, [f64; 5])>,
}

impl Archive {
    fn new() -> Self {
        Archive { members: Vec::new() }
    }

    fn insert(&mut self, bits: &[bool], obj: ObjectiveVector) {
        let min = obj.to_minimization();
        for (_, _, m) in &self.members {
            if dominates_or_equal(m, &min) {
                return;
            }
        }
        self.members.retain(|(_, _, m)| !dominates_min(&min, m));
        self.members.push((bits.to_vec(), obj, min));
    }

    fn into_front(self) -> Vec<(Solution, ObjectiveVector)> {
        let mut members = self.members;
        members.sort_by(|a, b| {
            for d in 0..5 {
                match a.2[d].total_cmp(&b.2[d]) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            a.0.cmp(&b.0)
        });
        members
            .into_iter()
            .map(|(bits, obj, _)| (Solution { bits }, obj))
            .collect()
    }
}

fn dominates_min(a: &[f64; 5], b: &[f64; 5]) -> bool {
    let mut strictly = false;
    for d in 0..5 {
        if a[d] > b[d] {
            return false;
        }
        if a[d] < b[d] {
            strictly = true;
        }
    }
    strictly
}

fn dominates_or_equal(a: &[f64; 5], b: &[f64; 5]) -> bool {
    (0..5).all(|d| a[d] <= b[d])
}

/// Run the search and return the archive's non-dominated front, sorted by
/// minimization vector (then mask) for reproducible output. Deterministic
/// for a fixed seed, including under parallel objective evaluation.
pub fn ibea_search(
    cs: &CandidateSet,
    cfg: &SearchConfig,
) -> Result<Vec<(Solution, ObjectiveVector)>> {
    let nc = cs.len();
    cfg.check(nc)?;
    let alpha = cfg.population_size;
    let pm = cfg.mutation_for(nc);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut archive = Archive::new();

    // Initial population: uniform random masks (the optimizer's classic
    // default), repaired to size >= 2. For large pools the subset-size
    // frontier is then explored downwards by mutation, so a tight budget may
    // stay out of reach within the evaluation limit; pick_solution's
    // minimum-size fallback covers that case.
    let mut masks: Vec<Vec<bool>> = (0..alpha)
        .map(|_| {
            let mut bits: Vec<bool> = (0..nc).map(|_| rng.gen_bool(0.5)).collect();
            repair(&mut bits, &mut rng);
            bits
        })
        .collect();
    let mut population = evaluate_all(&mut masks, cs, &mut archive);
    let mut evaluations = alpha;
    assign_fitness(&mut population, cfg.kappa);

    while evaluations < cfg.max_evaluations {
        // Mating: alpha offspring from binary tournaments on fitness.
        let mut offspring_masks = Vec::with_capacity(alpha);
        while offspring_masks.len() < alpha {
            let p1 = tournament(&population, &mut rng);
            let p2 = tournament(&population, &mut rng);
            let (mut c1, mut c2) = crossover(
                &population[p1].bits,
                &population[p2].bits,
                cfg.crossover_prob,
                &mut rng,
            );
            mutate(&mut c1, pm, &mut rng);
            repair(&mut c1, &mut rng);
            offspring_masks.push(c1);
            if offspring_masks.len() < alpha {
                mutate(&mut c2, pm, &mut rng);
                repair(&mut c2, &mut rng);
                offspring_masks.push(c2);
            }
        }
        let offspring = evaluate_all(&mut offspring_masks, cs, &mut archive);
        evaluations += alpha;

        // Environmental selection over the union.
        population.extend(offspring);
        assign_fitness(&mut population, cfg.kappa);
        environmental_selection(&mut population, alpha, cfg.kappa);
    }

    Ok(archive.into_front())
}

/// Evaluate masks (in parallel; results merged by index) and feed the archive
/// in index order so its contents stay deterministic.
fn evaluate_all(
    masks: &mut Vec<Vec<bool>>,
    cs: &CandidateSet,
    archive: &mut Archive,
) -> Vec<Individual> {
    let objs: Vec<ObjectiveVector> = masks
        .par_iter()
        .map(|bits| {
            let sol = Solution { bits: bits.clone() };
            evaluate_solution(&sol, cs)
        })
        .collect();
    masks
        .drain(..)
        .zip(objs)
        .map(|(bits, obj)| {
            archive.insert(&bits, obj);
            Individual {
                bits,
                min: obj.to_minimization(),
                fitness: 0.0,
            }
        })
        .collect()
}

/// Additive-epsilon indicator on objectives scaled to [0, 1]:
/// the smallest shift that makes `a` weakly dominate `b`.
fn epsilon_indicator(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut eps = f64::NEG_INFINITY;
    for d in 0..5 {
        eps = eps.max(a[d] - b[d]);
    }
    eps
}

/// Fitness of every individual: `F(x) = sum_{y != x} -exp(-I(y, x) / (c k))`
/// where `I` is the additive-epsilon indicator over objectives rescaled to
/// `[0, 1]` across the current set and `c` is the largest indicator
/// magnitude. Higher is better.
fn assign_fitness(pop: &mut [Individual], kappa: f64) {
    let n = pop.len();
    // Adaptive bounds over this phase's set.
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for ind in pop.iter() {
        for d in 0..5 {
            lo[d] = lo[d].min(ind.min[d]);
            hi[d] = hi[d].max(ind.min[d]);
        }
    }
    let scaled: Vec<[f64; 5]> = pop
        .iter()
        .map(|ind| {
            std::array::from_fn(|d| {
                let span = hi[d] - lo[d];
                if span > 0.0 {
                    (ind.min[d] - lo[d]) / span
                } else {
                    0.0
                }
            })
        })
        .collect();

    let mut indicator = vec![0.0f64; n * n];
    let mut c = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let i = epsilon_indicator(&scaled[x], &scaled[y]);
            indicator[x * n + y] = i;
            c = c.max(i.abs());
        }
    }
    if c == 0.0 {
        c = 1.0;
    }
    for (y, ind) in pop.iter_mut().enumerate() {
        let mut f = 0.0;
        for x in 0..n {
            if x == y {
                continue;
            }
            f -= (-indicator[x * n + y] / (c * kappa)).exp();
        }
        ind.fitness = f;
    }
}

/// Iteratively drop the worst-fitness individual until `alpha` remain,
/// adding the removed individual's indicator term back onto the survivors.
fn environmental_selection(pop: &mut Vec<Individual>, alpha: usize, kappa: f64) {
    // Rebuild the scaled indicator matrix used by assign_fitness. Bounds are
    // the ones of the full union set, matching the fitness just assigned.
    let n = pop.len();
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for ind in pop.iter() {
        for d in 0..5 {
            lo[d] = lo[d].min(ind.min[d]);
            hi[d] = hi[d].max(ind.min[d]);
        }
    }
    let scaled: Vec<[f64; 5]> = pop
        .iter()
        .map(|ind| {
            std::array::from_fn(|d| {
                let span = hi[d] - lo[d];
                if span > 0.0 {
                    (ind.min[d] - lo[d]) / span
                } else {
                    0.0
                }
            })
        })
        .collect();
    let mut indicator = vec![0.0f64; n * n];
    let mut c = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let i = epsilon_indicator(&scaled[x], &scaled[y]);
            indicator[x * n + y] = i;
            c = c.max(i.abs());
        }
    }
    if c == 0.0 {
        c = 1.0;
    }

    let mut alive: Vec<usize> = (0..n).collect();
    while alive.len() > alpha {
        // Worst fitness; ties resolve to the earliest index.
        let mut worst_pos = 0;
        for (pos, &i) in alive.iter().enumerate() {
            if pop[i].fitness < pop[alive[worst_pos]].fitness {
                worst_pos = pos;
            }
        }
        let removed = alive.remove(worst_pos);
        for &y in &alive {
            pop[y].fitness += (-indicator[removed * n + y] / (c * kappa)).exp();
        }
    }

    let keep: std::collections::BTreeSet<usize> = alive.into_iter().collect();
    let mut idx = 0;
    pop.retain(|_| {
        let k = keep.contains(&idx);
        idx += 1;
        k
    });
}

fn tournament(pop: &[Individual], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.gen_range(0..pop.len());
    let b = rng.gen_range(0..pop.len());
    // Ties keep the first pick, so the draw order fixes the outcome.
    if pop[b].fitness > pop[a].fitness {
        b
    } else {
        a
    }
}

fn crossover(
    a: &[bool],
    b: &[bool],
    pc: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<bool>, Vec<bool>) {
    if pc > 0.0 && rng.gen_bool(pc) {
        let point = rng.gen_range(1..a.len());
        let mut c1 = a[..point].to_vec();
        c1.extend_from_slice(&b[point..]);
        let mut c2 = b[..point].to_vec();
        c2.extend_from_slice(&a[point..]);
        (c1, c2)
    } else {
        (a.to_vec(), b.to_vec())
    }
}

fn mutate(bits: &mut [bool], pm: f64, rng: &mut ChaCha8Rng) {
    if pm <= 0.0 {
        return;
    }
    for b in bits.iter_mut() {
        if rng.gen_bool(pm) {
            *b = !*b;
        }
    }
}

/// Minimum feasible subset size (the diversity objective needs a pair).
const MIN_SIZE: usize = 2;

fn repair(bits: &mut [bool], rng: &mut ChaCha8Rng) {
    let mut size = bits.iter().filter(|b| **b).count();
    while size < MIN_SIZE {
        let i = rng.gen_range(0..bits.len());
        if !bits[i] {
            bits[i] = true;
            size += 1;
        }
    }
}

/// Choose one member of a front: among those within the size budget (or the
/// minimum-size members if none fit), the one with the best equal-weight sum
/// of min-max-normalized diversity, distribution, misprediction and
/// uncertainty objectives. Ties prefer smaller subsets, then lower index.
/// Returns the index into `front`.
pub fn pick_solution(front: &[(Solution, ObjectiveVector)], budget: usize) -> Result<usize> {
    if front.is_empty() {
        return Err(Error::Selection("cannot pick from an empty front".into()));
    }
    let within: Vec<usize> = (0..front.len())
        .filter(|&i| front[i].1.ss <= budget)
        .collect();
    let pool: Vec<usize> = if !within.is_empty() {
        within
    } else {
        let min_ss = front.iter().map(|(_, o)| o.ss).min().expect("non-empty");
        (0..front.len())
            .filter(|&i| front[i].1.ss == min_ss)
            .collect()
    };

    // Min-max bounds of the four maximized objectives over the pool.
    let values = |o: &ObjectiveVector| [o.cmd, o.rcd, o.fpp, o.pu];
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for &i in &pool {
        let v = values(&front[i].1);
        for d in 0..4 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    let score = |o: &ObjectiveVector| -> f64 {
        let v = values(o);
        (0..4)
            .map(|d| {
                let span = hi[d] - lo[d];
                if span > 0.0 {
                    (v[d] - lo[d]) / span
                } else {
                    0.0
                }
            })
            .sum()
    };

    let mut best = pool[0];
    let mut best_score = score(&front[best].1);
    for &i in &pool[1..] {
        let s = score(&front[i].1);
        let better = s > best_score
            || (s == best_score && front[i].1.ss < front[best].1.ss);
        if better {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

//! Evolutionary maximization of the entropy objective under a cost budget,
//! plus the baselines it is compared against.
//!
//! One iteration refills the population from `K` survivors to `M` members
//! by mutating uniformly chosen survivors (infeasible children are dropped),
//! then keeps the `K` best. Every child draws from its own random stream,
//! addressed by `(seed, generation, attempt)`, so the outcome does not depend
//! on how the work is spread over threads.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{mutate, sample_uniform, validate, ArchConfig, SearchSpaceDef};
use crate::costmodel::{compute_cost, count_params, BudgetSpec, DeviceProfile};
use crate::entropy::{score_with, EntropyConfig, EntropyTable, ScoreBreakdown};
use crate::error::{Error, Result};

/// Smallest batch of attempts dispatched at once while filling a population.
const MIN_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Entropy,
    /// Decoder parameter count, every layer counted.
    DecoderParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: u64,
    pub population_size: usize,
    pub parent_size: usize,
    pub budget: BudgetSpec,
    pub seed: u64,
    pub init_rejection_cap: usize,
    /// Attempts per refill before giving up on a full population; defaults
    /// to `100·M`.
    #[serde(default)]
    pub refill_attempt_cap: Option<usize>,
    #[serde(default)]
    pub objective: Objective,
}

impl SearchConfig {
    pub fn new(budget: BudgetSpec) -> Self {
        Self {
            iterations: 100_000,
            population_size: 512,
            parent_size: 64,
            budget,
            seed: 0,
            init_rejection_cap: 100_000,
            refill_attempt_cap: None,
            objective: Objective::Entropy,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.parent_size == 0 || self.parent_size >= self.population_size {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= parent_size < population_size, got K={} M={}",
                self.parent_size, self.population_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        self.budget.check()
    }

    fn refill_cap(&self) -> usize {
        self.refill_attempt_cap.unwrap_or(100 * self.population_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: ArchConfig,
    pub score: ScoreBreakdown,
    /// Value being maximized; equals `score.total` for the entropy objective.
    pub fitness: f64,
    pub cost_value: f64,
    pub generation: u64,
    pub fingerprint: u64,
    pub parent_fingerprint: Option<u64>,
}

/// Best first: higher fitness, then lower cost, then smaller encoding.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.cost_value.total_cmp(&b.cost_value))
        .then_with(|| a.arch.encoding().cmp(&b.arch.encoding()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u64,
    pub best_score: f64,
    pub mean_score: f64,
    pub best_cost: f64,
    pub population_size: usize,
    pub distinct: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Candidate,
    pub history: Vec<GenerationStats>,
    pub config: SearchConfig,
    /// Feasible candidates scored, initial population included.
    pub evaluations: u64,
    /// Architectures drawn, feasible or not.
    pub attempts: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

// wall time is the only field allowed to differ between identical runs
impl PartialEq for SearchResult {
    fn eq(&self, other: &Self) -> bool {
        self.best == other.best
            && self.history == other.history
            && self.config == other.config
            && self.evaluations == other.evaluations
            && self.attempts == other.attempts
    }
}

impl SearchResult {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,best_score,mean_score,best_cost\n");
        for h in &self.history {
            out.push_str(&format!(
                "{},{},{},{}\n",
                h.generation, h.best_score, h.mean_score, h.best_cost
            ));
        }
        out
    }
}

/// Everything needed to turn an architecture into a scored candidate.
pub struct Evaluator<'a> {
    pub space: &'a SearchSpaceDef,
    pub entropy: &'a EntropyConfig,
    pub table: &'a EntropyTable,
    pub budget: &'a BudgetSpec,
    pub profile: Option<&'a DeviceProfile>,
    pub objective: Objective,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        space: &'a SearchSpaceDef,
        entropy: &'a EntropyConfig,
        table: &'a EntropyTable,
        budget: &'a BudgetSpec,
        profile: Option<&'a DeviceProfile>,
    ) -> Result<Self> {
        space.check()?;
        budget.check()?;
        table.check_config(entropy)?;
        if !table.covers(space) {
            return Err(Error::StaleTable("table does not cover the search space".into()));
        }
        Ok(Self {
            space,
            entropy,
            table,
            budget,
            profile,
            objective: Objective::Entropy,
        })
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    /// Scores `arch`, or returns `None` if it breaks the budget.
    pub fn evaluate(
        &self,
        arch: ArchConfig,
        generation: u64,
        parent_fingerprint: Option<u64>,
    ) -> Result<Option<Candidate>> {
        let cost = compute_cost(&arch, self.budget, self.profile)?;
        if !cost.feasible {
            return Ok(None);
        }
        let score = score_with(&arch, self.entropy, self.table)?;
        let fitness = match self.objective {
            Objective::Entropy => score.total,
            Objective::DecoderParams => decoder_param_proxy(&arch)?,
        };
        Ok(Some(Candidate {
            fingerprint: arch.fingerprint(),
            arch,
            score,
            fitness,
            cost_value: cost.value,
            generation,
            parent_fingerprint,
        }))
    }
}

const PHASE_INIT: u64 = 1;
const PHASE_REFILL: u64 = 2;
const PHASE_RANDOM: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, phase: u64, generation: u64, attempt: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [phase, generation, attempt as u64] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Runs attempts `0, 1, …` in deterministic batches until `need` feasible
/// candidates are found or `cap` attempts are spent. Returns the candidates
/// in attempt order and the number of attempts made.
fn collect_feasible<F>(need: usize, cap: usize, attempt: F) -> Result<(Vec<Candidate>, usize)>
where
    F: Fn(usize) -> Result<Option<Candidate>> + Sync,
{
    let mut found = Vec::with_capacity(need);
    let mut next = 0;
    while found.len() < need && next < cap {
        let batch = (need - found.len()).max(MIN_BATCH).min(cap - next);
        let outcomes: Vec<_> = (next..next + batch).into_par_iter().map(&attempt).collect();
        next += batch;
        for outcome in outcomes {
            if let Some(c) = outcome? {
                if found.len() < need {
                    found.push(c);
                }
            }
        }
    }
    Ok((found, next))
}

/// `K` uniform samples that fit the budget.
pub fn init_population(eval: &Evaluator<'_>, cfg: &SearchConfig) -> Result<(Vec<Candidate>, usize)> {
    let (pop, attempts) = collect_feasible(cfg.parent_size, cfg.init_rejection_cap, |i| {
        let mut rng = stream(cfg.seed, PHASE_INIT, 0, i);
        let arch = sample_uniform(eval.space, &mut rng)?;
        eval.evaluate(arch, 0, None)
    })?;
    if pop.len() < cfg.parent_size {
        return Err(Error::InfeasibleBudget(format!(
            "found {} of {} feasible architectures in {} draws under {} <= {}",
            pop.len(),
            cfg.parent_size,
            attempts,
            eval.budget.metric,
            eval.budget.limit
        )));
    }
    Ok((pop, attempts))
}

fn stats(generation: u64, population: &[Candidate], best: &Candidate) -> GenerationStats {
    let mean = population.iter().map(|c| c.fitness).sum::<f64>() / population.len() as f64;
    let distinct = population.iter().map(|c| c.fingerprint).collect::<HashSet<_>>().len();
    GenerationStats {
        generation,
        best_score: best.fitness,
        mean_score: mean,
        best_cost: best.cost_value,
        population_size: population.len(),
        distinct,
    }
}

fn update_best(best: &mut Candidate, pool: &[Candidate]) {
    if let Some(top) = pool.iter().min_by(|a, b| rank(a, b)) {
        if rank(top, best) == Ordering::Less {
            *best = top.clone();
        }
    }
}

fn assert_admissible(eval: &Evaluator<'_>, population: &[Candidate]) {
    for c in population {
        assert!(c.cost_value <= eval.budget.limit, "over-budget candidate admitted");
        assert!(validate(&c.arch, eval.space).is_ok(), "invalid candidate admitted");
    }
}

pub fn ea_search(eval: &Evaluator<'_>, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.check()?;
    let started = Instant::now();
    let (mut population, init_attempts) = init_population(eval, cfg)?;
    let mut attempts = init_attempts as u64;
    let mut evaluations = population.len() as u64;
    population.sort_by(rank);
    let mut best = population[0].clone();
    let mut history = vec![stats(0, &population, &best)];

    let children_needed = cfg.population_size - cfg.parent_size;
    for generation in 1..=cfg.iterations {
        let parents = &population;
        let (children, used) = collect_feasible(children_needed, cfg.refill_cap(), |i| {
            let mut rng = stream(cfg.seed, PHASE_REFILL, generation, i);
            let parent = &parents[rng.random_range(0..parents.len())];
            let child = mutate(&parent.arch, eval.space, &mut rng)?;
            eval.evaluate(child, generation, Some(parent.fingerprint))
        })?;
        attempts += used as u64;
        evaluations += children.len() as u64;
        update_best(&mut best, &children);

        population.extend(children);
        debug_assert!(population.len() <= cfg.population_size);
        population.sort_by(rank);
        population.truncate(cfg.parent_size);
        assert_admissible(eval, &population);
        history.push(stats(generation, &population, &best));
    }

    Ok(SearchResult {
        best,
        history,
        config: cfg.clone(),
        evaluations,
        attempts,
        wall_time: started.elapsed(),
    })
}

/// Uniform sampling with the same number of scored candidates as a full
/// evolutionary run, `T·(M−K)`, reported in `M−K` sized generations.
pub fn random_search_baseline(eval: &Evaluator<'_>, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.check()?;
    let started = Instant::now();
    let per_generation = cfg.population_size - cfg.parent_size;
    let cap = cfg.init_rejection_cap.max(100 * per_generation);
    let mut best: Option<Candidate> = None;
    let mut history = Vec::new();
    let mut attempts = 0u64;
    let mut evaluations = 0u64;
    for generation in 0..cfg.iterations {
        let (batch, used) = collect_feasible(per_generation, cap, |i| {
            let mut rng = stream(cfg.seed, PHASE_RANDOM, generation, i);
            let arch = sample_uniform(eval.space, &mut rng)?;
            eval.evaluate(arch, generation, None)
        })?;
        attempts += used as u64;
        evaluations += batch.len() as u64;
        if batch.is_empty() {
            continue;
        }
        match &mut best {
            Some(b) => update_best(b, &batch),
            None => best = batch.iter().min_by(|a, b| rank(a, b)).cloned(),
        }
        if let Some(b) = &best {
            history.push(stats(generation, &batch, b));
        }
    }
    let best = best.ok_or_else(|| {
        Error::InfeasibleBudget(format!(
            "no feasible architecture in {attempts} uniform draws under {} <= {}",
            eval.budget.metric, eval.budget.limit
        ))
    })?;
    Ok(SearchResult {
        best,
        history,
        config: cfg.clone(),
        evaluations,
        attempts,
        wall_time: started.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Depth,
    Width,
}

fn next_choice(set: &[u32], v: u32) -> u32 {
    match set.binary_search(&v) {
        Ok(i) if i + 1 < set.len() => set[i + 1],
        _ => v,
    }
}

/// Grows the minimal uniform architecture along one axis, all blocks in
/// lockstep, until the next step would break the budget.
pub fn naive_scaling_baseline(
    kind: ScalingKind,
    budget: &BudgetSpec,
    space: &SearchSpaceDef,
    profile: Option<&DeviceProfile>,
) -> Result<ArchConfig> {
    space.check()?;
    let mut arch = space.minimal_arch();
    if !compute_cost(&arch, budget, profile)?.feasible {
        return Err(Error::InfeasibleBudget(format!(
            "the minimal architecture exceeds {} <= {}",
            budget.metric, budget.limit
        )));
    }
    loop {
        let mut next = arch.clone();
        for b in &mut next.blocks {
            match kind {
                ScalingKind::Depth => b.depth = next_choice(&space.depth_choices, b.depth),
                ScalingKind::Width => {
                    b.embed_dim = next_choice(&space.embed_choices, b.embed_dim);
                    b.ffn_dim = next_choice(&space.ffn_choices, b.ffn_dim);
                }
            }
        }
        if next == arch || !compute_cost(&next, budget, profile)?.feasible {
            return Ok(arch);
        }
        arch = next;
    }
}

/// Parameter count of the decoder blocks alone, every layer counted.
pub fn decoder_param_proxy(arch: &ArchConfig) -> Result<f64> {
    let mut unshared = arch.clone();
    unshared.param_sharing = false;
    Ok(count_params(&unshared)?.per_block_shared as f64)
}

//! Generational genetic algorithm over network descriptors.
//!
//! Each generation truncation-selects the strongest candidates, breeds a
//! full batch of offspring by single mutations, and keeps the best of
//! parents plus offspring. Fitness evaluation runs in parallel but every
//! candidate's evaluation seed is a pure function of its identity, so the
//! result is identical regardless of thread count or scheduling.

use crate::descriptor::{random_descriptor, random_layer, NetworkDescriptor, SearchConstraints};
use crate::error::{Error, Result};
use crate::fitness::FitnessValue;
use crate::rng::{derive_seed, stream, tag_bytes};
use rand::Rng;
use rayon::prelude::*;
use std::cmp::Ordering;

#[derive(Debug, Clone)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    /// How many survivors become parents each generation.
    pub selection_size: usize,
    /// Reserved knob; recombination is not implemented, so this must be 0.
    pub crossover_rate: f64,
    pub constraints: SearchConstraints,
    pub global_seed: u64,
}

impl GaConfig {
    pub fn new(population_size: usize, generations: usize, global_seed: u64) -> Self {
        GaConfig {
            population_size,
            generations,
            selection_size: (population_size / 2).max(1),
            crossover_rate: 0.0,
            constraints: SearchConstraints::default(),
            global_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Evolution("population must hold at least 2".into()));
        }
        if self.generations == 0 {
            return Err(Error::Evolution("need at least one generation".into()));
        }
        if self.selection_size == 0 || self.selection_size > self.population_size {
            return Err(Error::Evolution(format!(
                "selection size {} outside 1..={}",
                self.selection_size, self.population_size
            )));
        }
        if self.crossover_rate != 0.0 {
            return Err(Error::Evolution(
                "crossover is not implemented; crossover_rate must be 0".into(),
            ));
        }
        if self.constraints.max_depth == 0 || self.constraints.max_width == 0 {
            return Err(Error::Evolution("constraints must allow depth and width 1".into()));
        }
        Ok(())
    }
}

/// One candidate in the population. `id` is (generation born, index within
/// that generation's batch); it never changes, so survivors keep their
/// fitness and their evaluation seed across generations.
#[derive(Debug, Clone)]
pub struct Individual {
    pub descriptor: NetworkDescriptor,
    pub fitness: Option<FitnessValue>,
    pub id: (u32, u32),
}

impl Individual {
    /// Higher fitness first; among equals the longer-lived individual and
    /// then the lower index wins, which keeps every ordering decision
    /// deterministic.
    fn rank(&self, other: &Self) -> Ordering {
        let a = self.fitness.map(|v| v.f).unwrap_or(f64::NEG_INFINITY);
        let b = other.fitness.map(|v| v.f).unwrap_or(f64::NEG_INFINITY);
        b.total_cmp(&a).then_with(|| self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    /// One evaluated population per index: entry 0 is the initial
    /// population, entry g the population after generation g. Each is
    /// sorted best-first.
    pub snapshots: Vec<Vec<Individual>>,
    /// Best fitness per snapshot; non-decreasing because survivors carry
    /// over.
    pub best_per_generation: Vec<f64>,
    /// Total fitness evaluations performed.
    pub evaluations: usize,
}

impl EvolutionResult {
    pub fn final_population(&self) -> &[Individual] {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    pub fn best(&self) -> &Individual {
        &self.final_population()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationOp {
    LayerChange,
    AddLayer,
    DelLayer,
    ActivChange,
    WeightChange,
}

impl MutationOp {
    pub fn name(self) -> &'static str {
        match self {
            MutationOp::LayerChange => "layer_change",
            MutationOp::AddLayer => "add_layer",
            MutationOp::DelLayer => "del_layer",
            MutationOp::ActivChange => "activ_change",
            MutationOp::WeightChange => "weight_change",
        }
    }
}

const OPS: [MutationOp; 5] = [
    MutationOp::LayerChange,
    MutationOp::AddLayer,
    MutationOp::DelLayer,
    MutationOp::ActivChange,
    MutationOp::WeightChange,
];

/// Redraws every field of one uniformly chosen layer.
pub fn layer_change(
    d: &NetworkDescriptor,
    constraints: &SearchConstraints,
    rng: &mut impl Rng,
) -> NetworkDescriptor {
    let mut out = d.clone();
    let layer = rng.random_range(0..d.depth());
    let (w, a, i, dr, bn) = random_layer(constraints, rng);
    out.hidden_widths[layer] = w;
    out.activations[layer] = a;
    out.initializers[layer] = i;
    out.dropout_flags[layer] = dr;
    out.batchnorm_flags[layer] = bn;
    out
}

/// Inserts a fresh random layer at a uniform position. At maximum depth
/// this is a no-op; `mutate` redraws instead of calling it there.
pub fn add_layer(
    d: &NetworkDescriptor,
    constraints: &SearchConstraints,
    rng: &mut impl Rng,
) -> NetworkDescriptor {
    if d.depth() >= constraints.max_depth {
        return d.clone();
    }
    let mut out = d.clone();
    let pos = rng.random_range(0..=d.depth());
    let (w, a, i, dr, bn) = random_layer(constraints, rng);
    out.hidden_widths.insert(pos, w);
    out.activations.insert(pos, a);
    out.initializers.insert(pos, i);
    out.dropout_flags.insert(pos, dr);
    out.batchnorm_flags.insert(pos, bn);
    out
}

/// Removes a uniformly chosen layer. At depth 1 this is a no-op; `mutate`
/// redraws instead of calling it there.
pub fn del_layer(d: &NetworkDescriptor, rng: &mut impl Rng) -> NetworkDescriptor {
    if d.depth() <= 1 {
        return d.clone();
    }
    let mut out = d.clone();
    let pos = rng.random_range(0..d.depth());
    out.hidden_widths.remove(pos);
    out.activations.remove(pos);
    out.initializers.remove(pos);
    out.dropout_flags.remove(pos);
    out.batchnorm_flags.remove(pos);
    out
}

/// Swaps one layer's activation for a different one, uniform over the rest.
pub fn activ_change(d: &NetworkDescriptor, rng: &mut impl Rng) -> NetworkDescriptor {
    use crate::activation::ACTIVATIONS;
    let mut out = d.clone();
    let layer = rng.random_range(0..d.depth());
    let current = out.activations[layer];
    let others: Vec<_> = ACTIVATIONS.iter().copied().filter(|&a| a != current).collect();
    out.activations[layer] = others[rng.random_range(0..others.len())];
    out
}

/// Swaps one layer's weight initializer for a different one.
pub fn weight_change(d: &NetworkDescriptor, rng: &mut impl Rng) -> NetworkDescriptor {
    use crate::init::INITIALIZERS;
    let mut out = d.clone();
    let layer = rng.random_range(0..d.depth());
    let current = out.initializers[layer];
    let others: Vec<_> = INITIALIZERS
        .iter()
        .copied()
        .filter(|&i| i != current)
        .collect();
    out.initializers[layer] = others[rng.random_range(0..others.len())];
    out
}

/// Applies one uniformly drawn operator. Operators that cannot act at the
/// current depth bounds (add at max depth, delete at depth 1) are redrawn
/// rather than wasted.
pub fn mutate(
    d: &NetworkDescriptor,
    constraints: &SearchConstraints,
    rng: &mut impl Rng,
) -> (NetworkDescriptor, MutationOp) {
    loop {
        let op = OPS[rng.random_range(0..OPS.len())];
        match op {
            MutationOp::LayerChange => return (layer_change(d, constraints, rng), op),
            MutationOp::AddLayer if d.depth() < constraints.max_depth => {
                return (add_layer(d, constraints, rng), op)
            }
            MutationOp::DelLayer if d.depth() > 1 => return (del_layer(d, rng), op),
            MutationOp::ActivChange => return (activ_change(d, rng), op),
            MutationOp::WeightChange => return (weight_change(d, rng), op),
            _ => continue,
        }
    }
}

/// The `count` fittest individuals, best first. Ties fall to the older and
/// then lower-indexed individual.
pub fn truncation_select(population: &[Individual], count: usize) -> Result<Vec<Individual>> {
    if count == 0 || count > population.len() {
        return Err(Error::Evolution(format!(
            "cannot select {count} of {}",
            population.len()
        )));
    }
    if let Some(bad) = population.iter().find(|ind| ind.fitness.is_none()) {
        return Err(Error::Evolution(format!(
            "individual {:?} has no fitness yet",
            bad.id
        )));
    }
    let mut ranked: Vec<Individual> = population.to_vec();
    ranked.sort_by(|a, b| a.rank(b));
    ranked.truncate(count);
    Ok(ranked)
}

fn evaluate_fresh<F>(batch: &mut [Individual], global_seed: u64, evaluator: &F) -> Result<usize>
where
    F: Fn(&NetworkDescriptor, u64) -> Result<FitnessValue> + Sync,
{
    let fresh: usize = batch.iter().filter(|ind| ind.fitness.is_none()).count();
    batch
        .par_iter_mut()
        .filter(|ind| ind.fitness.is_none())
        .try_for_each(|ind| {
            let seed = derive_seed(global_seed, &[u64::from(ind.id.0), u64::from(ind.id.1)]);
            ind.fitness = Some(evaluator(&ind.descriptor, seed)?);
            Ok::<(), Error>(())
        })?;
    Ok(fresh)
}

/// Runs the full loop: random initial population, then `generations`
/// rounds of select, mutate, evaluate, replace. The evaluator must be a
/// pure function of (descriptor, seed).
pub fn evolve<F>(config: &GaConfig, evaluator: F) -> Result<EvolutionResult>
where
    F: Fn(&NetworkDescriptor, u64) -> Result<FitnessValue> + Sync,
{
    config.validate()?;
    let mut ga_rng = stream(derive_seed(config.global_seed, &[tag_bytes(b"ga")]));
    let mut evaluations = 0usize;

    let mut population: Vec<Individual> = (0..config.population_size)
        .map(|i| Individual {
            descriptor: random_descriptor(&config.constraints, &mut ga_rng),
            fitness: None,
            id: (0, i as u32),
        })
        .collect();
    evaluations += evaluate_fresh(&mut population, config.global_seed, &evaluator)?;
    population.sort_by(|a, b| a.rank(b));

    let mut snapshots = Vec::with_capacity(config.generations + 1);
    let mut best_per_generation = Vec::with_capacity(config.generations + 1);
    let log_gen = |gen: usize, pop: &[Individual]| {
        let best = pop[0].fitness.unwrap();
        let mean: f64 =
            pop.iter().map(|i| i.fitness.unwrap().f).sum::<f64>() / pop.len() as f64;
        log::info!(
            "generation {gen}: best {:.4} mean {mean:.4} ({})",
            best.f,
            pop[0].descriptor
        );
    };
    log_gen(0, &population);
    best_per_generation.push(population[0].fitness.unwrap().f);
    snapshots.push(population.clone());

    for gen in 1..=config.generations {
        let parents = truncation_select(&population, config.selection_size)?;
        let mut offspring: Vec<Individual> = (0..config.population_size)
            .map(|i| {
                let parent = &parents[ga_rng.random_range(0..parents.len())];
                let (child, _) = mutate(&parent.descriptor, &config.constraints, &mut ga_rng);
                Individual {
                    descriptor: child,
                    fitness: None,
                    id: (gen as u32, i as u32),
                }
            })
            .collect();
        evaluations += evaluate_fresh(&mut offspring, config.global_seed, &evaluator)?;

        let mut pool = parents;
        pool.extend(offspring);
        pool.sort_by(|a, b| a.rank(b));
        pool.truncate(config.population_size);
        population = pool;

        log_gen(gen, &population);
        best_per_generation.push(population[0].fitness.unwrap().f);
        snapshots.push(population.clone());
    }

    Ok(EvolutionResult {
        snapshots,
        best_per_generation,
        evaluations,
    })
}

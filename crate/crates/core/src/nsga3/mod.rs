//! Reference-point many-objective evolution of PINN parameter genomes with
//! a memetic ADAM phase every generation.
//!
//! One generation: every individual takes `epochs_per_generation` ADAM
//! steps on the unit-weight scalar loss and is re-evaluated; parents are
//! ranked and associated with reference directions; `N` offspring are bred
//! by tournament, uniform crossover and Gaussian mutation; the `2N` union is
//! reduced back to `N` by non-dominated fronts and niching.

mod reference;
mod sorting;
mod variation;

pub use reference::{associate, survival_select, Niche, Normalization, ReferencePoints, Selection};
pub use sorting::{dominates, fast_nondominated_sort, ranks, Dominance, Fronts};
pub use variation::{make_offspring, tournament, Parent, VariationConfig};

use std::path::Path;

use log::{debug, info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{train_adam, AdamConfig, AdamState, LossRecord, TrainOptions};
use crate::error::{Error, Result};
use crate::losses::{weighted_scalar, LossWeights, ObjectiveVector, PinnLoss, Residuals, OBJECTIVE_NAMES};
use crate::observations::{csv_err, fmt, io_err};
use crate::scalar::{derive_seed, Real};

const STREAM_INIT: u64 = 0x1417;
const STREAM_MEMETIC: u64 = 0xAD;
const STREAM_VARIATION: u64 = 0xC0;
const STREAM_SURVIVAL: u64 = 0x5E;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nsga3Config {
    pub population: usize,
    pub generations: usize,
    pub epochs_per_generation: usize,
    pub adam: AdamConfig,
    /// Residual points per memetic epoch; `None` uses all of them.
    pub residual_batch: Option<usize>,
    /// Leading residual points used to score individuals; `None` uses all.
    pub eval_residuals: Option<usize>,
    /// Das–Dennis divisions of the reference lattice.
    pub divisions: usize,
    pub variation: VariationConfig,
}

impl Default for Nsga3Config {
    fn default() -> Self {
        Self {
            population: 24,
            generations: 4,
            epochs_per_generation: 1000,
            adam: AdamConfig::default(),
            residual_batch: None,
            eval_residuals: None,
            divisions: 4,
            variation: VariationConfig::default(),
        }
    }
}

impl Nsga3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, v: usize| Err(Error::Domain { what, value: v as f64 });
        if self.population < 1 {
            return bad("population must be at least 1", self.population);
        }
        if self.divisions < 1 {
            return bad("reference lattice needs at least one division", self.divisions);
        }
        if self.residual_batch == Some(0) {
            return bad("residual batch must be positive", 0);
        }
        if self.eval_residuals == Some(0) {
            return bad("evaluation subset must be positive", 0);
        }
        Ok(())
    }
}

/// One genome with its cached evaluation.
#[derive(Clone, Debug)]
pub struct Individual<T> {
    pub id: u64,
    genome: Vec<T>,
    objectives: Option<ObjectiveVector>,
    pub rank: Option<usize>,
    pub niche: Option<Niche>,
    /// Loss trajectory of the most recent memetic phase.
    pub last_phase: Vec<LossRecord>,
}

impl<T: Real> Individual<T> {
    pub fn new(id: u64, genome: Vec<T>) -> Self {
        Self { id, genome, objectives: None, rank: None, niche: None, last_phase: Vec::new() }
    }

    pub fn genome(&self) -> &[T] {
        &self.genome
    }

    /// Replaces the genome and drops everything derived from the old one.
    pub fn set_genome(&mut self, genome: Vec<T>) {
        self.genome = genome;
        self.objectives = None;
        self.rank = None;
        self.niche = None;
    }

    pub fn objectives(&self) -> Option<&ObjectiveVector> {
        self.objectives.as_ref()
    }

    /// Unit-weight scalar loss, `+∞` when unevaluated.
    pub fn scalar(&self) -> f64 {
        self.objectives.map_or(f64::INFINITY, |o| {
            let s = weighted_scalar(&o, &LossWeights::default());
            if s.is_finite() {
                s
            } else {
                f64::INFINITY
            }
        })
    }

    fn evaluate(&mut self, loss: &PinnLoss<'_>, residuals: Residuals<'_>) {
        self.objectives = Some(match loss.objectives(&self.genome, residuals) {
            Ok(o) if o.to_f64().is_finite() => o.to_f64(),
            Ok(_) | Err(_) => ObjectiveVector::from_array([f64::INFINITY; 4]),
        });
    }
}

#[derive(Clone, Debug)]
pub struct Population<T> {
    pub individuals: Vec<Individual<T>>,
    pub generation: usize,
    next_id: u64,
}

impl<T: Real> Population<T> {
    /// Individuals in the first non-dominated front.
    pub fn pareto_front(&self) -> Vec<&Individual<T>> {
        self.individuals.iter().filter(|i| i.rank == Some(1)).collect()
    }

    /// Rank-1 individual with the smallest unit-weight loss (lowest id on
    /// ties).
    pub fn best(&self) -> Option<&Individual<T>> {
        self.pareto_front().into_iter().min_by(|a, b| a.scalar().total_cmp(&b.scalar()).then(a.id.cmp(&b.id)))
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    fn objective_arrays(&self) -> Vec<[f64; 4]> {
        self.individuals.iter().map(|i| i.objectives.map_or([f64::INFINITY; 4], |o| o.as_array())).collect()
    }

    fn apply_selection(&mut self, sel: &Selection) {
        for (k, ind) in self.individuals.iter_mut().enumerate() {
            ind.rank = Some(sel.ranks[k]);
            ind.niche = sel.niches[k];
        }
    }
}

/// One row of the per-generation population summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub generation: usize,
    pub id: u64,
    pub objectives: ObjectiveVector,
    pub rank: usize,
}

/// Output of an evolutionary run.
#[derive(Clone, Debug, Default)]
pub struct EvolutionLog {
    pub fronts: Vec<FrontRow>,
    /// Memetic loss trajectory of each generation's best survivor, with
    /// epochs counted across generations.
    pub losses: Vec<LossRecord>,
}

fn eval_subset(loss: &PinnLoss<'_>, cfg: &Nsga3Config) -> Vec<usize> {
    let n = loss.coll.res.len();
    (0..cfg.eval_residuals.map_or(n, |k| k.min(n))).collect()
}

fn snapshot<T: Real>(pop: &Population<T>) -> Vec<FrontRow> {
    pop.individuals
        .iter()
        .map(|i| FrontRow {
            generation: pop.generation,
            id: i.id,
            objectives: i.objectives.unwrap_or(ObjectiveVector::from_array([f64::INFINITY; 4])),
            rank: i.rank.unwrap_or(0),
        })
        .collect()
}

fn rank_in_place<T: Real>(pop: &mut Population<T>, refs: &ReferencePoints, seed: u64) {
    let objs = pop.objective_arrays();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sel = survival_select(&objs, refs, objs.len(), &mut rng);
    pop.apply_selection(&sel);
}

fn check_alive<T: Real>(pop: &Population<T>, stage: &str) -> Result<()> {
    if pop.individuals.iter().all(|i| !i.scalar().is_finite()) {
        return Err(Error::Diverged(format!("every individual has non-finite objectives after {stage} (generation {})", pop.generation)));
    }
    Ok(())
}

/// Random initial population, evaluated and ranked.
pub fn init_population<T: Real>(loss: &PinnLoss<'_>, cfg: &Nsga3Config, seed: u64) -> Result<Population<T>> {
    cfg.validate()?;
    let subset = eval_subset(loss, cfg);
    let mut individuals: Vec<Individual<T>> = (0..cfg.population as u64)
        .map(|id| {
            let s = derive_seed(derive_seed(seed, STREAM_INIT), id);
            Individual::new(id, loss.spec.init_parameters::<T>(loss.net, s).into_inner())
        })
        .collect();
    individuals.par_iter_mut().for_each(|i| i.evaluate(loss, Residuals::Subset(&subset)));
    let mut pop = Population { individuals, generation: 0, next_id: cfg.population as u64 };
    check_alive(&pop, "initialization")?;
    let refs = ReferencePoints::das_dennis(4, cfg.divisions);
    rank_in_place(&mut pop, &refs, derive_seed(seed, STREAM_SURVIVAL));
    Ok(pop)
}

/// Advances `pop` by `cfg.generations` generations against `loss`.
pub fn evolve<T: Real>(loss: &PinnLoss<'_>, pop: &mut Population<T>, cfg: &Nsga3Config, seed: u64) -> Result<EvolutionLog> {
    cfg.validate()?;
    let refs = ReferencePoints::das_dennis(4, cfg.divisions);
    let subset = eval_subset(loss, cfg);
    let n = pop.len();
    let mut log = EvolutionLog::default();
    let mut epoch_offset = 0;
    // Objectives may have been computed against a different data set.
    pop.individuals.par_iter_mut().for_each(|i| i.evaluate(loss, Residuals::Subset(&subset)));
    for _ in 0..cfg.generations {
        pop.generation += 1;
        let gen_seed = derive_seed(seed, pop.generation as u64);
        let slot = loss.net.physics_index();
        pop.individuals.par_iter_mut().for_each(|ind| {
            let opts = TrainOptions {
                epochs: cfg.epochs_per_generation,
                residual_batch: cfg.residual_batch,
                weights: LossWeights::default(),
                seed: derive_seed(derive_seed(gen_seed, STREAM_MEMETIC), ind.id),
            };
            let mut genome = ind.genome.clone();
            let mut state = AdamState::new(genome.len(), cfg.adam, slot);
            match train_adam(loss, &mut genome, &mut state, &opts) {
                Ok(records) => {
                    ind.set_genome(genome);
                    ind.last_phase = records;
                    ind.evaluate(loss, Residuals::Subset(&subset));
                }
                Err(e) => {
                    warn!("individual {} diverged during local search: {e}", ind.id);
                    ind.set_genome(genome);
                    ind.last_phase.clear();
                    ind.objectives = Some(ObjectiveVector::from_array([f64::INFINITY; 4]));
                }
            }
        });
        check_alive(pop, "local search")?;
        rank_in_place(pop, &refs, derive_seed(gen_seed, STREAM_SURVIVAL));
        let best_parent = pop.individuals.iter().map(Individual::scalar).fold(f64::INFINITY, f64::min);

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(gen_seed, STREAM_VARIATION));
        let parents: Vec<Parent<'_, T>> = pop
            .individuals
            .iter()
            .map(|i| Parent {
                genome: &i.genome,
                rank: i.rank.unwrap_or(usize::MAX),
                distance: i.niche.map_or(f64::INFINITY, |z| z.distance),
            })
            .collect();
        let kids = make_offspring(&parents, n, &cfg.variation, &mut rng);
        let mut offspring: Vec<Individual<T>> = kids
            .into_iter()
            .map(|g| {
                let id = pop.next_id;
                pop.next_id += 1;
                Individual::new(id, g)
            })
            .collect();
        offspring.par_iter_mut().for_each(|i| i.evaluate(loss, Residuals::Subset(&subset)));

        let mut combined = std::mem::take(&mut pop.individuals);
        combined.extend(offspring);
        let objs: Vec<[f64; 4]> = combined.iter().map(|i| i.objectives.map_or([f64::INFINITY; 4], |o| o.as_array())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(gen_seed, STREAM_SURVIVAL ^ 1));
        let sel = survival_select(&objs, &refs, n, &mut rng);
        let survivors: std::collections::HashSet<usize> = sel.survivors.iter().copied().collect();
        pop.individuals = combined.into_iter().enumerate().filter(|(k, _)| survivors.contains(k)).map(|(_, i)| i).collect();
        // Ranks within the surviving population, as the next tournament sees them.
        rank_in_place(pop, &refs, derive_seed(gen_seed, STREAM_SURVIVAL ^ 2));

        let best = pop.individuals.iter().map(Individual::scalar).fold(f64::INFINITY, f64::min);
        if best > best_parent {
            warn!("generation {}: best scalar loss rose from {best_parent:.4e} to {best:.4e}", pop.generation);
        }
        if let Some(b) = pop.best() {
            for r in &b.last_phase {
                log.losses.push(LossRecord { epoch: epoch_offset + r.epoch, ..*r });
            }
        }
        epoch_offset += cfg.epochs_per_generation;
        let front = pop.pareto_front().len();
        let survived_kids = pop.individuals.iter().filter(|i| i.last_phase.is_empty()).count();
        info!("generation {}: front size {front}, best scalar {best:.4e}, offspring kept {survived_kids}", pop.generation);
        debug!("generation {} objectives: {:?}", pop.generation, pop.objective_arrays());
        log.fronts.extend(snapshot(pop));
    }
    Ok(log)
}

/// Initial population followed by `cfg.generations` generations.
pub fn train_nsga3<T: Real>(loss: &PinnLoss<'_>, cfg: &Nsga3Config, seed: u64) -> Result<(Population<T>, EvolutionLog)> {
    let mut pop = init_population(loss, cfg, seed)?;
    let mut log = EvolutionLog { fronts: snapshot(&pop), losses: Vec::new() };
    let more = evolve(loss, &mut pop, cfg, seed)?;
    log.fronts.extend(more.fronts);
    log.losses = more.losses;
    Ok((pop, log))
}

/// Writes `generation,id,l_res,l_ic,l_bc,l_data,rank` rows.
pub fn write_front_csv(path: &Path, rows: &[FrontRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["generation", "id"];
    header.extend(OBJECTIVE_NAMES);
    header.push("rank");
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut row = vec![r.generation.to_string(), r.id.to_string()];
        row.extend(r.objectives.as_array().map(fmt));
        row.push(r.rank.to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::NetworkArchitecture;
    use crate::observations::{sample_collocation, CollocationCounts, CollocationSets, DataSet};
    use crate::problems::{Mode, ProblemKind, ProblemSpec};

    fn setup() -> (ProblemSpec, crate::autodiff::Network, CollocationSets, DataSet) {
        let spec = ProblemSpec::new(ProblemKind::Burgers, Mode::Inverse);
        let net = spec.network(NetworkArchitecture::uniform(2, 8).unwrap());
        let coll = sample_collocation(&spec, CollocationCounts { ic: 16, bc: 16, res: 120 }, 3);
        let data = DataSet { points: vec![(0.5, 0.5), (-0.5, 0.5)], values: vec![-0.3, 0.3] };
        (spec, net, coll, data)
    }

    fn small() -> Nsga3Config {
        Nsga3Config {
            population: 8,
            generations: 2,
            epochs_per_generation: 30,
            residual_batch: Some(40),
            eval_residuals: Some(60),
            ..Default::default()
        }
    }

    #[test]
    fn zero_generations_returns_evaluated_population() {
        let (spec, net, coll, data) = setup();
        let loss = PinnLoss::new(&spec, &net, &coll, &data);
        let cfg = Nsga3Config { generations: 0, ..small() };
        let (pop, log) = train_nsga3::<f64>(&loss, &cfg, 1).unwrap();
        assert_eq!(pop.len(), 8);
        assert_eq!(pop.generation, 0);
        assert!(pop.individuals.iter().all(|i| i.objectives().is_some() && i.rank.is_some()));
        assert_eq!(log.fronts.len(), 8);
        assert!(log.losses.is_empty());
    }

    #[test]
    fn evolution_keeps_size_and_a_clean_front() {
        let (spec, net, coll, data) = setup();
        let loss = PinnLoss::new(&spec, &net, &coll, &data);
        let (pop, log) = train_nsga3::<f64>(&loss, &small(), 7).unwrap();
        assert_eq!(pop.len(), 8);
        assert_eq!(pop.generation, 2);
        let front = pop.pareto_front();
        assert!(!front.is_empty());
        for a in &front {
            for b in &front {
                let (oa, ob) = (a.objectives().unwrap().as_array(), b.objectives().unwrap().as_array());
                assert_ne!(dominates(&oa, &ob), Dominance::Strict);
            }
        }
        let mut ids: Vec<u64> = pop.individuals.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 8);
        assert_eq!(log.fronts.len(), 8 * 3);
        assert_eq!(log.losses.len(), 60);
        let best = pop.best().unwrap();
        assert!(pop.individuals.iter().filter(|i| i.rank == Some(1)).all(|i| i.scalar() >= best.scalar()));
    }

    #[test]
    fn evolution_is_reproducible() {
        let (spec, net, coll, data) = setup();
        let loss = PinnLoss::new(&spec, &net, &coll, &data);
        let run = || {
            let (pop, log) = train_nsga3::<f64>(&loss, &small(), 11).unwrap();
            (pop.individuals.iter().map(|i| i.genome().to_vec()).collect::<Vec<_>>(), log.fronts)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn set_genome_invalidates_cache() {
        let mut ind = Individual::new(0, vec![0.0f64; 3]);
        ind.objectives = Some(ObjectiveVector::from_array([1.0; 4]));
        ind.rank = Some(1);
        ind.set_genome(vec![1.0; 3]);
        assert!(ind.objectives().is_none() && ind.rank.is_none());
        assert_eq!(ind.scalar(), f64::INFINITY);
    }

    #[test]
    fn front_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("front.csv");
        let rows = [FrontRow { generation: 1, id: 4, objectives: ObjectiveVector::from_array([1.0, 2.0, 3.0, 4.0]), rank: 2 }];
        write_front_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "generation,id,l_res,l_ic,l_bc,l_data,rank");
        assert!(lines.next().unwrap().starts_with("1,4,1.00000000000000000e0,"));
    }
}

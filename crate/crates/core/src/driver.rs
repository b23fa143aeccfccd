//! Experiment orchestration: the assimilation loop and the two baselines,
//! sharing observation data and the metric pipeline.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::adam::{train_adam, AdamConfig, AdamState, LossRecord, TrainOptions};
use crate::autodiff::{Network, NetworkArchitecture};
use crate::enkf::{analyze, EnsembleMatrix, ObservationErrorModel};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, ObjectiveVector, PinnLoss};
use crate::nsga3::{evolve, init_population, FrontRow, Individual, Nsga3Config, Population, VariationConfig};
use crate::observations::{
    make_observations, observe_network, sample_collocation, CollocationCounts, CollocationSets, DataSet, ObservationSet,
    DEFAULT_OBSERVATION_GRID,
};
use crate::problems::{Mode, ProblemKind, ProblemSpec};
use crate::scalar::derive_seed;

const STREAM_ADAM_INIT: u64 = 0xAD0;
const STREAM_POPULATION: u64 = 0x909;
const STREAM_ANALYSIS: u64 = 0xE4F;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Adam,
    Nsga3,
    #[serde(rename = "mopinnenkf")]
    MoPinnEnkf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Adam, Variant::Nsga3, Variant::MoPinnEnkf];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Adam => "adam",
            Variant::Nsga3 => "nsga3",
            Variant::MoPinnEnkf => "mopinnenkf",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "nsga3" => Ok(Self::Nsga3),
            "mopinnenkf" => Ok(Self::MoPinnEnkf),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Outer assimilation loop settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub outer_max: usize,
    /// Stop once the mean squared change of the ensemble-mean prediction at
    /// the observation points falls below this.
    pub eps_iter: f64,
    pub generations_per_outer: usize,
    /// Ensemble members drawn from the population; the first front is
    /// padded with the next ranks up to this size.
    pub min_ensemble: usize,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self { outer_max: 5, eps_iter: 1e-4, generations_per_outer: 3, min_ensemble: 10 }
    }
}

/// Every size and budget of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Full layer widths, input and output included.
    pub architecture: Vec<usize>,
    pub collocation: CollocationCounts,
    pub observation_grid: (usize, usize),
    pub test_grid: (usize, usize),
    pub adam: AdamConfig,
    pub adam_epochs: usize,
    /// Residual points per ADAM step; `None` uses the full set.
    pub residual_batch: Option<usize>,
    /// Leading residual points used to score population members.
    pub eval_residuals: Option<usize>,
    pub population: usize,
    pub baseline_generations: usize,
    pub epochs_per_generation: usize,
    pub driver: DriverConfig,
}

impl Budgets {
    /// Full-scale settings for a benchmark.
    pub fn full(spec: &ProblemSpec) -> Self {
        let (epochs_per_generation, residual_batch) = match spec.kind {
            ProblemKind::Burgers => (1000, None),
            ProblemKind::Tfmdwe => (2000, Some(256)),
        };
        Self {
            architecture: spec.default_architecture().widths().to_vec(),
            collocation: CollocationCounts::default(),
            observation_grid: DEFAULT_OBSERVATION_GRID,
            test_grid: (256, 100),
            adam: AdamConfig { physics_lr: Some(1e-2), ..AdamConfig::default() },
            adam_epochs: 5000,
            residual_batch,
            eval_residuals: None,
            population: 24,
            baseline_generations: 4,
            epochs_per_generation,
            driver: DriverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        NetworkArchitecture::new(self.architecture.clone())?;
        let positive = [
            ("collocation counts must be positive", self.collocation.ic.min(self.collocation.bc).min(self.collocation.res)),
            ("observation grid must be non-empty", self.observation_grid.0.min(self.observation_grid.1)),
            ("test grid needs at least two points per axis", self.test_grid.0.min(self.test_grid.1).saturating_sub(1)),
            ("population must be positive", self.population),
            ("outer iteration cap must be positive", self.driver.outer_max),
            ("ensemble needs at least two members", self.driver.min_ensemble.saturating_sub(1)),
        ];
        for (what, v) in positive {
            if v == 0 {
                return Err(Error::Domain { what, value: 0.0 });
            }
        }
        if !(self.driver.eps_iter > 0.0) {
            return Err(Error::Domain { what: "eps_iter must be positive", value: self.driver.eps_iter });
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Domain { what: "learning rate must be positive", value: self.adam.lr });
        }
        Ok(())
    }

    pub fn network(&self, spec: &ProblemSpec) -> Result<Network> {
        Ok(spec.network(NetworkArchitecture::new(self.architecture.clone())?))
    }

    fn nsga(&self, generations: usize) -> Nsga3Config {
        Nsga3Config {
            population: self.population,
            generations,
            epochs_per_generation: self.epochs_per_generation,
            adam: self.adam,
            residual_batch: self.residual_batch,
            eval_residuals: self.eval_residuals,
            divisions: 4,
            variation: VariationConfig::default(),
        }
    }
}

/// Test-grid accuracy of a solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Estimated physics scalar (inverse mode).
    pub physics_estimate: Option<f64>,
    /// `|estimate − true value|` (inverse mode).
    pub physics_l1: Option<f64>,
}

/// Uniform `nx × nt` grid over the domain, endpoints included, ordered by
/// `x` then `t`.
pub fn test_grid(spec: &ProblemSpec, (nx, nt): (usize, usize)) -> Vec<(f64, f64)> {
    let d = spec.domain();
    let lin = |(a, b): (f64, f64), n: usize, i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    (0..nx).flat_map(|i| (0..nt).map(move |j| (lin(d.x, nx, i), lin(d.t, nt, j)))).collect()
}

/// Ground truth on `points`.
pub fn truth_at(spec: &ProblemSpec, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    points.iter().map(|&(x, t)| spec.ground_truth(x, t)).collect()
}

/// MSE and MAE of `predict` against the ground truth on the test grid,
/// plus the physics error when an estimate is given.
pub fn evaluate_metrics(
    spec: &ProblemSpec,
    grid: (usize, usize),
    predict: impl FnOnce(&[(f64, f64)]) -> Result<Vec<f64>>,
    physics_estimate: Option<f64>,
) -> Result<Metrics> {
    let pts = test_grid(spec, grid);
    let truth = truth_at(spec, &pts)?;
    let pred = predict(&pts)?;
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} test points", pred.len(), truth.len())));
    }
    let n = pts.len() as f64;
    let (se, ae) = pred.iter().zip(&truth).fold((0.0, 0.0), |(s, a), (p, t)| (s + (p - t).powi(2), a + (p - t).abs()));
    Ok(Metrics { mse: se / n, mae: ae / n, physics_estimate, physics_l1: physics_estimate.map(|p| (p - spec.physics().true_value).abs()) })
}

/// One row of the plot grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x: f64,
    pub t: f64,
    pub u_pred: f64,
    pub u_true: f64,
    pub abs_err: f64,
}

pub fn solution_grid(spec: &ProblemSpec, net: &Network, params: &[f64], grid: (usize, usize)) -> Result<Vec<GridRow>> {
    let pts = test_grid(spec, grid);
    let pred = observe_network(net, params, &pts)?;
    let truth = truth_at(spec, &pts)?;
    Ok(pts
        .iter()
        .zip(pred.iter().zip(&truth))
        .map(|(&(x, t), (&u_pred, &u_true))| GridRow { x, t, u_pred, u_true, abs_err: (u_pred - u_true).abs() })
        .collect())
}

/// Record of one assimilation round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iteration: usize,
    pub ensemble_size: usize,
    pub ensemble_ids: Vec<u64>,
    pub front_size: usize,
    /// Objectives of the unit-weight best front member after training.
    pub best_objectives: ObjectiveVector,
    pub forecast_mse_vs_truth: f64,
    pub analysis_mse_vs_truth: f64,
    /// Mean squared change of the forecast mean since the previous round.
    pub convergence: Option<f64>,
    pub physics_estimate: Option<f64>,
    pub physics_front_spread: Option<f64>,
    pub max_offdiagonal_correlation: f64,
    pub forecast_spread: f64,
    pub analysis_spread: f64,
    pub test_mse: f64,
}

/// A Pareto-front member as reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    pub id: u64,
    pub objectives: ObjectiveVector,
    pub physics: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub variant: Variant,
    pub eta: f64,
    pub seed: u64,
    pub misspecified: bool,
    pub budgets: Budgets,
    pub data_mse_vs_truth: Option<f64>,
    pub final_objectives: ObjectiveVector,
    pub final_id: Option<u64>,
    pub metrics: Metrics,
    pub iterations: Vec<OuterIteration>,
    pub converged: bool,
    pub physics_trajectory: Vec<f64>,
    pub front: Vec<FrontMember>,
}

/// Everything a run produces besides the report.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub network: Network,
    pub params: Vec<f64>,
    pub losses: Vec<LossRecord>,
    pub fronts: Vec<FrontRow>,
    pub collocation: CollocationSets,
    pub observations: ObservationSet,
    /// Final assimilated data set.
    pub analysis: Option<DataSet>,
}

/// Collocation sets and observations of a `(problem, eta, seed)` triple;
/// independent of the variant.
pub fn experiment_data(spec: &ProblemSpec, eta: f64, seed: u64, budgets: &Budgets) -> Result<(CollocationSets, ObservationSet)> {
    let coll = sample_collocation(spec, budgets.collocation, seed);
    let obs = make_observations(spec, eta, budgets.observation_grid, seed)?;
    Ok((coll, obs))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Population members handed to the filter: the first front, then the
/// next ranks ordered by niche distance, up to `min` members.
pub fn ensemble_members(pop: &Population<f64>, min: usize) -> Vec<&Individual<f64>> {
    let mut all: Vec<&Individual<f64>> = pop.individuals.iter().collect();
    let dist = |i: &Individual<f64>| i.niche.map_or(f64::INFINITY, |n| n.distance);
    all.sort_by(|a, b| {
        a.rank.unwrap_or(usize::MAX).cmp(&b.rank.unwrap_or(usize::MAX)).then(dist(a).total_cmp(&dist(b))).then(a.id.cmp(&b.id))
    });
    let front = all.iter().filter(|i| i.rank == Some(1)).count();
    all.truncate(front.max(min).min(all.len()));
    all
}

fn physics_of(spec: &ProblemSpec, net: &Network, params: &[f64]) -> Option<f64> {
    net.physics_index().map(|_| spec.physics_value(net, params))
}

fn front_members(spec: &ProblemSpec, net: &Network, pop: &Population<f64>) -> Vec<FrontMember> {
    pop.pareto_front()
        .into_iter()
        .map(|i| FrontMember {
            id: i.id,
            objectives: i.objectives().copied().unwrap_or(ObjectiveVector::from_array([f64::INFINITY; 4])),
            physics: physics_of(spec, net, i.genome()),
        })
        .collect()
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

struct Context {
    spec: ProblemSpec,
    eta: f64,
    seed: u64,
    budgets: Budgets,
    net: Network,
    coll: CollocationSets,
    obs: ObservationSet,
}

impl Context {
    fn new(spec: &ProblemSpec, eta: f64, seed: u64, budgets: &Budgets) -> Result<Self> {
        budgets.validate()?;
        let net = budgets.network(spec)?;
        let (coll, obs) = experiment_data(spec, eta, seed, budgets)?;
        Ok(Self { spec: *spec, eta, seed, budgets: budgets.clone(), net, coll, obs })
    }

    fn metrics(&self, params: &[f64]) -> Result<Metrics> {
        evaluate_metrics(
            &self.spec,
            self.budgets.test_grid,
            |pts| observe_network(&self.net, params, pts),
            physics_of(&self.spec, &self.net, params),
        )
    }

    fn report(&self, variant: Variant, params: &[f64], objectives: ObjectiveVector, with_data: bool) -> Result<RunReport> {
        Ok(RunReport {
            problem: self.spec.kind,
            mode: self.spec.mode,
            variant,
            eta: self.eta,
            seed: self.seed,
            misspecified: self.spec.misspecified,
            budgets: self.budgets.clone(),
            data_mse_vs_truth: with_data.then(|| mse(&self.obs.values, &self.obs.truth)),
            final_objectives: objectives,
            final_id: None,
            metrics: self.metrics(params)?,
            iterations: Vec::new(),
            converged: false,
            physics_trajectory: Vec::new(),
            front: Vec::new(),
        })
    }

    /// Baselines train on raw observations when there is noise, and on
    /// physics alone at zero noise.
    fn baseline_data(&self) -> DataSet {
        if self.eta > 0.0 {
            self.obs.data()
        } else {
            DataSet::empty()
        }
    }

    fn output(
        self,
        report: RunReport,
        params: Vec<f64>,
        losses: Vec<LossRecord>,
        fronts: Vec<FrontRow>,
        analysis: Option<DataSet>,
    ) -> RunOutput {
        RunOutput { report, network: self.net, params, losses, fronts, collocation: self.coll, observations: self.obs, analysis }
    }
}

/// Single network trained by ADAM on the unit-weight scalar loss.
fn run_adam(ctx: Context) -> Result<RunOutput> {
    let data = ctx.baseline_data();
    let loss = PinnLoss::new(&ctx.spec, &ctx.net, &ctx.coll, &data);
    let mut params = ctx.spec.init_parameters::<f64>(&ctx.net, derive_seed(ctx.seed, STREAM_ADAM_INIT)).into_inner();
    let mut state = AdamState::new(params.len(), ctx.budgets.adam, ctx.net.physics_index());
    let opts = TrainOptions {
        epochs: ctx.budgets.adam_epochs,
        residual_batch: ctx.budgets.residual_batch,
        weights: LossWeights::default(),
        seed: derive_seed(ctx.seed, STREAM_ADAM_INIT ^ 1),
    };
    let losses = train_adam(&loss, &mut params, &mut state, &opts)?;
    let n = ctx.coll.res.len();
    let subset: Vec<usize> = (0..ctx.budgets.eval_residuals.map_or(n, |k| k.min(n))).collect();
    let obj = loss.objectives(&params, crate::losses::Residuals::Subset(&subset))?;
    let mut report = ctx.report(Variant::Adam, &params, obj, !data.is_empty())?;
    report.physics_trajectory = physics_of(&ctx.spec, &ctx.net, &params).into_iter().collect();
    Ok(ctx.output(report, params, losses, Vec::new(), None))
}

fn best_of(pop: &Population<f64>) -> Result<&Individual<f64>> {
    pop.best().ok_or_else(|| Error::Diverged("population has no finite first-front member".into()))
}

/// Population evolved against raw observations.
fn run_nsga3(ctx: Context) -> Result<RunOutput> {
    let data = ctx.baseline_data();
    let loss = PinnLoss::new(&ctx.spec, &ctx.net, &ctx.coll, &data);
    let cfg = ctx.budgets.nsga(ctx.budgets.baseline_generations);
    let pop_seed = derive_seed(ctx.seed, STREAM_POPULATION);
    let mut pop = init_population::<f64>(&loss, &cfg, pop_seed)?;
    let log = evolve(&loss, &mut pop, &cfg, pop_seed)?;
    let best = best_of(&pop)?;
    let params = best.genome().to_vec();
    let mut report = ctx.report(Variant::Nsga3, &params, *best.objectives().expect("evaluated"), !data.is_empty())?;
    report.final_id = Some(best.id);
    report.front = front_members(&ctx.spec, &ctx.net, &pop);
    report.physics_trajectory = physics_of(&ctx.spec, &ctx.net, &params).into_iter().collect();
    Ok(ctx.output(report, params, log.losses, log.fronts, None))
}

/// Evolve, assimilate the front's predictions, refresh the data loss with
/// the analysis mean, and repeat until the forecast settles.
fn run_assimilation(ctx: Context) -> Result<RunOutput> {
    let cfg = ctx.budgets.nsga(ctx.budgets.driver.generations_per_outer);
    let drv = ctx.budgets.driver;
    let pop_seed = derive_seed(ctx.seed, STREAM_POPULATION);
    let r = ObservationErrorModel::<f64>::from_sigma(&ctx.obs.sigma);
    let mut data = ctx.obs.data();
    let mut pop = init_population::<f64>(&PinnLoss::new(&ctx.spec, &ctx.net, &ctx.coll, &data), &cfg, pop_seed)?;
    let mut iterations = Vec::new();
    let mut losses = Vec::new();
    let mut fronts = Vec::new();
    let mut trajectory = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    let mut converged = false;
    for m in 1..=drv.outer_max {
        let loss = PinnLoss::new(&ctx.spec, &ctx.net, &ctx.coll, &data);
        let log = evolve(&loss, &mut pop, &cfg, derive_seed(pop_seed, m as u64))?;
        let offset = losses.last().map_or(0, |r: &LossRecord| r.epoch + 1);
        losses.extend(log.losses.into_iter().map(|r| LossRecord { epoch: offset + r.epoch, ..r }));
        fronts.extend(log.fronts);

        let members = ensemble_members(&pop, drv.min_ensemble);
        let rows = members.iter().map(|i| observe_network(&ctx.net, i.genome(), &ctx.obs.points)).collect::<Result<Vec<_>>>()?;
        let ids = members.iter().map(|i| i.id).collect();
        let ens = EnsembleMatrix::new(rows, ids).map_err(|e| Error::Diverged(format!("ensemble at round {m}: {e}")))?;
        let analysis = analyze(&ens, &ctx.obs.values, &r, derive_seed(ctx.seed, STREAM_ANALYSIS ^ m as u64))?;

        let best = best_of(&pop)?;
        let physics = physics_of(&ctx.spec, &ctx.net, best.genome());
        trajectory.extend(physics);
        let front_physics: Vec<f64> = pop.pareto_front().iter().filter_map(|i| physics_of(&ctx.spec, &ctx.net, i.genome())).collect();
        let convergence = previous.as_ref().map(|p| mse(p, &analysis.forecast_mean));
        let it = OuterIteration {
            iteration: m,
            ensemble_size: ens.members(),
            ensemble_ids: ens.ids.clone(),
            front_size: pop.pareto_front().len(),
            best_objectives: *best.objectives().expect("evaluated"),
            forecast_mse_vs_truth: mse(&analysis.forecast_mean, &ctx.obs.truth),
            analysis_mse_vs_truth: mse(&analysis.mean, &ctx.obs.truth),
            convergence,
            physics_estimate: physics,
            physics_front_spread: (!front_physics.is_empty()).then(|| sample_std(&front_physics)),
            max_offdiagonal_correlation: analysis.diagnostics.max_offdiagonal_correlation,
            forecast_spread: analysis.diagnostics.forecast_spread,
            analysis_spread: analysis.diagnostics.analysis_spread,
            test_mse: ctx.metrics(best.genome())?.mse,
        };
        info!(
            "round {m}: ensemble {}, forecast mse {:.3e}, analysis mse {:.3e}, change {:?}, test mse {:.3e}",
            it.ensemble_size, it.forecast_mse_vs_truth, it.analysis_mse_vs_truth, it.convergence, it.test_mse
        );
        iterations.push(it);
        previous = Some(analysis.forecast_mean.clone());
        data = analysis.to_data_set(&ctx.obs.points);
        if convergence.is_some_and(|c| c < drv.eps_iter) {
            converged = true;
            break;
        }
    }
    let best = best_of(&pop)?;
    let params = best.genome().to_vec();
    let mut report = ctx.report(Variant::MoPinnEnkf, &params, *best.objectives().expect("evaluated"), true)?;
    report.final_id = Some(best.id);
    report.iterations = iterations;
    report.converged = converged;
    report.physics_trajectory = trajectory;
    report.front = front_members(&ctx.spec, &ctx.net, &pop);
    Ok(ctx.output(report, params, losses, fronts, Some(data)))
}

/// Runs `variant` on `spec` with observation noise `eta`.
pub fn run(spec: &ProblemSpec, variant: Variant, eta: f64, seed: u64, budgets: &Budgets) -> Result<RunOutput> {
    let ctx = Context::new(spec, eta, seed, budgets)?;
    info!("{} {} {variant} eta={eta} seed={seed}", spec.kind, spec.mode);
    match variant {
        Variant::Adam => run_adam(ctx),
        Variant::Nsga3 => run_nsga3(ctx),
        Variant::MoPinnEnkf => run_assimilation(ctx),
    }
}

/// The assimilation loop.
pub fn run_mopinnenkf(spec: &ProblemSpec, eta: f64, seed: u64, budgets: &Budgets) -> Result<RunOutput> {
    run(spec, Variant::MoPinnEnkf, eta, seed, budgets)
}

/// A baseline; `variant` must be [`Variant::Adam`] or [`Variant::Nsga3`].
pub fn run_baseline(spec: &ProblemSpec, variant: Variant, eta: f64, seed: u64, budgets: &Budgets) -> Result<RunOutput> {
    if variant == Variant::MoPinnEnkf {
        return Err(Error::Domain { what: "baseline variant must be adam or nsga3", value: f64::NAN });
    }
    run(spec, variant, eta, seed, budgets)
}

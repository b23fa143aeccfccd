//! Experiment configuration: TOML file, budget profiles and overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mopinn_core::driver::{Budgets, Variant};
use mopinn_core::problems::{Mode, ProblemKind, ProblemSpec};

use crate::error::CliError;

/// Named budget presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Budgets sized for a single CPU core.
    #[default]
    Desk,
    /// Full-scale budgets.
    Full,
}

/// Selective replacements of profile budgets. A residual batch of zero
/// means the full residual set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverrides {
    /// Layer widths including input (2) and output (1), comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_points: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_points: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_points: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caputo_steps: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_epochs: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics_lr: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_batch: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_residuals: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<usize>,
    /// Generations of the NSGA-III baseline.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_per_generation: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations_per_outer: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_max: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_iter: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ensemble: Option<usize>,
}

impl BudgetOverrides {
    /// Fields set in `other` win.
    pub fn merged(&self, other: &BudgetOverrides) -> BudgetOverrides {
        macro_rules! pick {
            ($($f:ident),*) => { BudgetOverrides { $($f: other.$f.clone().or_else(|| self.$f.clone())),* } };
        }
        pick!(
            architecture,
            residual_points,
            boundary_points,
            initial_points,
            caputo_steps,
            adam_epochs,
            lr,
            physics_lr,
            residual_batch,
            eval_residuals,
            population,
            generations,
            epochs_per_generation,
            generations_per_outer,
            outer_max,
            eps_iter,
            min_ensemble
        )
    }

    fn apply(&self, spec: &mut ProblemSpec, b: &mut Budgets) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => { if let Some(v) = self.$src.clone() { $($dst)+ = v; } };
        }
        set!(architecture => b.architecture);
        set!(residual_points => b.collocation.res);
        set!(boundary_points => b.collocation.bc);
        set!(initial_points => b.collocation.ic);
        set!(caputo_steps => spec.caputo_steps);
        set!(adam_epochs => b.adam_epochs);
        set!(lr => b.adam.lr);
        if let Some(v) = self.physics_lr {
            b.adam.physics_lr = Some(v);
        }
        if let Some(v) = self.residual_batch {
            b.residual_batch = (v > 0).then_some(v);
        }
        if let Some(v) = self.eval_residuals {
            b.eval_residuals = (v > 0).then_some(v);
        }
        set!(population => b.population);
        set!(generations => b.baseline_generations);
        set!(epochs_per_generation => b.epochs_per_generation);
        set!(generations_per_outer => b.driver.generations_per_outer);
        set!(outer_max => b.driver.outer_max);
        set!(eps_iter => b.driver.eps_iter);
        set!(min_ensemble => b.driver.min_ensemble);
    }
}

/// One experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub variant: Variant,
    pub eta: f64,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub profile: Profile,
    /// Train with the exact physics even in forward mode.
    #[serde(default)]
    pub perfect_model: bool,
    #[serde(default)]
    pub budgets: BudgetOverrides,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Burgers,
            mode: Mode::Forward,
            variant: Variant::MoPinnEnkf,
            eta: 0.2,
            seed: 0,
            out: PathBuf::from("runs"),
            profile: Profile::Desk,
            perfect_model: false,
            budgets: BudgetOverrides::default(),
        }
    }
}

/// Budgets of `profile` for `spec`.
pub fn profile_budgets(profile: Profile, spec: &ProblemSpec) -> Budgets {
    let mut b = Budgets::full(spec);
    if profile == Profile::Desk {
        b.population = 8;
        b.driver.outer_max = 3;
        match spec.kind {
            ProblemKind::Burgers => {
                b.residual_batch = Some(128);
                b.eval_residuals = Some(512);
            }
            ProblemKind::Tfmdwe => {
                b.residual_batch = Some(32);
                b.eval_residuals = Some(128);
                b.epochs_per_generation = 1000;
            }
        }
    }
    b
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn spec(&self) -> ProblemSpec {
        if self.perfect_model {
            ProblemSpec::perfect(self.problem, self.mode)
        } else {
            ProblemSpec::new(self.problem, self.mode)
        }
    }

    /// Problem definition and the budgets after overrides.
    pub fn resolve(&self) -> Result<(ProblemSpec, Budgets), CliError> {
        self.validate()?;
        let mut spec = self.spec();
        let mut b = profile_budgets(self.profile, &spec);
        self.budgets.apply(&mut spec, &mut b);
        if spec.caputo_steps == 0 {
            return Err(CliError::Config("caputo_steps must be positive".into()));
        }
        b.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok((spec, b))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(CliError::Config(format!("eta must be finite and non-negative, got {}", self.eta)));
        }
        if self.variant == Variant::MoPinnEnkf && self.eta == 0.0 {
            return Err(CliError::Config("mopinnenkf assimilates observations and needs eta > 0".into()));
        }
        Ok(())
    }

    /// Directory name of this run inside a sweep.
    pub fn run_name(&self) -> String {
        format!("{}-{}-{}-eta{:.2}-seed{}", self.problem, self.mode, self.variant, self.eta, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig { variant: Variant::Nsga3, eta: 0.5, seed: 7, ..Default::default() };
        c.budgets.population = Some(6);
        c.budgets.architecture = Some(vec![2, 10, 10, 1]);
        c.budgets.lr = Some(2e-3);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c =
            ExperimentConfig::from_toml("problem = \"tfmdwe\"\nmode = \"inverse\"\nvariant = \"adam\"\neta = 0.2\nseed = 1\nout = \"x\"\n")
                .unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert!(!c.perfect_model);
        let (spec, b) = c.resolve().unwrap();
        assert_eq!(spec.kind, ProblemKind::Tfmdwe);
        assert_eq!(b.population, 8);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("problem = \"heat\""), Err(CliError::Config(_))));
        let base = ExperimentConfig::default().to_toml();
        assert!(ExperimentConfig::from_toml(&format!("{base}\nbogus = 1\n")).is_err());
        let c = ExperimentConfig { eta: 0.0, ..Default::default() };
        assert!(matches!(c.resolve(), Err(CliError::Config(_))));
        let c = ExperimentConfig { eta: -0.1, variant: Variant::Adam, ..Default::default() };
        assert!(c.resolve().is_err());
        let mut c = ExperimentConfig::default();
        c.budgets.population = Some(0);
        assert!(c.resolve().is_err());
    }

    #[test]
    fn overrides_apply_and_merge() {
        let mut c = ExperimentConfig::default();
        c.budgets.residual_batch = Some(0);
        c.budgets.outer_max = Some(2);
        let (_, b) = c.resolve().unwrap();
        assert_eq!(b.residual_batch, None);
        assert_eq!(b.driver.outer_max, 2);
        let flags = BudgetOverrides { outer_max: Some(4), ..Default::default() };
        let m = c.budgets.merged(&flags);
        assert_eq!((m.outer_max, m.residual_batch), (Some(4), Some(0)));
    }

    #[test]
    fn full_profile_matches_reference_budgets() {
        let c = ExperimentConfig { profile: Profile::Full, ..Default::default() };
        let (_, b) = c.resolve().unwrap();
        assert_eq!((b.adam_epochs, b.population, b.epochs_per_generation), (5000, 24, 1000));
        assert_eq!((b.driver.generations_per_outer, b.driver.outer_max, b.baseline_generations), (3, 5, 4));
    }

    #[test]
    fn run_names_are_stable() {
        let c = ExperimentConfig { eta: 0.8, seed: 2, ..Default::default() };
        assert_eq!(c.run_name(), "burgers-forward-mopinnenkf-eta0.80-seed2");
    }
}

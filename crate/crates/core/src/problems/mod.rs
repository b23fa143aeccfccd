//! Benchmark PDE problems: viscous Burgers and the time-fractional mixed
//! diffusion-wave equation (TFMDWE).

mod burgers;
mod caputo;

pub use burgers::{default_oracle, true_viscosity, BurgersOracle, ColeHopf, ORACLE_NT, ORACLE_NX};
pub use caputo::{caputo_l1, CaputoQuadrature};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BundleVars, EvalRequest, EvaluationBundle, Leaf, Network, NetworkArchitecture, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{gamma, sigmoid, softplus, Real};

/// Caputo history steps per collocation point.
pub const DEFAULT_CAPUTO_STEPS: usize = 50;
/// Relative amplitude of the forcing perturbation in the forward TFMDWE.
pub const FORCING_NOISE_LEVEL: f64 = 0.5;
pub const TFMDWE_TRUE_ALPHA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Burgers,
    Tfmdwe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Inverse,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Burgers => "burgers",
            ProblemKind::Tfmdwe => "tfmdwe",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "burgers" => Ok(Self::Burgers),
            "tfmdwe" => Ok(Self::Tfmdwe),
            other => Err(format!("unknown problem '{other}'")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Forward => "forward",
            Mode::Inverse => "inverse",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "forward" => Ok(Self::Forward),
            "inverse" => Ok(Self::Inverse),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Smooth bijection from an unconstrained raw value to the admissible set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// `(0, ∞)` via softplus.
    Positive,
    /// `(0, 1)` via the logistic sigmoid.
    UnitInterval,
}

impl Constraint {
    pub fn apply<T: Real>(self, raw: T) -> T {
        match self {
            Constraint::Positive => softplus(raw),
            Constraint::UnitInterval => sigmoid(raw),
        }
    }

    /// Constrained value and its derivative with respect to the raw value.
    pub fn apply_with_derivative<T: Real>(self, raw: T) -> (T, T) {
        match self {
            // softplus' = sigmoid
            Constraint::Positive => (softplus(raw), sigmoid(raw)),
            Constraint::UnitInterval => {
                let s = sigmoid(raw);
                (s, s * (T::one() - s))
            }
        }
    }

    pub fn invert<T: Real>(self, value: T) -> T {
        match self {
            Constraint::Positive => crate::scalar::softplus_inv(value),
            Constraint::UnitInterval => crate::scalar::logit(value),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParameter {
    pub name: &'static str,
    pub true_value: f64,
    pub trainable: bool,
    pub constraint: Constraint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x: (f64, f64),
    pub t: (f64, f64),
}

impl Domain {
    pub fn contains(&self, x: f64, t: f64) -> bool {
        const TOL: f64 = 1e-12;
        x >= self.x.0 - TOL && x <= self.x.1 + TOL && t >= self.t.0 - TOL && t <= self.t.1 + TOL
    }
}

/// One benchmark configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub mode: Mode,
    /// Forward-mode model error: Burgers trains with `ν = 0.02/π`, the
    /// TFMDWE forcing carries a fixed 50% relative Gaussian perturbation.
    pub misspecified: bool,
    pub caputo_steps: usize,
}

impl ProblemSpec {
    /// Benchmark setting: forward problems are misspecified, inverse
    /// problems train the physics scalar.
    pub fn new(kind: ProblemKind, mode: Mode) -> Self {
        Self { kind, mode, misspecified: mode == Mode::Forward, caputo_steps: DEFAULT_CAPUTO_STEPS }
    }

    /// Same as [`ProblemSpec::new`] but with an exact model.
    pub fn perfect(kind: ProblemKind, mode: Mode) -> Self {
        Self { misspecified: false, ..Self::new(kind, mode) }
    }

    pub fn domain(&self) -> Domain {
        match self.kind {
            ProblemKind::Burgers => Domain { x: (-1.0, 1.0), t: (0.0, 1.0) },
            ProblemKind::Tfmdwe => Domain { x: (0.0, PI), t: (0.0, 1.0) },
        }
    }

    pub fn physics(&self) -> PhysicsParameter {
        let trainable = self.mode == Mode::Inverse;
        match self.kind {
            ProblemKind::Burgers => {
                PhysicsParameter { name: "nu", true_value: true_viscosity(), trainable, constraint: Constraint::Positive }
            }
            ProblemKind::Tfmdwe => {
                PhysicsParameter { name: "alpha", true_value: TFMDWE_TRUE_ALPHA, trainable, constraint: Constraint::UnitInterval }
            }
        }
    }

    /// Physics value used by the residual when it is not trained.
    pub fn model_physics_value(&self) -> f64 {
        match (self.kind, self.mode, self.misspecified) {
            (ProblemKind::Burgers, Mode::Forward, true) => 0.02 / PI,
            _ => self.physics().true_value,
        }
    }

    /// Relative forcing perturbation amplitude, when the forcing is misspecified.
    pub fn forcing_noise_level(&self) -> Option<f64> {
        (self.kind == ProblemKind::Tfmdwe && self.mode == Mode::Forward && self.misspecified).then_some(FORCING_NOISE_LEVEL)
    }

    /// Benchmark network: 8 layer widths of 20 for Burgers, two hidden
    /// layers of 50 for the TFMDWE.
    pub fn default_architecture(&self) -> NetworkArchitecture {
        match self.kind {
            ProblemKind::Burgers => NetworkArchitecture::uniform(6, 20),
            ProblemKind::Tfmdwe => NetworkArchitecture::uniform(2, 50),
        }
        .expect("benchmark architectures are valid")
    }

    pub fn network(&self, arch: NetworkArchitecture) -> Network {
        Network::new(arch, self.physics().trainable)
    }

    pub fn initial_condition(&self, x: f64) -> f64 {
        match self.kind {
            ProblemKind::Burgers => -(PI * x).sin(),
            ProblemKind::Tfmdwe => 0.0,
        }
    }

    /// Dirichlet data on the spatial boundary.
    pub fn boundary_value(&self, _x: f64, _t: f64) -> f64 {
        0.0
    }

    /// Reference solution: `t³ sin x` for the TFMDWE, the cached Cole–Hopf
    /// oracle for Burgers.
    pub fn ground_truth(&self, x: f64, t: f64) -> Result<f64> {
        if !self.domain().contains(x, t) {
            return Err(Error::Domain { what: "point outside the problem domain", value: if !(0.0..=1.0).contains(&t) { t } else { x } });
        }
        Ok(match self.kind {
            ProblemKind::Tfmdwe => t.powi(3) * x.sin(),
            ProblemKind::Burgers => {
                if t == 0.0 {
                    self.initial_condition(x)
                } else {
                    default_oracle().interpolate(x, t)
                }
            }
        })
    }

    /// Draws the initial raw physics value: `ν ~ U(0.01, 1)` for Burgers,
    /// `α ~ U(0.1, 0.9)` for the TFMDWE.
    pub fn sample_initial_physics<R: Rng>(&self, rng: &mut R) -> f64 {
        let p = self.physics();
        let value = match self.kind {
            ProblemKind::Burgers => rng.random_range(0.01..1.0),
            ProblemKind::Tfmdwe => rng.random_range(0.1..0.9),
        };
        p.constraint.invert(value)
    }

    /// Network parameters for a fresh individual, including the physics slot
    /// in inverse mode.
    pub fn init_parameters<T: Real>(&self, net: &Network, seed: u64) -> crate::autodiff::ParameterVector<T> {
        let mut params = net.init_parameters::<T>(seed);
        if let Some(slot) = net.physics_index() {
            let mut rng =
                <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(crate::scalar::derive_seed(seed, 0x5EED));
            params[slot] = T::lit(self.sample_initial_physics(&mut rng));
        }
        params
    }

    /// Constrained physics value carried by `params` (or the model value
    /// when the physics is fixed).
    pub fn physics_value<T: Real>(&self, net: &Network, params: &[T]) -> T {
        match net.physics_index() {
            Some(slot) => self.physics().constraint.apply(params[slot]),
            None => T::lit(self.model_physics_value()),
        }
    }

    pub fn residual_requests_per_point(&self) -> usize {
        match self.kind {
            ProblemKind::Burgers => 1,
            ProblemKind::Tfmdwe => self.caputo_steps + 1,
        }
    }
}

/// Burgers residual `u_t − ν u_xx + u u_x`.
pub fn residual_burgers<T: Real>(b: &EvaluationBundle<T>, nu: T) -> T {
    b.u_t - nu * b.u_xx + b.u * b.u_x
}

/// TFMDWE source term `Γ(4)/Γ(4−α) t^{3−α} sin x + t³ sin x`.
pub fn tfmdwe_forcing<T: Real>(x: T, t: T, alpha: T) -> T {
    let three = T::lit(3.0);
    let c = T::lit(6.0) / gamma(T::lit(4.0) - alpha);
    (c * t.powf(three - alpha) + t.powi(3)) * x.sin()
}

/// TFMDWE residual `D_t^α u − u_xx − f·(1 + noise)` from the history
/// `u(x, t_0..t_M)` on the uniform grid ending at `t`.
pub fn residual_tfmdwe<T: Real>(history: &[T], alpha: T, x: T, t: T, u_xx: T, forcing_noise: Option<T>) -> Result<T> {
    let caputo = if t > T::zero() {
        let m = history.len().saturating_sub(1).max(1);
        caputo_l1(history, alpha, t / T::from_usize_lossy(m))?
    } else {
        T::zero()
    };
    let factor = T::one() + forcing_noise.unwrap_or(T::zero());
    Ok(caputo - u_xx - tfmdwe_forcing(x, t, T::lit(TFMDWE_TRUE_ALPHA)) * factor)
}

/// Residual operator bound to one parameter vector: knows which network
/// evaluations each collocation point needs and how to assemble the
/// residual node on a tape.
#[derive(Debug)]
pub struct ResidualOperator<T> {
    spec: ProblemSpec,
    physics_slot: Option<usize>,
    raw_physics: T,
    quadrature: Option<CaputoQuadrature<T>>,
}

impl<T: Real> ResidualOperator<T> {
    pub fn new(spec: &ProblemSpec, net: &Network, params: &[T]) -> Result<Self> {
        let physics_slot = net.physics_index();
        let raw_physics = physics_slot.map_or(T::zero(), |s| params[s]);
        let quadrature = match spec.kind {
            ProblemKind::Burgers => None,
            ProblemKind::Tfmdwe => {
                let alpha = spec.physics_value(net, params);
                Some(CaputoQuadrature::new(alpha, spec.caputo_steps)?)
            }
        };
        Ok(Self { spec: *spec, physics_slot, raw_physics, quadrature })
    }

    /// Operator with the model physics value held fixed, for fields that
    /// do not come from a network.
    pub fn fixed(spec: &ProblemSpec) -> Result<Self> {
        let quadrature = match spec.kind {
            ProblemKind::Burgers => None,
            ProblemKind::Tfmdwe => Some(CaputoQuadrature::new(T::lit(spec.model_physics_value()), spec.caputo_steps)?),
        };
        Ok(Self { spec: *spec, physics_slot: None, raw_physics: T::zero(), quadrature })
    }

    /// Appends the evaluations needed for the residual at `(x, t)`.
    pub fn push_requests(&self, x: T, t: T, out: &mut Vec<EvalRequest<T>>) {
        match self.spec.kind {
            ProblemKind::Burgers => out.push(EvalRequest::full(x, t)),
            ProblemKind::Tfmdwe => {
                let m = self.spec.caputo_steps;
                let dt = t / T::from_usize_lossy(m);
                for j in 0..m {
                    out.push(EvalRequest::value(x, dt * T::from_usize_lossy(j)));
                }
                out.push(EvalRequest::full(x, t));
            }
        }
    }

    /// Physics scalar as a tape node: the constrained raw slot in inverse
    /// mode, a constant otherwise.
    pub fn physics_var(&self, tape: &mut Tape<T>) -> Var {
        match self.physics_slot {
            Some(slot) => {
                let raw = tape.leaf(Leaf::Parameter(slot), self.raw_physics);
                let constraint = self.spec.physics().constraint;
                tape.map(raw, |r| constraint.apply_with_derivative(r))
            }
            None => tape.constant(T::lit(self.spec.model_physics_value())),
        }
    }

    /// Residual node at `(x, t)` from the bundles produced by
    /// [`ResidualOperator::push_requests`] (in the same order).
    pub fn residual(&self, tape: &mut Tape<T>, vars: &[BundleVars], physics: Var, x: T, t: T, forcing_noise: Option<T>) -> Result<Var> {
        match self.spec.kind {
            ProblemKind::Burgers => {
                let b = vars.first().ok_or_else(|| Error::Graph("missing residual bundle".into()))?;
                let visc = tape.mul(physics, b.uxx()?);
                let adv = tape.mul(b.u, b.ux()?);
                let r = tape.sub(b.ut()?, visc);
                Ok(tape.add(r, adv))
            }
            ProblemKind::Tfmdwe => {
                let m = self.spec.caputo_steps;
                if vars.len() != m + 1 {
                    return Err(Error::Graph(format!("expected {} history bundles, got {}", m + 1, vars.len())));
                }
                let point = &vars[m];
                let caputo = if t > T::zero() {
                    let quad = self.quadrature.as_ref().expect("TFMDWE operator has a quadrature");
                    let w = quad.history_weights(t / T::from_usize_lossy(m));
                    if self.physics_slot.is_some() {
                        let terms: Vec<(Var, T, T)> = vars.iter().zip(&w).map(|(v, &(w, dw))| (v.u, w, dw)).collect();
                        tape.linear_with_param(physics, &terms)
                    } else {
                        let terms: Vec<(Var, T)> = vars.iter().zip(&w).map(|(v, &(w, _))| (v.u, w)).collect();
                        tape.linear(&terms)
                    }
                } else {
                    tape.constant(T::zero())
                };
                let factor = T::one() + forcing_noise.unwrap_or(T::zero());
                let f = tape.constant(tfmdwe_forcing(x, t, T::lit(TFMDWE_TRUE_ALPHA)) * factor);
                let r = tape.sub(caputo, point.uxx()?);
                Ok(tape.sub(r, f))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn reference_physics_values() {
        let b = ProblemSpec::new(ProblemKind::Burgers, Mode::Forward);
        assert!((b.physics().true_value - 0.003_183).abs() < 1e-6);
        assert!((b.model_physics_value() - 0.02 / PI).abs() < 1e-15);
        assert!(!b.physics().trainable);
        let t = ProblemSpec::new(ProblemKind::Tfmdwe, Mode::Inverse);
        assert_eq!(t.physics().true_value, 0.5);
        assert!(t.physics().trainable);
        assert_eq!(t.forcing_noise_level(), None);
        assert_eq!(ProblemSpec::new(ProblemKind::Tfmdwe, Mode::Forward).forcing_noise_level(), Some(0.5));
        assert_eq!(ProblemSpec::perfect(ProblemKind::Burgers, Mode::Forward).model_physics_value(), true_viscosity());
    }

    #[test]
    fn domains() {
        let b = ProblemSpec::new(ProblemKind::Burgers, Mode::Forward).domain();
        assert_eq!((b.x, b.t), ((-1.0, 1.0), (0.0, 1.0)));
        let t = ProblemSpec::new(ProblemKind::Tfmdwe, Mode::Forward).domain();
        assert_eq!((t.x, t.t), ((0.0, PI), (0.0, 1.0)));
    }

    #[test]
    fn burgers_residual_cases() {
        let zero = EvaluationBundle::<f64>::default();
        assert_eq!(residual_burgers(&zero, 0.1), 0.0);
        // u = -sin(πx) g(t), g(t) = e^{-t}
        let (x, t, nu) = (0.3f64, 0.2f64, 0.01);
        let g = (-t).exp();
        let b = EvaluationBundle {
            u: -(PI * x).sin() * g,
            u_t: (PI * x).sin() * g,
            u_x: -PI * (PI * x).cos() * g,
            u_xx: PI * PI * (PI * x).sin() * g,
        };
        let expected = (PI * x).sin() * g - nu * PI * PI * (PI * x).sin() * g + (PI * x).sin() * PI * (PI * x).cos() * g * g;
        assert!((residual_burgers(&b, nu) - expected).abs() < 1e-14);
        assert_eq!(residual_burgers(&b, 0.0), b.u_t + b.u * b.u_x);
    }

    fn exact_history(x: f64, t: f64, m: usize) -> Vec<f64> {
        (0..=m).map(|j| (t * j as f64 / m as f64).powi(3) * x.sin()).collect()
    }

    #[test]
    fn tfmdwe_residual_vanishes_on_exact_solution() {
        let (x, t) = (1.1, 1.0);
        let h = exact_history(x, t, 1000);
        let r = residual_tfmdwe(&h, 0.5, x, t, -(t.powi(3)) * x.sin(), None).unwrap();
        assert!(r.abs() <= 5e-3, "{r}");
        // refinement drives it down
        let r2 = residual_tfmdwe(&exact_history(x, t, 2000), 0.5, x, t, -x.sin(), None).unwrap();
        assert!(r2.abs() < r.abs());
        for &xb in &[0.0, PI] {
            let hb = exact_history(xb, 0.7, 200);
            let rb = residual_tfmdwe(&hb, 0.5, xb, 0.7, -(0.7f64.powi(3)) * xb.sin(), None).unwrap();
            assert!(rb.abs() < 1e-12);
        }
    }

    #[test]
    fn tfmdwe_residual_at_time_zero() {
        let h = vec![0.3; 51];
        let r = residual_tfmdwe(&h, 0.5, 1.0, 0.0, 0.7, None).unwrap();
        assert_eq!(r, -0.7);
    }

    #[test]
    fn constraint_maps_stay_admissible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100_000 {
            let r: f64 = rng.random_range(-30.0..30.0);
            let s = Constraint::UnitInterval.apply(r);
            assert!(s > 0.0 && s < 1.0, "sigmoid({r}) = {s}");
            assert!(Constraint::Positive.apply(r) > 0.0);
        }
    }

    #[test]
    fn ground_truth_cases() {
        let t = ProblemSpec::new(ProblemKind::Tfmdwe, Mode::Forward);
        assert!((t.ground_truth(PI / 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(t.ground_truth(-0.1, 0.5).is_err());
        let b = ProblemSpec::new(ProblemKind::Burgers, Mode::Forward);
        assert_eq!(b.ground_truth(0.4, 0.0).unwrap(), -(PI * 0.4).sin());
        assert!(b.ground_truth(0.0, 1.5).is_err());
    }

    #[test]
    fn initial_physics_is_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let b = ProblemSpec::new(ProblemKind::Burgers, Mode::Inverse);
            let nu = b.physics().constraint.apply(b.sample_initial_physics(&mut rng));
            assert!((0.01..1.0 + 1e-12).contains(&nu));
            let t = ProblemSpec::new(ProblemKind::Tfmdwe, Mode::Inverse);
            let a = t.physics().constraint.apply(t.sample_initial_physics(&mut rng));
            assert!((0.1 - 1e-12..0.9 + 1e-12).contains(&a));
        }
    }
}

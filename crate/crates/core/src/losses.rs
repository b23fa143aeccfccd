//! PINN loss components: mean-squared PDE residual, initial-condition,
//! boundary-condition and data misfits. They are exposed both as a
//! four-objective vector and as a weighted scalar with its gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{compose, grad_loss, BundleVars, EvalRequest, EvaluationBundle, Network, Tape, Var};
use crate::error::{Error, Result};
use crate::observations::{CollocationSets, DataSet};
use crate::problems::{ProblemSpec, ResidualOperator};
use crate::scalar::Real;

pub const OBJECTIVE_NAMES: [&str; 4] = ["l_res", "l_ic", "l_bc", "l_data"];

/// Loss components, each a mean of squares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector<T = f64> {
    pub res: T,
    pub ic: T,
    pub bc: T,
    pub data: T,
}

impl<T: Real> ObjectiveVector<T> {
    pub fn as_array(&self) -> [T; 4] {
        [self.res, self.ic, self.bc, self.data]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self { res: a[0], ic: a[1], bc: a[2], data: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> ObjectiveVector<f64> {
        ObjectiveVector::from_array(self.as_array().map(|v| v.to_f64_lossy()))
    }
}

/// Non-negative weights of the scalarized loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub res: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { res: 1.0, ic: 1.0, bc: 1.0, data: 1.0 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.res, self.ic, self.bc, self.data]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if let Some(&bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain { what: "loss weights must be finite and non-negative", value: bad });
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Domain { what: "at least one loss weight must be positive", value: 0.0 });
        }
        Ok(())
    }
}

/// Dot product of objectives and weights.
pub fn weighted_scalar<T: Real>(obj: &ObjectiveVector<T>, w: &LossWeights) -> T {
    obj.as_array().iter().zip(w.as_array()).fold(T::zero(), |acc, (&o, w)| acc + T::lit(w) * o)
}

/// Which residual points enter `l_res`.
#[derive(Clone, Copy, Debug)]
pub enum Residuals<'a> {
    All,
    Subset(&'a [usize]),
}

/// The loss of one problem instance: spec, network, collocation points and
/// the current data set.
#[derive(Clone, Copy, Debug)]
pub struct PinnLoss<'a> {
    pub spec: &'a ProblemSpec,
    pub net: &'a Network,
    pub coll: &'a CollocationSets,
    pub data: &'a DataSet,
}

impl<'a> PinnLoss<'a> {
    pub fn new(spec: &'a ProblemSpec, net: &'a Network, coll: &'a CollocationSets, data: &'a DataSet) -> Self {
        Self { spec, net, coll, data }
    }

    fn residual_indices(&self, residuals: Residuals<'_>) -> Result<Vec<usize>> {
        let n = self.coll.res.len();
        match residuals {
            Residuals::All => Ok((0..n).collect()),
            Residuals::Subset(idx) => match idx.iter().find(|&&i| i >= n) {
                Some(&i) => Err(Error::Shape(format!("residual index {i} out of range ({n} points)"))),
                None => Ok(idx.to_vec()),
            },
        }
    }

    /// Evaluation requests: IC, BC, data (values), then the residual
    /// evaluations of each selected point.
    fn requests<T: Real>(&self, op: &ResidualOperator<T>, res: &[usize]) -> Vec<EvalRequest<T>> {
        let c = self.coll;
        let per = self.spec.residual_requests_per_point();
        let mut reqs = Vec::with_capacity(c.ic.len() + c.bc.len() + self.data.len() + per * res.len());
        for &(x, t) in c.ic.iter().chain(&c.bc).chain(&self.data.points) {
            reqs.push(EvalRequest::value(T::lit(x), T::lit(t)));
        }
        for &i in res {
            let (x, t) = c.res[i];
            op.push_requests(T::lit(x), T::lit(t), &mut reqs);
        }
        reqs
    }

    /// The four component means on `tape`.
    fn components<T: Real>(&self, tape: &mut Tape<T>, vars: &[BundleVars], op: &ResidualOperator<T>, res: &[usize]) -> Result<[Var; 4]> {
        let c = self.coll;
        let (n_ic, n_bc, n_data) = (c.ic.len(), c.bc.len(), self.data.len());
        let misfits = |tape: &mut Tape<T>, vs: &[BundleVars], targets: &mut dyn Iterator<Item = f64>| {
            let sq: Vec<Var> = vs
                .iter()
                .zip(targets)
                .map(|(v, y)| {
                    let y = tape.constant(T::lit(y));
                    let d = tape.sub(v.u, y);
                    tape.square(d)
                })
                .collect();
            tape.mean(&sq)
        };
        let ic = misfits(tape, &vars[..n_ic], &mut c.ic.iter().map(|&(x, _)| self.spec.initial_condition(x)));
        let bc = misfits(tape, &vars[n_ic..n_ic + n_bc], &mut c.bc.iter().map(|&(x, t)| self.spec.boundary_value(x, t)));
        let data = misfits(tape, &vars[n_ic + n_bc..n_ic + n_bc + n_data], &mut self.data.values.iter().copied());
        let physics = op.physics_var(tape);
        let per = self.spec.residual_requests_per_point();
        let rv = &vars[n_ic + n_bc + n_data..];
        let mut sq = Vec::with_capacity(res.len());
        for (k, &i) in res.iter().enumerate() {
            let (x, t) = c.res[i];
            let noise = c.forcing_noise.as_ref().map(|n| T::lit(n[i]));
            let r = op.residual(tape, &rv[k * per..(k + 1) * per], physics, T::lit(x), T::lit(t), noise)?;
            sq.push(tape.square(r));
        }
        let res = tape.mean(&sq);
        Ok([res, ic, bc, data])
    }

    fn read<T: Real>(tape: &Tape<T>, v: [Var; 4]) -> ObjectiveVector<T> {
        ObjectiveVector::from_array(v.map(|v| tape.value(v)))
    }

    /// Objective vector of the network with parameters `params`.
    pub fn objectives<T: Real>(&self, params: &[T], residuals: Residuals<'_>) -> Result<ObjectiveVector<T>> {
        let op = ResidualOperator::new(self.spec, self.net, params)?;
        let res = self.residual_indices(residuals)?;
        let reqs = self.requests(&op, &res);
        let bundles = self.net.evaluate_batch(params, &reqs)?;
        self.objectives_from_bundles(bundles, &reqs, &op, &res)
    }

    /// Objective vector of an arbitrary field (fixed model physics), given
    /// as a batch evaluator of value and derivative bundles.
    pub fn objectives_of_field<T: Real>(
        &self,
        field: impl Fn(&[EvalRequest<T>]) -> Vec<EvaluationBundle<T>>,
        residuals: Residuals<'_>,
    ) -> Result<ObjectiveVector<T>> {
        let op = ResidualOperator::fixed(self.spec)?;
        let res = self.residual_indices(residuals)?;
        let reqs = self.requests(&op, &res);
        self.objectives_from_bundles(field(&reqs), &reqs, &op, &res)
    }

    fn objectives_from_bundles<T: Real>(
        &self,
        bundles: Vec<EvaluationBundle<T>>,
        reqs: &[EvalRequest<T>],
        op: &ResidualOperator<T>,
        res: &[usize],
    ) -> Result<ObjectiveVector<T>> {
        let mut comps = None;
        let graph = compose(bundles, reqs, |tape, vars| {
            let c = self.components(tape, vars, op, res)?;
            comps = Some(c);
            Ok(c[0])
        })?;
        Ok(Self::read(&graph.tape, comps.expect("components were built")))
    }

    /// Objectives together with the gradient of their weighted sum.
    pub fn value_and_gradient<T: Real>(
        &self,
        params: &[T],
        residuals: Residuals<'_>,
        weights: &LossWeights,
    ) -> Result<(ObjectiveVector<T>, Vec<T>)> {
        let op = ResidualOperator::new(self.spec, self.net, params)?;
        let res = self.residual_indices(residuals)?;
        let reqs = self.requests(&op, &res);
        let w = weights.as_array().map(T::lit);
        let mut comps = None;
        let g = grad_loss(self.net, params, &reqs, |tape, vars| {
            let c = self.components(tape, vars, &op, &res)?;
            comps = Some(c);
            let terms: Vec<(Var, T)> = c.iter().copied().zip(w).collect();
            Ok(tape.linear(&terms))
        })?;
        Ok((Self::read(&g.tape, comps.expect("components were built")), g.gradient))
    }
}

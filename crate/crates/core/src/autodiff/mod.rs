//! Reverse-mode gradients of scalar losses composed from network evaluations.
//!
//! A loss is built in two stages. The network is evaluated at a list of
//! [`EvalRequest`]s; each resulting bundle enters a [`Tape`] as leaves. The
//! caller composes those leaves into a scalar. The reverse sweep over the
//! tape yields per-bundle channel adjoints, which are then pushed through the
//! network by [`Network::accumulate_gradient`].

mod network;
mod tape;

pub use network::{EvalRequest, EvaluationBundle, ForwardPass, Network, NetworkArchitecture, Order, ParameterVector, Workspace};
pub use tape::{Adjoints, Field, Leaf, Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tape handles for one evaluation bundle. Derivative handles are present
/// only for [`Order::Full`] requests.
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub u: Var,
    pub u_x: Option<Var>,
    pub u_t: Option<Var>,
    pub u_xx: Option<Var>,
}

impl BundleVars {
    fn need(v: Option<Var>, what: &str) -> Result<Var> {
        v.ok_or_else(|| Error::Graph(format!("{what} requested from a value-only evaluation")))
    }

    pub fn ux(&self) -> Result<Var> {
        Self::need(self.u_x, "u_x")
    }

    pub fn ut(&self) -> Result<Var> {
        Self::need(self.u_t, "u_t")
    }

    pub fn uxx(&self) -> Result<Var> {
        Self::need(self.u_xx, "u_xx")
    }
}

/// A loss graph after the forward pass.
#[derive(Debug)]
pub struct LossGraph<T> {
    pub tape: Tape<T>,
    pub output: Var,
}

impl<T: Real> LossGraph<T> {
    pub fn value(&self) -> T {
        self.tape.value(self.output)
    }
}

/// Loss value, its parameter gradient, and the tape it came from (so that
/// intermediate nodes can still be read).
#[derive(Debug)]
pub struct LossGradient<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub tape: Tape<T>,
}

fn record<T: Real>(tape: &mut Tape<T>, bundles: &[EvaluationBundle<T>], requests: &[EvalRequest<T>]) -> Vec<BundleVars> {
    bundles
        .iter()
        .zip(requests)
        .enumerate()
        .map(|(k, (b, r))| {
            let k = k as u32;
            let mut leaf = |field, v| tape.leaf(Leaf::Field { bundle: k, field }, v);
            let u = leaf(Field::U, b.u);
            match r.order {
                Order::Value => BundleVars { u, u_x: None, u_t: None, u_xx: None },
                Order::Full => BundleVars {
                    u,
                    u_x: Some(leaf(Field::Ux, b.u_x)),
                    u_t: Some(leaf(Field::Ut, b.u_t)),
                    u_xx: Some(leaf(Field::Uxx, b.u_xx)),
                },
            }
        })
        .collect()
}

/// Evaluates the network at `requests` and composes the loss on a fresh tape.
pub fn build_loss<T, F>(net: &Network, params: &[T], requests: &[EvalRequest<T>], build: F) -> Result<LossGraph<T>>
where
    T: Real,
    F: FnOnce(&mut Tape<T>, &[BundleVars]) -> Result<Var>,
{
    let bundles = net.evaluate_batch(params, requests)?;
    compose(bundles, requests, build)
}

/// Composes a loss on a fresh tape from bundles that were evaluated
/// elsewhere, e.g. by an analytic field.
pub fn compose<T, F>(bundles: Vec<EvaluationBundle<T>>, requests: &[EvalRequest<T>], build: F) -> Result<LossGraph<T>>
where
    T: Real,
    F: FnOnce(&mut Tape<T>, &[BundleVars]) -> Result<Var>,
{
    let mut tape = Tape::with_capacity(requests.len() * 4);
    let vars = record(&mut tape, &bundles, requests);
    let output = build(&mut tape, &vars)?;
    Ok(LossGraph { tape, output })
}

/// Exact reverse-mode gradient of a scalar loss with respect to every entry
/// of `params`.
pub fn grad_loss<T, F>(net: &Network, params: &[T], requests: &[EvalRequest<T>], build: F) -> Result<LossGradient<T>>
where
    T: Real,
    F: FnOnce(&mut Tape<T>, &[BundleVars]) -> Result<Var>,
{
    let (bundles, pass) = net.forward_pass(params, requests)?;
    let graph = compose(bundles, requests, build)?;
    let adj = graph.tape.backward(graph.output)?;
    let mut seeds = vec![[T::zero(); 4]; requests.len()];
    let mut gradient = vec![T::zero(); params.len()];
    for (leaf, a) in graph.tape.leaf_adjoints(&adj) {
        match leaf {
            Leaf::Field { bundle, field } => {
                let s = &mut seeds[bundle as usize][field.channel()];
                *s = *s + a;
            }
            Leaf::Parameter(i) => {
                let g = gradient.get_mut(i).ok_or_else(|| Error::Graph(format!("parameter leaf {i} out of range")))?;
                *g = *g + a;
            }
        }
    }
    net.backward_pass(params, &pass, &seeds, &mut gradient)?;
    Ok(LossGradient { value: graph.value(), gradient, tape: graph.tape })
}

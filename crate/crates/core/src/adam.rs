//! ADAM optimizer and the scalar-loss PINN trainer built on it.

use std::path::Path;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{weighted_scalar, LossWeights, ObjectiveVector, PinnLoss, Residuals, OBJECTIVE_NAMES};
use crate::observations::{csv_err, fmt, io_err};
use crate::scalar::{derive_seed, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Step size for the physics slot; `None` uses `lr`.
    pub physics_lr: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, physics_lr: None }
    }
}

/// Moment estimates and step count for one parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
    config: AdamConfig,
    physics_slot: Option<usize>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig, physics_slot: Option<usize>) -> Self {
        Self { step: 0, m: vec![T::zero(); len], v: vec![T::zero(); len], config, physics_slot }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected ADAM update of `params` in place. A non-finite
    /// gradient is rejected before anything is modified.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, eps) = (T::one(), T::lit(c.eps));
        let n = self.step as i32;
        let bc1 = one - b1.powi(n);
        let bc2 = one - b2.powi(n);
        let lr = T::lit(c.lr);
        let plr = T::lit(c.physics_lr.unwrap_or(c.lr));
        for (i, ((p, &g), (m, v))) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(&mut self.v)).enumerate() {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            let rate = if Some(i) == self.physics_slot { plr } else { lr };
            *p = *p - rate * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Per-run training budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Residual points per epoch, resampled every epoch; `None` uses all.
    pub residual_batch: Option<usize>,
    pub weights: LossWeights,
    pub seed: u64,
}

/// Loss components at one epoch (evaluated on that epoch's batch before
/// the update).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub objectives: ObjectiveVector,
    pub scalar: f64,
}

/// Residual indices used at `epoch`.
pub fn residual_batch(n_points: usize, batch: Option<usize>, seed: u64, epoch: usize) -> Vec<usize> {
    match batch {
        Some(k) if k < n_points => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
            let mut idx = sample(&mut rng, n_points, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n_points).collect(),
    }
}

/// Runs `opts.epochs` ADAM steps on the weighted scalar loss and returns
/// the per-epoch loss trajectory.
pub fn train_adam<T: Real>(
    loss: &PinnLoss<'_>,
    params: &mut [T],
    state: &mut AdamState<T>,
    opts: &TrainOptions,
) -> Result<Vec<LossRecord>> {
    opts.weights.validate()?;
    let mut records = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let batch = residual_batch(loss.coll.res.len(), opts.residual_batch, opts.seed, epoch);
        let (obj, grad) = loss.value_and_gradient(params, Residuals::Subset(&batch), &opts.weights)?;
        let obj = obj.to_f64();
        if !obj.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}: {obj:?}")));
        }
        records.push(LossRecord { epoch, objectives: obj, scalar: weighted_scalar(&obj, &opts.weights) });
        state.step(params, &grad)?;
    }
    Ok(records)
}

/// Writes `epoch,l_res,l_ic,l_bc,l_data,scalar` rows.
pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["epoch"];
    header.extend(OBJECTIVE_NAMES);
    header.push("scalar");
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.epoch.to_string()];
        row.extend(r.objectives.as_array().map(fmt));
        row.push(fmt(r.scalar));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

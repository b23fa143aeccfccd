//! Collocation sets and noisy observations.
//!
//! Observations follow `u_obs = u + η · N(0, std_x(u))`, where `std_x` is
//! the standard deviation of the true solution over the time slice at the
//! observation's spatial grid location.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{EvalRequest, Network};
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::scalar::{derive_seed, Real};

const STREAM_LHS: u64 = 1;
const STREAM_FORCING: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Point counts for [`sample_collocation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollocationCounts {
    pub ic: usize,
    pub bc: usize,
    pub res: usize,
}

impl Default for CollocationCounts {
    fn default() -> Self {
        Self { ic: 50, bc: 50, res: 10_000 }
    }
}

/// Space-time points `(x, t)` at which the PINN loss terms are evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationSets {
    pub ic: Vec<(f64, f64)>,
    pub bc: Vec<(f64, f64)>,
    pub res: Vec<(f64, f64)>,
    /// Relative forcing perturbation per residual point (misspecified
    /// forward TFMDWE only).
    pub forcing_noise: Option<Vec<f64>>,
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { 0.5 * (a + b) } else { a + (b - a) * i as f64 / (n - 1) as f64 })
}

/// Latin-hypercube sample of `n` points in `[x0,x1] × [t0,t1]`.
fn latin_hypercube<R: Rng>(rng: &mut R, n: usize, x: (f64, f64), t: (f64, f64)) -> Vec<(f64, f64)> {
    let mut strata = |lo: f64, hi: f64| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.into_iter().map(|k| lo + (hi - lo) * (k as f64 + rng.random::<f64>()) / n as f64).collect()
    };
    let xs = strata(x.0, x.1);
    let ts = strata(t.0, t.1);
    xs.into_iter().zip(ts).collect()
}

/// IC points evenly spaced on `t = 0`, BC points split evenly between the
/// two spatial boundaries with evenly spaced times, interior points by
/// Latin-hypercube sampling.
pub fn sample_collocation(spec: &ProblemSpec, counts: CollocationCounts, seed: u64) -> CollocationSets {
    let d = spec.domain();
    let ic = linspace(d.x.0, d.x.1, counts.ic).map(|x| (x, d.t.0)).collect();
    let left = counts.bc / 2;
    let mut bc: Vec<(f64, f64)> = linspace(d.t.0, d.t.1, left).map(|t| (d.x.0, t)).collect();
    bc.extend(linspace(d.t.0, d.t.1, counts.bc - left).map(|t| (d.x.1, t)));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_LHS));
    let res = latin_hypercube(&mut rng, counts.res, d.x, d.t);
    let forcing_noise = spec.forcing_noise_level().map(|level| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FORCING));
        (0..counts.res)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                level * e
            })
            .collect::<Vec<f64>>()
    });
    CollocationSets { ic, bc, res, forcing_noise }
}

impl CollocationSets {
    /// Writes `set,x,t,forcing_noise` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["set", "x", "t", "forcing_noise"]).map_err(|e| csv_err(path, e))?;
        let mut put = |set: &str, pts: &[(f64, f64)], noise: Option<&[f64]>| -> Result<()> {
            for (k, &(x, t)) in pts.iter().enumerate() {
                let xi = noise.map_or(0.0, |n| n[k]);
                w.write_record([set.to_string(), fmt(x), fmt(t), fmt(xi)]).map_err(|e| csv_err(path, e))?;
            }
            Ok(())
        };
        put("ic", &self.ic, None)?;
        put("bc", &self.bc, None)?;
        put("res", &self.res, self.forcing_noise.as_deref())?;
        w.flush().map_err(|e| io_err(path, e))
    }
}

/// Target values at fixed points; the data term of the loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub points: Vec<(f64, f64)>,
    pub values: Vec<f64>,
}

impl DataSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes `x,t,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["x", "t", "value"]).map_err(|e| csv_err(path, e))?;
        for (&(x, t), &v) in self.points.iter().zip(&self.values) {
            w.write_record([fmt(x), fmt(t), fmt(v)]).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

/// Noisy samples of the true solution on a regular sparse grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// Ordered by spatial index, then time index.
    pub points: Vec<(f64, f64)>,
    pub values: Vec<f64>,
    pub truth: Vec<f64>,
    /// Per-point noise standard deviation `η · std_x(u)`.
    pub sigma: Vec<f64>,
    pub eta: f64,
    pub grid: (usize, usize),
    pub seed: u64,
}

/// Observation grid: `nx` cell-centred spatial locations and the `nt`
/// times `t_j = j / nt`, `j = 1..=nt`.
pub const DEFAULT_OBSERVATION_GRID: (usize, usize) = (20, 10);

/// Samples the true solution on the observation grid and adds Gaussian
/// noise of standard deviation `eta · std_x(u_truth)`.
pub fn make_observations(spec: &ProblemSpec, eta: f64, grid: (usize, usize), seed: u64) -> Result<ObservationSet> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Domain { what: "noise level must be finite and non-negative", value: eta });
    }
    let (nx, nt) = grid;
    if nx == 0 || nt == 0 {
        return Err(Error::Shape("observation grid must be non-empty".into()));
    }
    let d = spec.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_NOISE));
    let mut points = Vec::with_capacity(nx * nt);
    let mut truth = Vec::with_capacity(nx * nt);
    let mut sigma = Vec::with_capacity(nx * nt);
    for i in 0..nx {
        let x = d.x.0 + (d.x.1 - d.x.0) * (i as f64 + 0.5) / nx as f64;
        let slice = (1..=nt)
            .map(|j| {
                let t = d.t.0 + (d.t.1 - d.t.0) * j as f64 / nt as f64;
                spec.ground_truth(x, t).map(|u| (t, u))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = slice.iter().map(|s| s.1).sum::<f64>() / nt as f64;
        let std = (slice.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / nt as f64).sqrt();
        for (t, u) in slice {
            points.push((x, t));
            truth.push(u);
            sigma.push(eta * std);
        }
    }
    let values = truth
        .iter()
        .zip(&sigma)
        .map(|(&u, &s)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            if s > 0.0 {
                u + s * e
            } else {
                u
            }
        })
        .collect();
    Ok(ObservationSet { points, values, truth, sigma, eta, grid, seed })
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn data(&self) -> DataSet {
        DataSet { points: self.points.clone(), values: self.values.clone() }
    }

    /// Writes `x,t,value,sigma` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["x", "t", "value", "sigma"]).map_err(|e| csv_err(path, e))?;
        for (k, &(x, t)) in self.points.iter().enumerate() {
            w.write_record([fmt(x), fmt(t), fmt(self.values[k]), fmt(self.sigma[k])]).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

/// Exact evaluation of a field at the observation points, in set order.
pub fn observe(field: impl Fn(f64, f64) -> f64, points: &[(f64, f64)]) -> Vec<f64> {
    points.iter().map(|&(x, t)| field(x, t)).collect()
}

/// [`observe`] for a network, batched.
pub fn observe_network<T: Real>(net: &Network, params: &[T], points: &[(f64, f64)]) -> Result<Vec<f64>> {
    let reqs: Vec<EvalRequest<T>> = points.iter().map(|&(x, t)| EvalRequest::value(T::lit(x), T::lit(t))).collect();
    Ok(net.evaluate_batch(params, &reqs)?.into_iter().map(|b| b.u.to_f64_lossy()).collect())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

pub(crate) fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.display().to_string(), source }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

//! Perturbed-observation ensemble Kalman analysis of predictions at the
//! observation points (the observation operator is the identity).
//!
//! With anomaly rows `A` (`n × d`), `P = Aᵀ A / (n−1)` and diagonal `R`,
//! the gain applied to an innovation `δ` is
//! `K δ = Aᵀ ((n−1) I + A R⁻¹ Aᵀ)⁻¹ A R⁻¹ δ`,
//! so only an `n × n` symmetric positive-definite system is solved.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::observations::DataSet;
use crate::scalar::Real;

/// Smallest observation variance admitted when building `R` from noise
/// amplitudes.
pub const MIN_OBSERVATION_VARIANCE: f64 = 1e-6;

/// Member predictions at the observation points, one row per member.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMatrix<T> {
    n_ens: usize,
    n_obs: usize,
    data: Vec<T>,
    /// Individual ids the rows came from.
    pub ids: Vec<u64>,
}

impl<T: Real> EnsembleMatrix<T> {
    pub fn new(rows: Vec<Vec<T>>, ids: Vec<u64>) -> Result<Self> {
        let n_ens = rows.len();
        if n_ens < 2 {
            return Err(Error::Shape(format!("an ensemble needs at least two members, got {n_ens}")));
        }
        if ids.len() != n_ens {
            return Err(Error::Shape(format!("{} ids for {n_ens} members", ids.len())));
        }
        let n_obs = rows[0].len();
        if let Some(r) = rows.iter().position(|r| r.len() != n_obs) {
            return Err(Error::Shape(format!("member {r} has {} values, expected {n_obs}", rows[r].len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("ensemble contains non-finite predictions".into()));
        }
        Ok(Self { n_ens, n_obs, data: rows.concat(), ids })
    }

    pub fn members(&self) -> usize {
        self.n_ens
    }

    pub fn observations(&self) -> usize {
        self.n_obs
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_obs..(i + 1) * self.n_obs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.n_obs)
    }

    /// Column means.
    pub fn mean(&self) -> Vec<T> {
        let inv = T::one() / T::from_usize_lossy(self.n_ens);
        let mut m = vec![T::zero(); self.n_obs];
        for r in self.rows() {
            for (a, &v) in m.iter_mut().zip(r) {
                *a = *a + v;
            }
        }
        m.iter_mut().for_each(|a| *a = *a * inv);
        m
    }
}

/// Forecast mean and centred anomalies; `P = Aᵀ A / (n−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastStatistics<T> {
    pub mean: Vec<T>,
    /// Row-major `n_ens × n_obs` deviations from the mean.
    pub anomalies: Vec<T>,
    n_ens: usize,
}

impl<T: Real> ForecastStatistics<T> {
    fn n_obs(&self) -> usize {
        self.mean.len()
    }

    fn column(&self, j: usize) -> impl Iterator<Item = T> + '_ {
        self.anomalies.iter().skip(j).step_by(self.n_obs()).copied()
    }

    /// Sample covariance between observation points `j` and `k`.
    pub fn covariance(&self, j: usize, k: usize) -> T {
        let s: T = self.column(j).zip(self.column(k)).map(|(a, b)| a * b).sum();
        s / T::from_usize_lossy(self.n_ens - 1)
    }

    pub fn variances(&self) -> Vec<T> {
        (0..self.n_obs()).map(|j| self.covariance(j, j)).collect()
    }

    /// Largest absolute correlation between distinct observation points
    /// (zero when every point has zero spread).
    pub fn max_offdiagonal_correlation(&self) -> f64 {
        let d = self.n_obs();
        let sd: Vec<f64> = self.variances().iter().map(|v| v.to_f64_lossy().sqrt()).collect();
        let mut best = 0.0f64;
        for j in 0..d {
            for k in j + 1..d {
                if sd[j] > 0.0 && sd[k] > 0.0 {
                    let c = self.covariance(j, k).to_f64_lossy() / (sd[j] * sd[k]);
                    best = best.max(c.abs());
                }
            }
        }
        best
    }
}

pub fn forecast_statistics<T: Real>(ens: &EnsembleMatrix<T>) -> ForecastStatistics<T> {
    let mean = ens.mean();
    let anomalies = ens.rows().flat_map(|r| r.iter().zip(&mean).map(|(&v, &m)| v - m)).collect();
    ForecastStatistics { mean, anomalies, n_ens: ens.n_ens }
}

/// Diagonal observation covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationErrorModel<T> {
    variances: Vec<T>,
}

impl<T: Real> ObservationErrorModel<T> {
    pub fn new(variances: Vec<T>) -> Result<Self> {
        match variances.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
            Some(v) => Err(Error::Domain { what: "observation variance must be positive", value: v.to_f64_lossy() }),
            None => Ok(Self { variances }),
        }
    }

    /// `R = diag(max(σ², MIN_OBSERVATION_VARIANCE))`.
    pub fn from_sigma(sigma: &[f64]) -> Self {
        Self { variances: sigma.iter().map(|s| T::lit((s * s).max(MIN_OBSERVATION_VARIANCE))).collect() }
    }

    pub fn variances(&self) -> &[T] {
        &self.variances
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDiagnostics {
    pub max_offdiagonal_correlation: f64,
    /// RMS of `y − forecast mean`.
    pub innovation_rms: f64,
    /// RMS of `analysis mean − forecast mean`.
    pub increment_rms: f64,
    pub forecast_spread: f64,
    pub analysis_spread: f64,
}

#[derive(Clone, Debug)]
pub struct AnalysisData<T> {
    pub forecast_mean: Vec<T>,
    pub analysis: EnsembleMatrix<T>,
    pub mean: Vec<T>,
    pub diagnostics: AnalysisDiagnostics,
}

impl<T: Real> AnalysisData<T> {
    /// Analysis mean paired with the observation locations.
    pub fn to_data_set(&self, points: &[(f64, f64)]) -> DataSet {
        DataSet { points: points.to_vec(), values: self.mean.iter().map(|v| v.to_f64_lossy()).collect() }
    }
}

fn rms<T: Real>(a: &[T], b: &[T]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (*x - *y).to_f64_lossy().powi(2)).sum();
    (s / a.len().max(1) as f64).sqrt()
}

fn spread<T: Real>(s: &ForecastStatistics<T>) -> f64 {
    let total: f64 = s.variances().iter().map(|v| v.to_f64_lossy()).sum();
    (total / s.n_obs().max(1) as f64).sqrt()
}

/// Stochastic EnKF update of every member against `y` perturbed by draws
/// from `N(0, R)`.
pub fn analyze<T: Real>(ens: &EnsembleMatrix<T>, y: &[T], r: &ObservationErrorModel<T>, seed: u64) -> Result<AnalysisData<T>> {
    let (n, d) = (ens.n_ens, ens.n_obs);
    if y.len() != d || r.variances.len() != d {
        return Err(Error::Shape(format!("ensemble has {d} observation columns, data {} and error model {}", y.len(), r.variances.len())));
    }
    let stats = forecast_statistics(ens);
    let a = &stats.anomalies;
    let rinv: Vec<T> = r.variances.iter().map(|v| T::one() / *v).collect();
    // M = (n−1) I + A R⁻¹ Aᵀ
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..=i {
            let mut s = T::zero();
            for j in 0..d {
                s = s + a[i * d + j] * rinv[j] * a[k * d + j];
            }
            m[i * n + k] = s;
            m[k * n + i] = s;
        }
        m[i * n + i] = m[i * n + i] + T::from_usize_lossy(n - 1);
    }
    let chol = Cholesky::new(&m, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd: Vec<f64> = r.variances.iter().map(|v| v.to_f64_lossy().sqrt()).collect();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let x = ens.row(i);
        let innov: Vec<T> = (0..d)
            .map(|j| {
                let e: f64 = StandardNormal.sample(&mut rng);
                y[j] + T::lit(sd[j] * e) - x[j]
            })
            .collect();
        let mut w: Vec<T> = (0..n).map(|k| (0..d).map(|j| a[k * d + j] * rinv[j] * innov[j]).sum()).collect();
        chol.solve_in_place(&mut w);
        let mut xa = x.to_vec();
        for (k, &wk) in w.iter().enumerate() {
            for (v, &ak) in xa.iter_mut().zip(&a[k * d..(k + 1) * d]) {
                *v = *v + wk * ak;
            }
        }
        rows.push(xa);
    }
    let analysis = EnsembleMatrix::new(rows, ens.ids.clone())?;
    let mean = analysis.mean();
    let post = forecast_statistics(&analysis);
    let diagnostics = AnalysisDiagnostics {
        max_offdiagonal_correlation: stats.max_offdiagonal_correlation(),
        innovation_rms: rms(y, &stats.mean),
        increment_rms: rms(&mean, &stats.mean),
        forecast_spread: spread(&stats),
        analysis_spread: spread(&post),
    };
    Ok(AnalysisData { forecast_mean: stats.mean, analysis, mean, diagnostics })
}

//! L1 quadrature of the Caputo derivative of order `alpha ∈ (0, 1)` on a
//! uniform history grid `0 = t_0 < … < t_M = t`.
//!
//! With `b_k = (k+1)^{1-α} − k^{1-α}` the scheme reads
//! `D^α u(t_M) ≈ Δt^{-α}/Γ(2−α) · Σ_{k=0}^{M-1} b_k (u_{M-k} − u_{M-k-1})`,
//! which is a linear functional of the history values `u_0..u_M`.

use crate::error::{Error, Result};
use crate::scalar::{digamma, gamma, Real};

/// Quadrature weights for a fixed `(alpha, M)`.
#[derive(Clone, Debug)]
pub struct CaputoQuadrature<T> {
    alpha: T,
    steps: usize,
    /// `b_k`, `k = 0..M`.
    weights: Vec<T>,
    /// `db_k/dα`.
    weight_derivs: Vec<T>,
    inv_gamma: T,
    digamma_shift: T,
}

impl<T: Real> CaputoQuadrature<T> {
    pub fn new(alpha: T, steps: usize) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::Domain { what: "Caputo order must lie in (0, 1)", value: alpha.to_f64_lossy() });
        }
        if steps == 0 {
            return Err(Error::Domain { what: "Caputo history needs at least one step", value: 0.0 });
        }
        let e = T::one() - alpha;
        let pw = |k: usize| -> (T, T) {
            if k == 0 {
                (T::zero(), T::zero())
            } else {
                let kf = T::from_usize_lossy(k);
                let p = kf.powf(e);
                (p, p * kf.ln())
            }
        };
        let mut weights = Vec::with_capacity(steps);
        let mut weight_derivs = Vec::with_capacity(steps);
        for k in 0..steps {
            let (p1, l1) = pw(k + 1);
            let (p0, l0) = pw(k);
            weights.push(p1 - p0);
            // d/dα k^{1-α} = -k^{1-α} ln k
            weight_derivs.push(-(l1 - l0));
        }
        let two_minus = T::lit(2.0) - alpha;
        Ok(Self { alpha, steps, weights, weight_derivs, inv_gamma: T::one() / gamma(two_minus), digamma_shift: digamma(two_minus) })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The `b_k` coefficients (length `M`).
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Coefficients `w_j` of `u_j`, `j = 0..=M`, together with `dw_j/dα`,
    /// for step `dt`.
    pub fn history_weights(&self, dt: T) -> Vec<(T, T)> {
        let m = self.steps;
        let c = dt.powf(-self.alpha) * self.inv_gamma;
        // dc/dα = c (−ln Δt + ψ(2−α))
        let dc = c * (self.digamma_shift - dt.ln());
        let b = &self.weights;
        let db = &self.weight_derivs;
        (0..=m)
            .map(|j| {
                // u_j receives +b_{M-j} (j ≥ 1) and −b_{M-j-1} (j ≤ M-1)
                let (mut beta, mut dbeta) = (T::zero(), T::zero());
                if j >= 1 {
                    beta = beta + b[m - j];
                    dbeta = dbeta + db[m - j];
                }
                if j < m {
                    beta = beta - b[m - j - 1];
                    dbeta = dbeta - db[m - j - 1];
                }
                (c * beta, dc * beta + c * dbeta)
            })
            .collect()
    }

    /// Applies the scheme to history values `u_0..=u_M` with step `dt`.
    pub fn apply(&self, history: &[T], dt: T) -> Result<T> {
        if history.len() != self.steps + 1 {
            return Err(Error::Shape(format!("history has {} values, expected {}", history.len(), self.steps + 1)));
        }
        let m = self.steps;
        let mut s = T::zero();
        for k in 0..m {
            s = s + self.weights[k] * (history[m - k] - history[m - k - 1]);
        }
        Ok(dt.powf(-self.alpha) * self.inv_gamma * s)
    }
}

/// L1 approximation of the Caputo derivative at the last grid point of
/// `u_values` (uniform spacing `dt`, first entry at time zero).
pub fn caputo_l1<T: Real>(u_values: &[T], alpha: T, dt: T) -> Result<T> {
    if u_values.len() < 2 {
        return Err(Error::Shape("Caputo history needs at least two values".into()));
    }
    CaputoQuadrature::new(alpha, u_values.len() - 1)?.apply(u_values, dt)
}

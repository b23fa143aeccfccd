//! Parent selection, crossover and mutation on parameter genomes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    /// Probability that a parent pair is recombined at all.
    pub crossover_prob: f64,
    /// Per-coordinate swap probability of uniform crossover.
    pub swap_prob: f64,
    /// Per-coordinate mutation probability; `None` means `1 / genome length`.
    pub mutation_prob: Option<f64>,
    /// Mutation standard deviation relative to the genome's RMS magnitude.
    pub mutation_scale: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self { crossover_prob: 0.9, swap_prob: 0.5, mutation_prob: None, mutation_scale: 0.01 }
    }
}

/// What the tournament needs to know about a parent.
#[derive(Clone, Copy, Debug)]
pub struct Parent<'a, T> {
    pub genome: &'a [T],
    pub rank: usize,
    pub distance: f64,
}

/// Binary tournament: lower rank wins, then smaller niche distance, then the
/// first contestant drawn.
pub fn tournament<T, R: Rng>(parents: &[Parent<'_, T>], rng: &mut R) -> usize {
    let n = parents.len();
    let a = rng.random_range(0..n);
    if n == 1 {
        return a;
    }
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (pa, pb) = (&parents[a], &parents[b]);
    let better = pb.rank < pa.rank || (pb.rank == pa.rank && pb.distance < pa.distance);
    if better {
        b
    } else {
        a
    }
}

fn rms<T: Real>(g: &[T]) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    (g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / g.len() as f64).sqrt()
}

fn mutate<T: Real, R: Rng>(g: &mut [T], cfg: &VariationConfig, rng: &mut R) {
    let p = cfg.mutation_prob.unwrap_or(1.0 / g.len().max(1) as f64);
    let sd = cfg.mutation_scale * rms(g);
    for v in g.iter_mut() {
        if rng.random_bool(p.clamp(0.0, 1.0)) {
            let e: f64 = rng.sample(StandardNormal);
            *v = *v + T::lit(sd * e);
        }
    }
}

/// `count` children from tournament-selected parent pairs.
pub fn make_offspring<T: Real, R: Rng>(parents: &[Parent<'_, T>], count: usize, cfg: &VariationConfig, rng: &mut R) -> Vec<Vec<T>> {
    assert!(!parents.is_empty(), "offspring need at least one parent");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = parents[tournament(parents, rng)].genome;
        let b = parents[tournament(parents, rng)].genome;
        let (mut c1, mut c2) = (a.to_vec(), b.to_vec());
        if rng.random_bool(cfg.crossover_prob.clamp(0.0, 1.0)) {
            for (x, y) in c1.iter_mut().zip(c2.iter_mut()) {
                if rng.random_bool(cfg.swap_prob.clamp(0.0, 1.0)) {
                    std::mem::swap(x, y);
                }
            }
        }
        mutate(&mut c1, cfg, rng);
        mutate(&mut c2, cfg, rng);
        out.push(c1);
        if out.len() < count {
            out.push(c2);
        }
    }
    out
}

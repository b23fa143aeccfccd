//! Reference directions, objective normalization and niche-preserving
//! survival.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sorting::{fast_nondominated_sort, ranks};
use crate::linalg::solve_pivoted;

/// Das–Dennis lattice on the unit simplex: every point `k/p` with
/// non-negative integer `k` summing to `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePoints {
    pub dims: usize,
    pub divisions: usize,
    pub points: Vec<Vec<f64>>,
}

impl ReferencePoints {
    pub fn das_dennis(dims: usize, divisions: usize) -> Self {
        assert!(dims >= 1 && divisions >= 1, "need at least one objective and one division");
        fn fill(left: usize, slot: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if slot + 1 == cur.len() {
                cur[slot] = left;
                out.push(cur.clone());
                return;
            }
            for k in (0..=left).rev() {
                cur[slot] = k;
                fill(left - k, slot + 1, cur, out);
            }
        }
        let mut lattice = Vec::new();
        fill(divisions, 0, &mut vec![0; dims], &mut lattice);
        let p = divisions as f64;
        let points = lattice.into_iter().map(|k| k.into_iter().map(|v| v as f64 / p).collect()).collect();
        Self { dims, divisions, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Translation and scaling that map objectives onto the reference simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub ideal: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// Whether the extreme-point hyperplane was degenerate and the
    /// per-objective range was used instead.
    pub fallback: bool,
}

const ASF_EPS: f64 = 1e-6;
const INTERCEPT_TOL: f64 = 1e-10;

impl Normalization {
    /// Ideal point and extreme-point intercepts of `objs`.
    pub fn fit(objs: &[&[f64]]) -> Self {
        let m = objs[0].len();
        let ideal: Vec<f64> = (0..m).map(|j| objs.iter().map(|o| o[j]).fold(f64::INFINITY, f64::min)).collect();
        let shifted: Vec<Vec<f64>> = objs.iter().map(|o| o.iter().zip(&ideal).map(|(v, z)| v - z).collect()).collect();
        let extremes: Vec<usize> = (0..m)
            .map(|axis| {
                let asf = |f: &[f64]| {
                    f.iter().enumerate().map(|(j, &v)| v / if j == axis { 1.0 } else { ASF_EPS }).fold(f64::NEG_INFINITY, f64::max)
                };
                let mut best = 0;
                for i in 1..shifted.len() {
                    if asf(&shifted[i]) < asf(&shifted[best]) {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let a: Vec<f64> = extremes.iter().flat_map(|&i| shifted[i].iter().copied()).collect();
        let max_range: Vec<f64> = (0..m).map(|j| shifted.iter().map(|f| f[j]).fold(0.0, f64::max)).collect();
        let hyperplane = solve_pivoted(&a, &vec![1.0; m], 1e-14).and_then(|x| {
            let icpt: Vec<f64> = x.iter().map(|v| 1.0 / v).collect();
            icpt.iter().all(|&v| v.is_finite() && v > INTERCEPT_TOL).then_some(icpt)
        });
        match hyperplane {
            Some(intercepts) => Self { ideal, intercepts, fallback: false },
            None => Self {
                ideal,
                intercepts: max_range.into_iter().map(|r| if r > INTERCEPT_TOL && r.is_finite() { r } else { 1.0 }).collect(),
                fallback: true,
            },
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.ideal).zip(&self.intercepts).map(|((v, z), a)| (v - z) / a).collect()
    }
}

/// Reference direction assigned to one individual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Niche {
    pub reference: usize,
    /// Perpendicular distance from the normalized objectives to the
    /// reference line.
    pub distance: f64,
}

/// Nearest reference line of the normalized point `f`.
pub fn associate(f: &[f64], refs: &ReferencePoints) -> Niche {
    let mut best = Niche { reference: 0, distance: f64::INFINITY };
    let ff: f64 = f.iter().map(|v| v * v).sum();
    for (r, w) in refs.points.iter().enumerate() {
        let ww: f64 = w.iter().map(|v| v * v).sum();
        let fw: f64 = f.iter().zip(w).map(|(a, b)| a * b).sum();
        let d = (ff - fw * fw / ww).max(0.0).sqrt();
        if d < best.distance {
            best = Niche { reference: r, distance: d };
        }
    }
    best
}

/// Result of one survival step over a combined population.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Indices of survivors, ascending.
    pub survivors: Vec<usize>,
    /// 1-based non-domination rank of every input.
    pub ranks: Vec<usize>,
    /// Niche of every input in the fronts up to and including the last
    /// one considered.
    pub niches: Vec<Option<Niche>>,
    pub normalization: Normalization,
}

/// Selects exactly `n` of `objs`: whole fronts while they fit, then
/// niche-preserving picks from the first front that does not. Non-finite
/// objective values are treated as `+∞`.
pub fn survival_select<V: AsRef<[f64]>, R: Rng>(objs: &[V], refs: &ReferencePoints, n: usize, rng: &mut R) -> Selection {
    assert!(n >= 1 && n <= objs.len(), "cannot select {n} of {}", objs.len());
    let clean: Vec<Vec<f64>> = objs
        .iter()
        .map(|o| o.as_ref().iter().map(|&v| if v.is_finite() || v == f64::NEG_INFINITY { v } else { f64::INFINITY }).collect())
        .collect();
    let fronts = fast_nondominated_sort(&clean);
    let rank = ranks(&fronts, clean.len());
    let mut kept: Vec<usize> = Vec::with_capacity(n);
    let mut last: &[usize] = &[];
    for f in &fronts {
        if kept.len() + f.len() > n {
            last = f;
            break;
        }
        kept.extend(f);
        if kept.len() == n {
            break;
        }
    }
    let considered: Vec<usize> = kept.iter().chain(last).copied().collect();
    let finite = |v: f64| if v.is_finite() { v } else { 1e100 };
    let bounded: Vec<Vec<f64>> = clean.iter().map(|o| o.iter().map(|&v| finite(v)).collect()).collect();
    let subset: Vec<&[f64]> = considered.iter().map(|&i| bounded[i].as_slice()).collect();
    let normalization = Normalization::fit(&subset);
    let mut niches = vec![None; clean.len()];
    for &i in &considered {
        niches[i] = Some(associate(&normalization.apply(&bounded[i]), refs));
    }
    let mut counts = vec![0usize; refs.len()];
    for &i in &kept {
        counts[niches[i].expect("associated").reference] += 1;
    }
    let mut pool: Vec<usize> = last.to_vec();
    while kept.len() < n {
        // Niches that still have candidates, keyed by their lowest member
        // index so that the order does not depend on how the reference set is
        // enumerated.
        let mut open: Vec<(usize, usize)> = Vec::new();
        for &i in &pool {
            let r = niches[i].expect("associated").reference;
            if !open.iter().any(|&(rr, _)| rr == r) {
                open.push((r, i));
            }
        }
        let least = open.iter().map(|&(r, _)| counts[r]).min().expect("candidates remain");
        let tied: Vec<usize> = open.iter().filter(|&&(r, _)| counts[r] == least).map(|&(r, _)| r).collect();
        let r = tied[rng.random_range(0..tied.len())];
        let members: Vec<usize> = pool.iter().copied().filter(|&i| niches[i].expect("associated").reference == r).collect();
        let pick = if counts[r] == 0 {
            *members
                .iter()
                .min_by(|&&a, &&b| {
                    let (da, db) = (niches[a].unwrap().distance, niches[b].unwrap().distance);
                    da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
                })
                .expect("niche has members")
        } else {
            members[rng.random_range(0..members.len())]
        };
        kept.push(pick);
        pool.retain(|&i| i != pick);
        counts[r] += 1;
    }
    kept.sort_unstable();
    Selection { survivors: kept, ranks: rank, niches, normalization }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn das_dennis_counts_and_simplex() {
        let r = ReferencePoints::das_dennis(4, 4);
        assert_eq!(r.len(), 35);
        for p in &r.points {
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(ReferencePoints::das_dennis(2, 4).len(), 5);
        assert_eq!(ReferencePoints::das_dennis(3, 12).len(), 91);
    }

    #[test]
    fn normalization_maps_extremes_to_unit_axes() {
        let objs: [&[f64]; 3] = [&[1.0, 5.0, 3.0], &[4.0, 2.0, 3.0], &[1.0, 2.0, 9.0]];
        let n = Normalization::fit(&objs);
        assert_eq!(n.ideal, vec![1.0, 2.0, 3.0]);
        assert!(!n.fallback);
        for (a, e) in n.intercepts.iter().zip([3.0, 3.0, 6.0]) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn degenerate_hyperplane_falls_back_to_range() {
        let objs: [&[f64]; 2] = [&[1.0, 1.0], &[1.0, 1.0]];
        let n = Normalization::fit(&objs);
        assert!(n.fallback);
        assert_eq!(n.intercepts, vec![1.0, 1.0]);
    }

    #[test]
    fn first_front_of_exact_size_is_kept() {
        let objs = [[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 3.0]];
        let refs = ReferencePoints::das_dennis(2, 4);
        let s = survival_select(&objs, &refs, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.survivors, vec![0, 1]);
        assert_eq!(s.ranks, vec![1, 1, 2, 3]);
    }

    #[test]
    fn hand_traced_niching_on_two_objectives() {
        // Four occupied niches, all empty before filling: each round takes the
        // closest member of a fresh niche whatever the random order.
        let objs = [
            [0.0, 1.0],   // A: ref (0,1), d = 0
            [0.05, 0.95], // B: ref (0,1)
            [0.5, 0.5],   // C: ref (.5,.5), d = 0
            [0.45, 0.55], // D: ref (.5,.5)
            [1.0, 0.0],   // E: ref (1,0), d = 0
            [0.95, 0.05], // F: ref (1,0)
            [0.25, 0.75], // G: ref (.25,.75), d = 0
            [0.9, 0.1],   // H: ref (1,0)
        ];
        let refs = ReferencePoints::das_dennis(2, 4);
        for seed in 0..20 {
            let s = survival_select(&objs, &refs, 4, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(s.survivors, vec![0, 2, 4, 6]);
        }
        let s = survival_select(&objs, &refs, 4, &mut ChaCha8Rng::seed_from_u64(0));
        let refs_of = |i: usize| refs.points[s.niches[i].unwrap().reference].clone();
        assert_eq!(refs_of(1), vec![0.0, 1.0]);
        assert_eq!(refs_of(7), vec![1.0, 0.0]);
        assert_eq!(refs_of(3), vec![0.5, 0.5]);
    }

    #[test]
    fn single_survivor_is_nondominated() {
        let objs = [[2.0, 2.0], [1.0, 3.0], [0.5, 0.5], [3.0, 1.0]];
        let refs = ReferencePoints::das_dennis(2, 4);
        let s = survival_select(&objs, &refs, 1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.survivors, vec![2]);
    }

    #[test]
    fn infinite_objectives_lose() {
        let objs = [[f64::INFINITY; 2], [f64::NAN, 5.0], [1.0, 1.0], [2.0, 0.5]];
        let refs = ReferencePoints::das_dennis(2, 4);
        let s = survival_select(&objs, &refs, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.survivors, vec![2, 3]);
    }
}

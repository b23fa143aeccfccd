//! Pareto dominance and fast non-dominated sorting (minimization).

/// Outcome of comparing `a` against `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dominance {
    /// `a ≤ b` componentwise with at least one strict inequality.
    Strict,
    /// `a ≤ b` componentwise and equal everywhere.
    Weak,
    None,
}

pub fn dominates(a: &[f64], b: &[f64]) -> Dominance {
    assert_eq!(a.len(), b.len(), "objective vectors differ in length");
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return Dominance::None;
        }
        strict |= x < y;
    }
    if strict {
        Dominance::Strict
    } else {
        Dominance::Weak
    }
}

fn strictly(a: &[f64], b: &[f64]) -> bool {
    dominates(a, b) == Dominance::Strict
}

/// Disjoint fronts `F₁, F₂, …` of indices into the sorted list; members of
/// each front are in ascending index order.
pub type Fronts = Vec<Vec<usize>>;

/// Deb's `O(N² m)` sort. NaN components compare as `+∞`.
pub fn fast_nondominated_sort<V: AsRef<[f64]>>(objs: &[V]) -> Fronts {
    let clean: Vec<Vec<f64>> =
        objs.iter().map(|o| o.as_ref().iter().map(|&v| if v.is_nan() { f64::INFINITY } else { v }).collect()).collect();
    let n = clean.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if strictly(&clean[i], &clean[j]) {
                dominating[i].push(j);
                dominated_by[j] += 1;
            } else if strictly(&clean[j], &clean[i]) {
                dominating[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// 1-based rank of every index under `fronts`.
pub fn ranks(fronts: &Fronts, n: usize) -> Vec<usize> {
    let mut r = vec![0; n];
    for (k, f) in fronts.iter().enumerate() {
        for &i in f {
            r[i] = k + 1;
        }
    }
    r
}

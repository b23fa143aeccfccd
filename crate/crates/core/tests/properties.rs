use mopinn_core::enkf::{analyze, forecast_statistics, EnsembleMatrix, ObservationErrorModel};
use mopinn_core::nsga3::{dominates, fast_nondominated_sort, ranks, survival_select, Dominance, ReferencePoints};
use mopinn_core::observations::observe;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn objective_sets(dims: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0u8..6, dims).prop_map(|v| v.into_iter().map(f64::from).collect()), 2..24)
}

/// Quadratic-time reference: rank k holds the points dominated only by
/// points of ranks below k.
fn peel_ranks(objs: &[Vec<f64>]) -> Vec<usize> {
    let mut rank = vec![0usize; objs.len()];
    let mut level = 0;
    while rank.contains(&0) {
        level += 1;
        let open: Vec<usize> = (0..objs.len()).filter(|&i| rank[i] == 0).collect();
        let front: Vec<usize> =
            open.iter().copied().filter(|&i| !open.iter().any(|&j| dominates(&objs[j], &objs[i]) == Dominance::Strict)).collect();
        for i in front {
            rank[i] = level;
        }
    }
    rank
}

proptest! {
    #[test]
    fn observation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, pts in prop::collection::vec((-1.0f64..1.0, 0.0f64..1.0), 1..40)) {
        let f = |x: f64, t: f64| (3.0 * x).sin() * t;
        let g = |x: f64, t: f64| x * x - t;
        let combined = observe(|x, t| a * f(x, t) + b * g(x, t), &pts);
        let (of, og) = (observe(f, &pts), observe(g, &pts));
        for k in 0..pts.len() {
            prop_assert!((combined[k] - (a * of[k] + b * og[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn sorting_matches_peeling(objs in objective_sets(4)) {
        let fronts = fast_nondominated_sort(&objs);
        prop_assert_eq!(ranks(&fronts, objs.len()), peel_ranks(&objs));
        let mut all: Vec<usize> = fronts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..objs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn survival_keeps_whole_fronts_and_no_duplicates(objs in objective_sets(4), frac in 0.1f64..1.0, seed in 0u64..1000) {
        let n = ((objs.len() as f64 * frac).ceil() as usize).clamp(1, objs.len());
        let refs = ReferencePoints::das_dennis(4, 4);
        let s = survival_select(&objs, &refs, n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(s.survivors.len(), n);
        prop_assert!(s.survivors.windows(2).all(|w| w[0] < w[1]));
        let worst = s.survivors.iter().map(|&i| s.ranks[i]).max().unwrap();
        for i in 0..objs.len() {
            if s.ranks[i] < worst {
                prop_assert!(s.survivors.contains(&i), "member {} of a better front was dropped", i);
            }
        }
    }

    #[test]
    fn survival_is_invariant_under_permutations(objs in objective_sets(4), frac in 0.1f64..1.0, rot in 0usize..24, cols in Just([2usize, 0, 3, 1])) {
        let n = ((objs.len() as f64 * frac).ceil() as usize).clamp(1, objs.len());
        let refs = ReferencePoints::das_dennis(4, 4);
        let rank_profile = |o: &[Vec<f64>]| {
            let s = survival_select(o, &refs, n, &mut ChaCha8Rng::seed_from_u64(5));
            let mut r: Vec<usize> = s.survivors.iter().map(|&i| s.ranks[i]).collect();
            r.sort_unstable();
            r
        };
        let base = rank_profile(&objs);
        let mut rows = objs.clone();
        rows.rotate_left(rot % objs.len());
        prop_assert_eq!(&rank_profile(&rows), &base);
        let swapped: Vec<Vec<f64>> = objs.iter().map(|o| cols.iter().map(|&c| o[c]).collect()).collect();
        prop_assert_eq!(&rank_profile(&swapped), &base);
    }

    #[test]
    fn analysis_preserves_shape_and_stays_finite(
        members in 3usize..12,
        obs in 1usize..8,
        spread in 0.01f64..2.0,
        sigma in 1e-3f64..1.0,
        seed in 0u64..500,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, spread).unwrap();
        let rows: Vec<Vec<f64>> = (0..members).map(|_| (0..obs).map(|j| j as f64 + normal.sample(&mut rng)).collect()).collect();
        let ens = EnsembleMatrix::new(rows, (0..members as u64).collect()).unwrap();
        let y: Vec<f64> = (0..obs).map(|j| j as f64 + 0.5).collect();
        let r = ObservationErrorModel::from_sigma(&vec![sigma; obs]);
        let a = analyze(&ens, &y, &r, seed).unwrap();
        prop_assert_eq!(a.analysis.members(), members);
        prop_assert_eq!(a.analysis.observations(), obs);
        prop_assert_eq!(a.mean.len(), obs);
        prop_assert!(a.mean.iter().all(|v| v.is_finite()));
        let again = analyze(&ens, &y, &r, seed).unwrap();
        prop_assert_eq!(&again.mean, &a.mean);
    }
}

fn gaussian_ensemble(members: usize, obs: usize, spread: f64, seed: u64) -> EnsembleMatrix<f64> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let rows = (0..members).map(|_| (0..obs).map(|_| normal.sample(&mut rng)).collect()).collect();
    EnsembleMatrix::new(rows, (0..members as u64).collect()).unwrap()
}

#[test]
fn vague_observations_leave_the_forecast_alone() {
    let ens = gaussian_ensemble(20, 6, 0.3, 1);
    let y = vec![5.0; 6];
    let r = ObservationErrorModel::new(vec![1e12; 6]).unwrap();
    let a = analyze(&ens, &y, &r, 2).unwrap();
    for (m, f) in a.mean.iter().zip(&a.forecast_mean) {
        assert!((m - f).abs() < 1e-4, "{m} vs {f}");
    }
}

#[test]
fn precise_observations_pull_the_mean_onto_the_data() {
    let ens = gaussian_ensemble(40, 5, 1.0, 3);
    let y = vec![0.7, -0.2, 0.4, 1.1, -0.9];
    let r = ObservationErrorModel::new(vec![1e-8; 5]).unwrap();
    let a = analyze(&ens, &y, &r, 4).unwrap();
    for (m, v) in a.mean.iter().zip(&y) {
        assert!((m - v).abs() < 1e-3, "{m} vs {v}");
    }
}

#[test]
fn analysis_reduces_ensemble_variance() {
    let ens = gaussian_ensemble(60, 4, 1.0, 7);
    let y = vec![0.0; 4];
    let r = ObservationErrorModel::new(vec![0.25; 4]).unwrap();
    let a = analyze(&ens, &y, &r, 8).unwrap();
    let before = forecast_statistics(&ens).variances();
    let after = forecast_statistics(&a.analysis).variances();
    for (b, a) in before.iter().zip(&after) {
        assert!(a < b, "variance grew from {b} to {a}");
    }
    assert!(a.diagnostics.analysis_spread < a.diagnostics.forecast_spread);
}

#[test]
fn scalar_gain_matches_the_textbook_update() {
    // One observation of one state: the mean moves by P/(P+R) of the innovation.
    let ens = gaussian_ensemble(400, 1, 1.0, 11);
    let stats = forecast_statistics(&ens);
    let p = stats.variances()[0];
    let r = 0.5;
    let y = [2.0];
    let a = analyze(&ens, &y, &ObservationErrorModel::new(vec![r]).unwrap(), 12).unwrap();
    let expected = stats.mean[0] + p / (p + r) * (y[0] - stats.mean[0]);
    assert!((a.mean[0] - expected).abs() < 0.15, "{} vs {expected}", a.mean[0]);
}

use loomflow::coupling::{global_matching_cost, loom_batch, FixedNoise};
use loomflow::flow::gaussian_oracle_scale;
use loomflow::metrics::wasserstein2;
use loomflow::noise_store::NoiseStore;
use loomflow::ot::{brute_force_assignment, matching_cost, solve_assignment, Assignment, CostMatrix};
use loomflow::rng::train_rng;
use loomflow::Matrix;
use proptest::prelude::*;

fn square(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec(0.0f64..100.0, n * n)))
}

fn integer_square(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0u8..4).prop_map(f64::from), n * n)))
}

fn points(n: usize, d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hungarian_matches_brute_force((n, entries) in square(7)) {
        let c = CostMatrix::new(n, n, entries).unwrap();
        let (a, cost) = solve_assignment(&c).unwrap();
        let (b, best) = brute_force_assignment(&c).unwrap();
        prop_assert_eq!(cost, best);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn hungarian_ties_break_like_brute_force((n, entries) in integer_square(6)) {
        let c = CostMatrix::new(n, n, entries).unwrap();
        let (a, cost) = solve_assignment(&c).unwrap();
        let (b, best) = brute_force_assignment(&c).unwrap();
        prop_assert_eq!(cost, best);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn swaps_preserve_bijection(n in 2usize..40, swaps in prop::collection::vec((0usize..1000, 0usize..1000), 0..200)) {
        let mut store = NoiseStore::new(n, 2, 1, 0).unwrap();
        for (k, (i, j)) in swaps.iter().enumerate() {
            store.swap_slots(k % 2, i % n, j % n).unwrap();
        }
        prop_assert!(store.assignment(0).unwrap().is_bijection());
        prop_assert!(store.assignment(1).unwrap().is_bijection());
    }

    #[test]
    fn matching_cost_is_relabel_invariant(
        (data, noise, tau, rho) in (2usize..12).prop_flat_map(|n| (points(n, 2), points(n, 2), permutation(n), permutation(n)))
    ) {
        let tau = Assignment::from_mapping(tau).unwrap();
        let cost = matching_cost(&tau, &data, &noise).unwrap();
        // Relabel data by rho: data'[k] = data[rho[k]] paired with noise[tau[rho[k]]].
        let relabelled = data.select_rows(&rho);
        let mapping: Vec<usize> = rho.iter().map(|&k| tau.get(k)).collect();
        let tau2 = Assignment::from_mapping(mapping).unwrap();
        let cost2 = matching_cost(&tau2, &relabelled, &noise).unwrap();
        prop_assert!((cost - cost2).abs() <= 1e-12 * cost.max(1.0));
    }

    #[test]
    fn w2_is_a_metric((a, b, c) in (1usize..20).prop_flat_map(|n| (points(n, 2), points(n, 2), points(n, 2)))) {
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        let bc = wasserstein2(&b, &c).unwrap();
        let ac = wasserstein2(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn loom_never_increases_global_cost(
        (data, noise) in (4usize..24).prop_flat_map(|n| (points(n, 2), points(n, 2))),
        m in 2usize..6,
        seed in any::<u64>(),
    ) {
        let n = data.rows();
        let mut pool = FixedNoise::new(noise, Assignment::identity(n)).unwrap();
        let mut rng = train_rng(seed);
        let mut prev = global_matching_cost(&pool, &data).unwrap();
        for _ in 0..30 {
            loom_batch(&mut pool, &data, m.min(n), &mut rng).unwrap();
            prop_assert!(pool.assignment.is_bijection());
            let now = global_matching_cost(&pool, &data).unwrap();
            prop_assert!(now <= prev + 1e-12 * prev.max(1.0));
            prev = now;
        }
    }

    #[test]
    fn oracle_scale_is_antisymmetric(t in 0.0f64..=1.0, sigma in 0.0f64..2.0) {
        prop_assert!((gaussian_oracle_scale(t, sigma) + gaussian_oracle_scale(1.0 - t, sigma)).abs() <= 1e-12);
    }

    #[test]
    fn noise_is_a_pure_function_of_the_seed(seed in any::<u64>(), n in 1usize..20, slot in 0usize..20) {
        let a = NoiseStore::new(n, 1, 3, seed).unwrap();
        let b = NoiseStore::new(n, 1, 3, seed).unwrap();
        let r = loomflow::noise_store::NoiseRef { slot: slot % n, cache: 0 };
        prop_assert_eq!(a.get_noise(r).unwrap(), b.get_noise(r).unwrap());
    }
}

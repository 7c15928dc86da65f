use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slowmodes::estimation::{correlations_from_features, fit_tica_with};
use slowmodes::ktica::{fit_ktica, fit_ktica_with_landmarks, gram_matrix, KernelSpec, KticaConfig};
use slowmodes::{make_lagged_pairs, solve_gev, DiscreteModel, ModeTransform, Trajectory};

fn coarse_fourwell(steps: usize, seed: u64) -> (DiscreteModel, Trajectory) {
    let model = DiscreteModel::fourwell(30).unwrap();
    let traj = model.sample_trajectory(steps, seed).unwrap();
    (model, traj)
}

fn config(lag: usize, sigma: f64, landmarks: usize, n_modes: usize, eps: f64) -> KticaConfig {
    KticaConfig {
        lag,
        kernel: KernelSpec::gaussian(sigma).unwrap(),
        landmarks,
        n_modes,
        regularization: eps,
        seed: 3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_matrices_are_positive_semidefinite(
        seed in 0u64..10_000,
        n in 2usize..40,
        d in 1usize..4,
        sigma in 0.01f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let k = gram_matrix(&x, &x, &KernelSpec::gaussian(sigma).unwrap()).unwrap();
        prop_assert_eq!(&k, &k.transpose());
        let min = k.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-8 * k.norm(), "{}", min);
    }
}

/// Whitened landmark features span the same space as the raw kernel columns.
/// One visited point is left out since the full set sums to a near constant.
#[test]
fn landmark_features_match_a_direct_kernel_basis() {
    let (model, traj) = coarse_fourwell(3000, 11);
    let lag = 5;
    let kernel = KernelSpec::gaussian(0.05).unwrap();
    let centers = model.grid.centers();
    let visited: Vec<usize> = (0..model.grid.len())
        .filter(|&b| traj.frames().any(|f| (f[0] - centers[(b, 0)]).abs() < 1e-12))
        .collect();
    let landmarks = centers.select_rows(&visited[1..]);

    let fitted = fit_ktica_with_landmarks(std::slice::from_ref(&traj), &landmarks, &config(lag, 0.05, 0, 3, 0.0)).unwrap();

    let data = make_lagged_pairs(std::slice::from_ref(&traj), lag).unwrap();
    let heads = gram_matrix(&data.heads, &landmarks, &kernel).unwrap();
    let tails = gram_matrix(&data.tails, &landmarks, &kernel).unwrap();
    let corr = correlations_from_features(&heads, &tails, true).unwrap();
    let direct = solve_gev(&corr, 3, 0.0).unwrap();
    for (a, b) in fitted.eigenvalues.iter().zip(&direct.eigenvalues) {
        assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", fitted.eigenvalues, direct.eigenvalues);
    }
}

#[test]
fn nested_landmark_sets_never_lose_eigenvalue() {
    let (_, traj) = coarse_fourwell(20_000, 12);
    let trajs = std::slice::from_ref(&traj);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut previous: Option<Vec<f64>> = None;
    for m in [3, 5, 8, 12] {
        let landmarks = DMatrix::from_fn(m, 1, |i, _| pool[i]);
        let fitted = fit_ktica_with_landmarks(trajs, &landmarks, &config(10, 0.2, m, 3, 0.0)).unwrap();
        if let Some(prev) = &previous {
            for (new, old) in fitted.eigenvalues.iter().zip(prev) {
                assert!(*new >= old - 1e-10, "m = {m}: {:?} after {prev:?}", fitted.eigenvalues);
            }
        }
        previous = Some(fitted.eigenvalues);
    }
}

#[test]
fn wide_kernels_contain_the_linear_solution() {
    let (_, traj) = coarse_fourwell(50_000, 13);
    let trajs = std::slice::from_ref(&traj);
    let tica = fit_tica_with(trajs, 20, 1, 0.0).unwrap();
    let wide = fit_ktica(trajs, &config(20, 3.0, 30, 1, 0.0)).unwrap();
    assert!(
        wide.eigenvalues[0] >= tica.eigenvalues[0] - 1e-6,
        "{} < {}",
        wide.eigenvalues[0],
        tica.eigenvalues[0]
    );
}

#[test]
fn fit_is_deterministic_and_clamps_landmarks() {
    let (model, traj) = coarse_fourwell(5000, 14);
    let trajs = std::slice::from_ref(&traj);
    let a = fit_ktica(trajs, &config(10, 0.1, 200, 2, 1e-6)).unwrap();
    let b = fit_ktica(trajs, &config(10, 0.1, 200, 2, 1e-6)).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.landmarks, b.landmarks);
    assert_eq!(a.landmarks_requested, 200);
    assert!(a.landmarks.nrows() <= model.grid.len());
    assert!(fit_ktica(trajs, &config(10, 0.1, 5001, 2, 1e-6)).is_err());
    let modes = a.transform(&model.grid.centers()).unwrap();
    assert_eq!(modes.shape(), (30, 2));
}

use proptest::prelude::*;
use slowmodes::diagnostics::{
    ck_test, fit_empirical_msm, held_out_vamp2, modes_on_grid, pearson_correlation, predicted_timescale,
    projection_matrix, OracleTransform,
};
use slowmodes::estimation::{fit_tica_with, implied_timescale};
use slowmodes::ktica::{fit_ktica, KernelSpec, KticaConfig};
use slowmodes::DiscreteModel;

fn ktica_config(lag: usize, n_modes: usize) -> KticaConfig {
    KticaConfig {
        lag,
        kernel: KernelSpec::gaussian(0.05).unwrap(),
        landmarks: 100,
        n_modes,
        regularization: 1e-6,
        seed: 0,
    }
}

proptest! {
    #[test]
    fn ck_prediction_does_not_depend_on_k(lambda in 1e-9f64..0.999_999_9, lag in 1usize..10_000, k in 1usize..1000) {
        let a = predicted_timescale(lambda, lag, k);
        let b = predicted_timescale(lambda, lag, 1);
        prop_assert_eq!(a.value().to_bits(), b.value().to_bits());
        prop_assert_eq!(a, implied_timescale(lambda, lag as f64));
    }
}

#[test]
fn oracle_modes_score_best_on_fresh_data() {
    let model = DiscreteModel::fourwell(100).unwrap();
    let oracle = model.oracle(100, 3).unwrap();
    let train = vec![model.sample_trajectory(300_000, 41).unwrap()];
    let test = vec![model.sample_trajectory(300_000, 42).unwrap()];
    let reference = OracleTransform::new(model.grid.clone(), &oracle).unwrap();
    let best = held_out_vamp2(&reference, &test, 100, 3, 1e-6).unwrap();

    let kernel = fit_ktica(&train, &ktica_config(100, 3)).unwrap();
    let linear = fit_tica_with(&train, 100, 1, 1e-6).unwrap();
    for (name, loss) in [
        ("kernel", held_out_vamp2(&kernel, &test, 100, 3, 1e-6).unwrap()),
        ("linear", held_out_vamp2(&linear, &test, 100, 1, 1e-6).unwrap()),
    ] {
        assert!(best <= loss + 0.05, "{name}: oracle {best} vs {loss}");
    }
}

#[test]
fn converged_modes_project_like_a_signed_permutation() {
    let model = DiscreteModel::fourwell(100).unwrap();
    let oracle = model.oracle(100, 3).unwrap();
    let train = vec![model.sample_trajectory(500_000, 43).unwrap()];
    let fitted = fit_ktica(&train, &ktica_config(100, 3)).unwrap();
    let modes = modes_on_grid(&fitted, &model.grid).unwrap();
    let overlaps = projection_matrix(&modes, &oracle).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let v = overlaps[(i, j)].abs();
            if i == j {
                assert!(v > 0.9, "{overlaps}");
            } else {
                assert!(v < 0.2, "{overlaps}");
            }
        }
    }
    assert!(overlaps[(0, 0)].abs() >= 0.98, "{overlaps}");
    let pi = oracle.stationary.as_slice();
    let rho = pearson_correlation(&modes.column(0).iter().copied().collect::<Vec<_>>(), &oracle.mode(1)).unwrap();
    assert!(rho.abs() > 0.9, "{rho}");
    assert_eq!(pi.len(), 100);
}

#[test]
fn empirical_msm_timescales_match_the_oracle() {
    let model = DiscreteModel::fourwell(100).unwrap();
    let oracle = model.oracle(100, 3).unwrap();
    let traj = model.sample_trajectory(5_000_000, 44).unwrap();
    let msm = fit_empirical_msm(&[traj], &model.grid, 100, 3).unwrap();
    assert_eq!(msm.active_set.len(), 100);
    for (t, l) in msm.timescales().iter().zip(oracle.nontrivial_eigenvalues()) {
        let exact = implied_timescale(*l, 100.0).value();
        let rel = (t.value() - exact) / exact;
        assert!(rel.abs() < 0.10, "{} vs {exact}", t.value());
    }
}

#[test]
fn ck_of_a_linear_model_on_its_own_data() {
    let model = DiscreteModel::fourwell(100).unwrap();
    let trajs = vec![model.sample_trajectory(200_000, 45).unwrap()];
    let base = fit_tica_with(&trajs, 50, 1, 1e-6).unwrap();
    let report = ck_test(&base.eigenvalues, 50, &[1, 2, 4], |lag| {
        Ok(fit_tica_with(&trajs, lag, 1, 1e-6)?.eigenvalues)
    })
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0].rel_dev, Some(0.0));
    assert!(report.rows.iter().all(|r| r.rel_dev.is_some()));
}

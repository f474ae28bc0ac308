use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use vortmc::cli_io::{parse_config, run_experiment, Experiment, Overrides};
use vortmc::fields::AnalyticField;
use vortmc::kernel::{check_deformation_bound, check_two_point, evolve_deformation, simulate_lagrangian_paths, DeformationMode, TimeGrid};
use vortmc::ns_solver::{compute_tau_bound, ContractionBudget};
use vortmc::BrownianDriver;

fn traceless(e: [f64; 8]) -> Matrix3<f64> {
    Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], -e[0] - e[4])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tau_is_non_increasing(l in 0.5f64..4.0, m0 in 0.0f64..2.0, dm in 0.0f64..2.0, e0 in 0.01f64..1.0, de in 0.0f64..1.0) {
        let base = ContractionBudget { c_tilde: 0.5, growth_only: true, ..ContractionBudget::new(l, 0.5 * l + m0) };
        let bigger_m = ContractionBudget { m_radius: base.m_radius + dm, ..base };
        let eps = e0 * l / 2.0;
        let a = compute_tau_bound(eps, &base, 5.0).unwrap();
        prop_assert!(compute_tau_bound(eps, &bigger_m, 5.0).unwrap() <= a * (1.0 + 1e-6));
        prop_assert!(compute_tau_bound(eps * (1.0 + de), &base, 5.0).map_or(true, |b| b <= a * (1.0 + 1e-6)));
        prop_assert!(a > 0.0 && a <= 5.0);
        let growth = (3.0 * a * base.m_radius).exp() * (1.0 + a * base.m_radius) * eps;
        prop_assert!(a == 5.0 || (growth - l).abs() <= 1e-5 * l);
    }

    #[test]
    fn linear_fields_respect_pathwise_bounds(e in prop::array::uniform8(-1.0f64..1.0), seed in any::<u64>()) {
        let a = traceless(e);
        let u = AnalyticField::Linear(a);
        let grid = TimeGrid::with_step(1.0, 0.02).unwrap();
        let driver = BrownianDriver::new(seed);
        let x = Vector3::new(0.2, -0.1, 0.3);
        let sym = (a + a.transpose()) / 2.0;
        let ens = simulate_lagrangian_paths(&u, x, 1.0, 0.3, grid, &driver, 64).unwrap();
        let ens = evolve_deformation(ens, &u, DeformationMode::SymmetricPart).unwrap();
        let def = check_deformation_bound(&ens, sym.singular_values().max(), None).unwrap();
        prop_assert_eq!(def.violations, 0);
        let pair = check_two_point(&u, x, x + Vector3::new(0.01, 0.0, -0.02), 1.0, 0.3, grid, &driver, 64, a.singular_values().max(), None).unwrap();
        prop_assert_eq!(pair.violations, 0);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>()) {
        let cfg = parse_config(&format!("[solver]\nseed = {seed}\nn_samples = 200\n")).unwrap();
        let a = run_experiment(Experiment::HeatCheck, &cfg, Overrides::default()).unwrap();
        let b = run_experiment(Experiment::HeatCheck, &cfg, Overrides::default()).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            prop_assert_eq!(x.value.to_bits(), y.value.to_bits());
            prop_assert_eq!(x.std_error.to_bits(), y.std_error.to_bits());
        }
    }

    #[test]
    fn unknown_keys_are_rejected(key in "[a-z]{3,10}") {
        prop_assume!(!["seed", "dt", "mode", "spacing", "estimator", "tolerance"].contains(&key.as_str()));
        let src = format!("[solver]\nseed = 1\n{key} = 2\n");
        let known = ["n_samples", "bs_samples", "box_radius", "n_slices", "max_iters", "bound_slack"];
        prop_assume!(!known.contains(&key.as_str()));
        let err = parse_config(&src).unwrap_err().to_string();
        prop_assert!(err.contains("line 3"), "{}", err);
    }
}

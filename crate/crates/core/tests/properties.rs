//! Randomised invariants of the solvers.

use proptest::prelude::*;

use mfg_core::fp::{build_transport_operator, solve_fp};
use mfg_core::hjb::{lambda_transform, monotonicity_certificate, solve_hjb, TransformDirection};
use mfg_core::{GridSpec, ModelSpec, TimeField};

fn model_a_grid(nx: usize) -> (ModelSpec, GridSpec) {
    let model = ModelSpec::model_a(0.1);
    let cfl = model.cfl_data();
    let nt = GridSpec::min_nt_for(1, 4.0, nx, 0.1, &cfl);
    let grid = GridSpec::new(1, 4.0, nx, nt, 0.1, cfl).unwrap();
    (model, grid)
}

fn trig(grid: &GridSpec, coeffs: &[f64]) -> Vec<f64> {
    (0..grid.nodes())
        .map(|i| {
            let x = grid.coords(i)[0] * std::f64::consts::PI / 2.0;
            coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * x).sin()).sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ordered_terminal_data_give_ordered_solutions(
        c in prop::collection::vec(-2.0..2.0f64, 3),
        bump in prop::collection::vec(0.0..1.0f64, 16),
        shift in -1.0..1.0f64,
    ) {
        let (model, grid) = model_a_grid(16);
        let g1 = trig(&grid, &c);
        let g2: Vec<f64> = g1.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let f = TimeField::constant(&grid, shift);
        let u1 = solve_hjb(&model, &f, &g1, &grid).unwrap();
        let u2 = solve_hjb(&model, &f, &g2, &grid).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            prop_assert!(*a <= b + 1e-12);
        }
        prop_assert!(monotonicity_certificate(&u1, &model).unwrap().holds());
    }

    #[test]
    fn adding_a_constant_to_g_shifts_u(c in prop::collection::vec(-2.0..2.0f64, 3), k in -5.0..5.0f64) {
        let (model, grid) = model_a_grid(16);
        let g = trig(&grid, &c);
        let gk: Vec<f64> = g.iter().map(|v| v + k).collect();
        let f = TimeField::zeros(&grid);
        let u = solve_hjb(&model, &f, &g, &grid).unwrap();
        let uk = solve_hjb(&model, &f, &gk, &grid).unwrap();
        for (a, b) in u.values().iter().zip(uk.values()) {
            prop_assert!((b - a - k).abs() <= 1e-11);
        }
    }

    #[test]
    fn transport_conserves_mass_and_sign(c in prop::collection::vec(-3.0..3.0f64, 3), w in 0.05..1.0f64) {
        let (model, grid) = model_a_grid(32);
        let g = trig(&grid, &c);
        let u = solve_hjb(&model, &TimeField::zeros(&grid), &g, &grid).unwrap();
        let op = build_transport_operator(&u, &model).unwrap();
        let m0 = mfg_core::InitialDensity::Gaussian { center: Some([1.3, 0.0]), std: w }
            .discretize(&grid)
            .unwrap();
        let m = solve_fp(&op, &m0).unwrap();
        prop_assert!(m.mass_drift() <= 1e-12);
        prop_assert!(m.min_value() >= -1e-14);
    }

    #[test]
    fn discount_transform_round_trips(lambda in 0.0..3.0f64, c in prop::collection::vec(-2.0..2.0f64, 2)) {
        let (_, grid) = model_a_grid(16);
        let u = TimeField::from_fn(&grid, |t, x| c[0] * x[0] + c[1] * t);
        let there = lambda_transform(&u, lambda, TransformDirection::Forward);
        let back = lambda_transform(&there, lambda, TransformDirection::Inverse);
        prop_assert!(back.max_abs_diff(&u) <= 1e-12 * (1.0 + u.max_abs()));
    }
}

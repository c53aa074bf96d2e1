mod common;

use iit_core::integrate::{integrate_adjoint_full, integrate_adjoint_reduced, integrate_full, integrate_reduced};
use iit_core::transcribe::{gradient, objective};
use iit_core::{ControlProfile, FullParams, HorizonMode, ProblemSpec, ReducedParams, SystemSpec, TimeGrid};
use proptest::prelude::*;

fn max_error(coarse: &[[f64; 1]], fine: &[[f64; 1]], stride: usize) -> f64 {
    coarse
        .iter()
        .enumerate()
        .map(|(i, x)| (x[0] - fine[i * stride][0]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rk4_is_fourth_order() {
    let params = ReducedParams::table1();
    let horizon = 0.05;
    let run = |n: usize| {
        let u = ControlProfile::constant(TimeGrid::horizon(horizon, n).unwrap(), 10.0, 10.0).unwrap();
        integrate_reduced(&u, 0.0, &params).unwrap().states
    };
    let n = 10;
    let reference = run(16 * n);
    let e1 = max_error(&run(n), &reference, 16);
    let e2 = max_error(&run(2 * n), &reference, 8);
    let ratio = e1 / e2;
    assert!(ratio > 13.0 && ratio < 19.0, "error ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn delayed_release_delays_the_trajectory(
        params in common::reduced_params(),
        shift in 1usize..40,
        level in 0.5..10.0f64,
    ) {
        let n = 100;
        let grid = TimeGrid::horizon(0.2, n).unwrap();
        let values: Vec<f64> = (0..n).map(|i| if i < 30 { level } else { 0.0 }).collect();
        let delayed: Vec<f64> = (0..n).map(|i| if i < shift { 0.0 } else { values[i - shift] }).collect();
        let a = integrate_reduced(&ControlProfile::new(grid, values, 10.0).unwrap(), 0.0, &params).unwrap();
        let b = integrate_reduced(&ControlProfile::new(grid, delayed, 10.0).unwrap(), 0.0, &params).unwrap();
        for i in 0..=shift {
            prop_assert_eq!(b.states[i][0], 0.0);
        }
        for i in 0..=(n - shift) {
            prop_assert!((a.states[i][0] - b.states[i + shift][0]).abs() < 1e-14);
        }
    }

    #[test]
    fn reduced_costate_keeps_its_sign(params in common::reduced_params(), level in 0.0..10.0f64, q_t in 0.01..100.0f64) {
        let u = ControlProfile::constant(TimeGrid::horizon(0.5, 200).unwrap(), level, 10.0).unwrap();
        let traj = integrate_reduced(&u, 0.0, &params).unwrap();
        let q = integrate_adjoint_reduced(&u, &traj, q_t, &params).unwrap();
        prop_assert!(q.iter().all(|&v| v > 0.0));
        let q = integrate_adjoint_reduced(&u, &traj, -q_t, &params).unwrap();
        prop_assert!(q.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn reduced_gradient_matches_central_differences(
        params in common::reduced_params(),
        base in proptest::collection::vec(0.0..1.0f64, 40),
        dir in proptest::collection::vec(-1.0..1.0f64, 40),
    ) {
        let n = 40;
        let spec = ProblemSpec {
            system: SystemSpec::reduced_default(params),
            horizon: HorizonMode::Fixed { horizon: 0.5 },
            bound: 10.0,
            intervals: n,
            penalty_eps: 0.01,
        };
        let grid = TimeGrid::horizon(0.5, n).unwrap();
        // stay inside the box after the +-h perturbation
        let values: Vec<f64> = base.iter().map(|v| 0.5 + 4.0 * v).collect();
        let u = ControlProfile::new(grid, values.clone(), 10.0).unwrap();
        let g = gradient(&spec, &u).unwrap();
        let h = 1e-5;
        let at = |s: f64| {
            let v: Vec<f64> = values.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            objective(&spec, &ControlProfile::new(grid, v, 10.0).unwrap()).unwrap().combined
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let adj: f64 = g.control.iter().zip(&dir).map(|(a, d)| a * d).sum();
        prop_assert!((fd - adj).abs() <= 1e-4 * fd.abs().max(1e-8), "fd {fd} adjoint {adj}");
    }
}

#[test]
fn full_gradient_matches_central_differences() {
    let params = FullParams::<f64>::table2();
    let n = 40;
    let spec = ProblemSpec {
        system: SystemSpec::full_default(params),
        horizon: HorizonMode::Fixed { horizon: 100.0 },
        bound: 112.0,
        intervals: n,
        penalty_eps: 1e-4,
    };
    let grid = TimeGrid::horizon(100.0, n).unwrap();
    let values: Vec<f64> = (0..n).map(|i| 60.0 + 30.0 * (0.7 * i as f64).sin()).collect();
    let dir: Vec<f64> = (0..n).map(|i| (1.3 * i as f64).cos()).collect();
    let u = ControlProfile::new(grid, values.clone(), 112.0).unwrap();
    let g = gradient(&spec, &u).unwrap();
    let h = 1e-3;
    let at = |s: f64| {
        let v: Vec<f64> = values.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
        objective(&spec, &ControlProfile::new(grid, v, 112.0).unwrap()).unwrap().combined
    };
    let fd = (at(h) - at(-h)) / (2.0 * h);
    let adj: f64 = g.control.iter().zip(&dir).map(|(a, d)| a * d).sum();
    assert!((fd - adj).abs() <= 1e-4 * fd.abs(), "fd {fd} adjoint {adj}");
}

// For u = 0 at the wild equilibrium the costate solves q' = -A^T q with a
// constant Jacobian, so q(0) = exp(A^T T) q(T).
#[test]
fn full_costate_matches_matrix_exponential() {
    let params = FullParams::<f64>::table2();
    let horizon = 5.0;
    let n = 2000;
    let u = ControlProfile::constant(TimeGrid::horizon(horizon, n).unwrap(), 0.0, 112.0).unwrap();
    let eq = params.wild_equilibrium();
    let traj = integrate_full(&u, eq, &params).unwrap();
    let q_t = [1.0, -2.0];
    let q = integrate_adjoint_full(&u, &traj, q_t, &params).unwrap();
    let a = params.jacobian(eq.n1, eq.n2);
    // 2x2 exponential of B = A^T T via its eigen-decomposition
    let b = [[a[0][0] * horizon, a[1][0] * horizon], [a[0][1] * horizon, a[1][1] * horizon]];
    let tr = b[0][0] + b[1][1];
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    let disc = (tr * tr / 4.0 - det).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    // exp(B) = (e^l1 (B - l2 I) - e^l2 (B - l1 I)) / (l1 - l2)
    let e = |i: usize, j: usize| {
        let id = if i == j { 1.0 } else { 0.0 };
        (l1.exp() * (b[i][j] - l2 * id) - l2.exp() * (b[i][j] - l1 * id)) / (l1 - l2)
    };
    let expected = [e(0, 0) * q_t[0] + e(0, 1) * q_t[1], e(1, 0) * q_t[0] + e(1, 1) * q_t[1]];
    for k in 0..2 {
        assert!((q[0][k] - expected[k]).abs() < 1e-8 * expected[k].abs().max(1.0), "{:?} vs {:?}", q[0], expected);
    }
}

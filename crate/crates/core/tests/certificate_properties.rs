mod common;

use iit_core::analytic::{m_star, t_star, theorem1_policy, BangBangPolicy};
use iit_core::integrate::integrate_reduced;
use iit_core::verify::{fit_terminal_adjoint, penalty_terminal_adjoint, switching_function, ViolationKind};
use iit_core::{ControlProfile, ReducedParams};

const TAU: f64 = 0.05;
const N: usize = 600;

/// Horizon leaving a zero tail of 0.75 relaxation times of the dynamics
/// around the threshold.
fn horizon(params: &ReducedParams<f64>, ts: f64) -> f64 {
    ts + 0.75 / params.f_prime(params.theta())
}

/// The optimum and the same mass with its last 10% moved to the end.
fn optimum_and_displaced(params: &ReducedParams<f64>) -> (ControlProfile<f64>, ControlProfile<f64>) {
    let m = 2.0 * m_star(params) + 1.0;
    let ts = t_star(m, params).unwrap();
    let t = horizon(params, ts);
    let best = theorem1_policy(0.0, t, m, params).unwrap();
    let head = BangBangPolicy { duration: 0.9 * ts, ..best }.to_profile(N).unwrap();
    let tail = BangBangPolicy {
        start: t - 0.1 * ts,
        duration: 0.1 * ts,
        ..best
    }
    .to_profile(N)
    .unwrap();
    let moved: Vec<f64> = head.values().iter().zip(tail.values()).map(|(a, b)| a + b).collect();
    let displaced = ControlProfile::new(*head.grid(), moved, m).unwrap();
    (best.to_profile(N).unwrap(), displaced)
}

#[test]
fn analytic_optimum_passes_on_random_parameters() {
    for params in common::sample_params(3, 10) {
        let (best, _) = optimum_and_displaced(&params);
        let cert = fit_terminal_adjoint(&best, &params, 0.0, TAU).unwrap();
        assert!(cert.passed(), "max violation {}", cert.max_violation);
        assert!(cert.costate.iter().all(|&q| q > 0.0));
    }
}

#[test]
fn displaced_mass_fails_on_random_parameters() {
    for params in common::sample_params(3, 10) {
        let (best, displaced) = optimum_and_displaced(&params);
        assert!((best.integral() - displaced.integral()).abs() < 1e-9);
        let cert = fit_terminal_adjoint(&displaced, &params, 0.0, TAU).unwrap();
        assert!(!cert.passed(), "max violation {}", cert.max_violation);
    }
}

#[test]
fn half_rate_fails_with_interior_violations() {
    let params = ReducedParams::table1();
    let grid = iit_core::TimeGrid::horizon(0.5, 300).unwrap();
    let u = ControlProfile::constant(grid, 5.0, 10.0).unwrap();
    let q = penalty_terminal_adjoint(&u, &params, 0.01).unwrap();
    let cert = switching_function(&u, &params, 0.0, q, TAU).unwrap();
    assert!(!cert.passed());
    assert!(cert.violations.iter().any(|v| v.kind == ViolationKind::InteriorOff));
}

#[test]
fn switching_function_follows_the_holding_rate_slope() {
    for params in common::sample_params(5, 5) {
        let (best, _) = optimum_and_displaced(&params);
        let cert = switching_function(&best, &params, 0.0, 1.0, TAU).unwrap();
        let p = integrate_reduced(&best, 0.0, &params).unwrap().component(0);
        let h = best.grid().step();
        let dh = 1e-6;
        let slope = |x: f64| (params.holding_rate(x + dh) - params.holding_rate(x - dh)) / (2.0 * dh);
        let scale = slope(0.0).abs();
        let w = &cert.switching;
        let mut checked = 0;
        for i in 1..N {
            let s = slope(p[i]);
            if s.abs() < 1e-3 * scale {
                continue;
            }
            let dw = (w[i + 1] - w[i - 1]) / (2.0 * h);
            // the costate is positive, so w' has the sign of (-f/g)'(p)
            if dw.abs() > 1e-9 * w[i].abs() {
                assert_eq!(dw > 0.0, s > 0.0, "node {i}: w' = {dw}, slope = {s}");
                checked += 1;
            }
        }
        assert!(checked > N / 2);
    }
}

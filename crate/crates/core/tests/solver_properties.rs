use std::sync::OnceLock;

use iit_core::analytic::t_star;
use iit_core::transcribe::{solve, SolveOptions};
use iit_core::{HorizonMode, ProblemSpec, ReducedParams, SolveReport, SystemSpec};

fn reduced_fixed(n: usize) -> ProblemSpec<f64> {
    ProblemSpec {
        system: SystemSpec::reduced_default(ReducedParams::table1()),
        horizon: HorizonMode::Fixed { horizon: 0.5 },
        bound: 10.0,
        intervals: n,
        penalty_eps: 0.01,
    }
}

fn options() -> SolveOptions<f64> {
    SolveOptions {
        max_iters: 30_000,
        ..SolveOptions::default()
    }
}

fn reference_run() -> &'static SolveReport<f64> {
    static RUN: OnceLock<SolveReport<f64>> = OnceLock::new();
    RUN.get_or_init(|| solve(&reduced_fixed(300), None, &options()).unwrap())
}

#[test]
fn accepted_iterations_never_increase_the_objective() {
    let r = reference_run();
    assert!(r.converged, "{}", r.termination);
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn controls_stay_in_the_box() {
    let r = reference_run();
    assert!(r.control.values().iter().all(|&u| (0.0..=10.0).contains(&u)));
}

#[test]
fn penalty_keeps_the_final_state_near_the_threshold() {
    let r = reference_run();
    let theta = ReducedParams::<f64>::table1().theta();
    let p_end = r.trajectory.final_state()[0];
    assert!((p_end - theta).abs() < 0.01, "p(T) = {p_end}");
}

#[test]
fn release_cost_is_close_to_the_analytic_optimum() {
    let r = reference_run();
    let best = 10.0 * t_star(10.0, &ReducedParams::table1()).unwrap();
    let rel = (r.release_cost - best) / best;
    assert!(rel.abs() < 0.05, "relative gap {rel}");
}

#[test]
fn halving_the_grid_barely_moves_the_cost() {
    let coarse = solve(&reduced_fixed(150), None, &options()).unwrap();
    let fine = reference_run();
    let change = (coarse.combined_objective - fine.combined_objective).abs() / fine.combined_objective;
    assert!(change < 0.02, "cost changed by {change}");
}

#[test]
fn solves_are_deterministic() {
    let spec = reduced_fixed(60);
    let opts = SolveOptions {
        max_iters: 200,
        jitter: 0.1,
        seed: 5,
        starts: Some(vec![0.2, 0.6]),
        ..SolveOptions::default()
    };
    let a = solve(&spec, None, &opts).unwrap();
    let b = solve(&spec, None, &opts).unwrap();
    assert_eq!(a, b);
}

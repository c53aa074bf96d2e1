use std::path::Path;
use std::time::Instant;

use iit_core::analytic::{feasibility_time, m_star, t_star, theorem1_policy, theorem2_policy, BangBangPolicy};
use iit_core::integrate::integrate_reduced;
use iit_core::transcribe::{solve, SolveOptions};
use iit_core::verify::{
    fit_terminal_adjoint, gamma_convergence_experiment, penalty_terminal_adjoint, switching_function, PmpCertificate,
};
use iit_core::{ControlProfile, FullParams, HorizonMode, ReducedParams, SystemSpec, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{CostateRule, ExperimentConfig, GammaControl, Mode, TerminalCostate};
use crate::manifest::{Artifacts, RunManifest};
use crate::CliError;

/// Result of a command that ran to the end: the manifest and the exit
/// code (0, or 3 for an unconverged solve).
#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub exit_code: i32,
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn trajectory_csv<const D: usize>(
    traj: &Trajectory<f64, D>,
    control: &ControlProfile<f64>,
    names: [&str; D],
) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    traj.write_csv(control, names, &mut buf)?;
    Ok(buf)
}

// Horizon used by the analytic and reduction commands: the configured one,
// or T* when the horizon is free.
fn working_horizon(cfg: &ExperimentConfig, params: &ReducedParams<f64>) -> Result<f64, CliError> {
    match cfg.problem.mode {
        Mode::Fixed => Ok(cfg.problem.horizon.expect("validated")),
        Mode::Free => Ok(t_star(cfg.problem.bound, params)?),
    }
}

#[derive(Serialize)]
struct PolicySummary {
    policy: BangBangPolicy<f64>,
    release_cost: f64,
}

#[derive(Serialize)]
struct WeightedSummary {
    alpha: f64,
    horizon: f64,
    release_cost: f64,
    combined: f64,
}

pub fn cmd_analytic(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let params = cfg.reduced()?;
    let m = cfg.problem.bound;
    let ms = m_star(&params);
    let ts = t_star(m, &params)?;
    let horizon = working_horizon(cfg, &params)?;
    let first = theorem1_policy(0.0, horizon, m, &params)?;

    let mut rates: Vec<f64> = [1.5, 2.0, 5.0, 10.0, 100.0].iter().map(|f| f * ms).collect();
    rates.push(m);
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut table = Vec::with_capacity(rates.len());
    for &r in &rates {
        table.push((r, feasibility_time(r, &params)?));
    }

    let alphas = match cfg.problem.mode {
        Mode::Free => vec![cfg.problem.alpha.expect("validated")],
        Mode::Fixed => vec![0.01, 0.5, 1.0],
    };
    let mut weighted = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        let (policy, value) = theorem2_policy(a, m, &params)?;
        weighted.push(WeightedSummary {
            alpha: a,
            horizon: policy.horizon,
            release_cost: value.release_cost,
            combined: value.combined,
        });
    }

    let control = first.to_profile(cfg.problem.intervals)?;
    let traj = integrate_reduced(&control, 0.0, &params)?;
    let summary = json!({
        "theta": params.theta(),
        "p_star": params.p_star(),
        "m_star": ms,
        "t_star": ts,
        "bound": m,
        "fixed_horizon": PolicySummary { policy: first, release_cost: first.release_cost() },
        "free_horizon": weighted,
    });

    let mut art = Artifacts::new(out);
    art.add_json("summary.json", &summary);
    art.add(
        "feasibility_times.csv",
        csv_bytes(
            &["u_bar", "time"],
            table.iter().map(|(r, t)| vec![r.to_string(), t.to_string()]),
        )?,
    );
    art.add("policy.csv", trajectory_csv(&traj, &control, ["p"])?);
    let manifest = art.finish("analytic", cfg, started.elapsed(), None, summary, Vec::new())?;
    Ok(Outcome { manifest, exit_code: 0 })
}

pub fn solve_options(cfg: &ExperimentConfig) -> SolveOptions<f64> {
    SolveOptions {
        max_iters: cfg.run.max_iters,
        tol: cfg.run.tol,
        seed: cfg.run.seed,
        jitter: cfg.run.jitter,
        starts: cfg.run.starts.clone(),
        ..SolveOptions::default()
    }
}

pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let spec = cfg.problem_spec()?;
    let report = solve(&spec, None, &solve_options(cfg))?;
    let mut art = Artifacts::new(out);
    art.add_json("report.json", &report);
    let mut csv = Vec::new();
    report.trajectory.write_csv(&report.control, &mut csv)?;
    art.add("trajectory.csv", csv);

    let mut notes = Vec::new();
    if let (SystemSpec::Full { .. }, HorizonMode::Free { .. }) = (&spec.system, &spec.horizon) {
        notes.push(
            "local projected-gradient solve with multi-start; final horizons are local optima of \
             (1-alpha)*int(u) + alpha*T + penalty and may differ from interior-point solvers"
                .into(),
        );
    }
    if !report.converged {
        notes.push(format!("not converged: {}", report.termination));
    }
    let summary = json!({
        "final_time": report.final_time,
        "release_cost": report.release_cost,
        "time_cost": report.time_cost,
        "penalty_value": report.penalty_value,
        "combined_objective": report.combined_objective,
        "final_state": report.trajectory.final_state(),
        "iterations": report.iterations,
        "termination": report.termination,
        "first_order_residual": report.first_order_residual,
    });
    let converged = report.converged;
    let manifest = art.finish("solve", cfg, started.elapsed(), Some(converged), summary, notes)?;
    Ok(Outcome {
        manifest,
        exit_code: if converged { 0 } else { 3 },
    })
}

// The fields of a solve report the certificate needs.
#[derive(Deserialize)]
struct StoredReport {
    control: ControlProfile<f64>,
    alpha: f64,
}

pub fn cmd_verify(cfg: &ExperimentConfig, report: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let params = cfg.reduced()?;
    let (control, alpha, source) = match report {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("report {}: {e}", path.display())))?;
            let stored: StoredReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("report {}: {e}", path.display())))?;
            (stored.control, stored.alpha, path.display().to_string())
        }
        None => {
            let m = cfg.problem.bound;
            let (policy, alpha) = match cfg.problem.mode {
                Mode::Fixed => (theorem1_policy(0.0, cfg.problem.horizon.expect("validated"), m, &params)?, 0.0),
                Mode::Free => {
                    let a = cfg.problem.alpha.expect("validated");
                    (theorem2_policy(a, m, &params)?.0, a)
                }
            };
            (policy.to_profile(cfg.problem.intervals)?, alpha, "analytic".to_string())
        }
    };
    let vcfg = cfg.verify.clone().unwrap_or_default();
    let rule = vcfg.q_terminal.unwrap_or(TerminalCostate::Rule(if report.is_some() {
        CostateRule::Penalty
    } else {
        CostateRule::Fit
    }));
    let cert = match rule {
        TerminalCostate::Value(q) => switching_function(&control, &params, alpha, q, vcfg.tau)?,
        TerminalCostate::Rule(CostateRule::Penalty) => {
            let q = penalty_terminal_adjoint(&control, &params, cfg.problem.penalty_eps)?;
            switching_function(&control, &params, alpha, q, vcfg.tau)?
        }
        TerminalCostate::Rule(CostateRule::Fit) => fit_terminal_adjoint(&control, &params, alpha, vcfg.tau)?,
    };
    let mut traj = integrate_reduced(&control, 0.0, &params)?;
    traj.adjoint = Some(cert.costate.iter().map(|&q| [q]).collect());
    traj.switching = Some(cert.switching.clone());

    let mut art = Artifacts::new(out);
    art.add_json("certificate.json", &cert);
    art.add("certificate.csv", trajectory_csv(&traj, &control, ["p"])?);
    let summary = json!({
        "control": source,
        "q_terminal_rule": rule,
        "alpha": alpha,
        "q_terminal": cert.q_terminal,
        "max_violation": cert.max_violation,
        "tau": cert.tau,
        "verdict": cert.verdict,
        "violations": cert.violations.len(),
    });
    let manifest = art.finish("verify", cfg, started.elapsed(), None, summary, Vec::new())?;
    Ok(Outcome { manifest, exit_code: 0 })
}

/// Reads a certificate written by [`cmd_verify`].
pub fn read_certificate(path: &Path) -> Result<PmpCertificate<f64>, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("certificate {}: {e}", path.display())))
}

pub fn cmd_gamma(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let params = cfg.reduced()?;
    let g = cfg.gamma.clone().unwrap_or_default();
    let first_eps = *g.eps.first().ok_or_else(|| CliError::Config("`gamma.eps` is empty".into()))?;
    let template = match &g.full {
        Some(f) => f.params()?,
        None => FullParams::new(
            params.b1_0() / first_eps,
            params.b2_0() / first_eps,
            params.d1(),
            params.d2(),
            params.k(),
            params.s_h(),
        )?,
    };
    let horizon = working_horizon(cfg, &params)?;
    let n = cfg.problem.intervals;
    let m = cfg.problem.bound;
    let control = match g.control {
        GammaControl::Optimal => theorem1_policy(g.xi, horizon, m, &params)?.to_profile(n)?,
        GammaControl::Zero => ControlProfile::constant(iit_core::TimeGrid::horizon(horizon, n)?, 0.0, m)?,
    };
    let report = gamma_convergence_experiment(&control, &params, &template, &g.eps)?;

    let mut art = Artifacts::new(out);
    art.add_json("gamma.json", &report);
    let rows = (0..report.eps_values.len()).map(|i| {
        vec![
            report.eps_values[i].to_string(),
            report.sup_errors[i].to_string(),
            report.halved_step_errors[i].to_string(),
            report.substeps[i].to_string(),
        ]
    });
    art.add(
        "gamma.csv",
        csv_bytes(&["eps", "sup_error", "halved_step_error", "substeps"], rows)?,
    );
    let summary = json!({
        "eps": report.eps_values,
        "sup_errors": report.sup_errors,
        "monotone_decrease": report.monotone_decrease,
    });
    let manifest = art.finish("gamma", cfg, started.elapsed(), None, summary, Vec::new())?;
    Ok(Outcome { manifest, exit_code: 0 })
}

//! Optimality certificates for reduced-model controls, bang-bang structure
//! checks, and the high-birth-rate reduction experiment.

use serde::{Deserialize, Serialize};

use crate::dynamics::{FullParams, ReducedParams};
use crate::integrate::{integrate_forward, sweep_costate, ControlProfile};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `u = M` but `w` below the threshold.
    FullRateBelow,
    /// `u = 0` but `w` above the threshold.
    ZeroRateAbove,
    /// Interior value of `u` with `w` off the threshold.
    InteriorOff,
    /// The final proportion misses the target, relative to the target.
    TerminalDeficit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation<S> {
    /// Interval index; `None` for the terminal check.
    pub index: Option<usize>,
    pub kind: ViolationKind,
    pub magnitude: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmpCertificate<S> {
    /// `w = q g(p)` at the grid nodes.
    pub switching: Vec<S>,
    /// `q` at the grid nodes.
    pub costate: Vec<S>,
    pub q_terminal: S,
    /// `1 - alpha`.
    pub threshold: S,
    pub violations: Vec<Violation<S>>,
    pub max_violation: S,
    pub tau: S,
    pub verdict: Verdict,
}

impl<S: Real> PmpCertificate<S> {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport<S> {
    pub eps_values: Vec<S>,
    pub sup_errors: Vec<S>,
    pub monotone_decrease: bool,
    /// Sup errors recomputed on a grid twice as fine.
    pub halved_step_errors: Vec<S>,
    /// Integration steps per control interval.
    pub substeps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BangBangReport<S> {
    /// Share of intervals within `tol * M` of 0 or `M`.
    pub fraction: S,
    pub single_block: bool,
    /// First and one-past-last interval of the `u ~ M` block.
    pub block: Option<(usize, usize)>,
    /// Mass of the block (edge intervals included) divided by `M`.
    pub active_duration: S,
}

// Classification of one interval against {0, M}.
#[derive(Clone, Copy, PartialEq)]
enum Level {
    Zero,
    Full,
    Interior,
}

fn level<S: Real>(u: S, bound: S, tol: S) -> Level {
    if (u - bound).abs() <= tol * bound {
        Level::Full
    } else if u <= tol * bound {
        Level::Zero
    } else {
        Level::Interior
    }
}

// Cells within this fraction of M of an extreme count as that extreme for
// the certificate.
const LEVEL_TOL: f64 = 1e-9;

struct Unit<S> {
    nodes_q: Vec<S>,
    nodes_w: Vec<S>,
    mid_w: Vec<S>,
    p_final: S,
}

// Switching function for q(T) = 1; everything is linear in q(T).
fn unit_switching<S: Real>(u: &ControlProfile<S>, params: &ReducedParams<S>, p0: S) -> Result<Unit<S>> {
    let traj = integrate_forward(params, u, [p0])?;
    let sweep = sweep_costate(params, u, &traj, [S::one()])?;
    let nodes_q: Vec<S> = sweep.nodes.iter().map(|q| q[0]).collect();
    if nodes_q.iter().any(|&q| !(q > S::zero())) {
        return Err(Error::Instability {
            time: u.grid().t0().as_f64(),
            detail: "costate changed sign".into(),
        });
    }
    let nodes_w = nodes_q
        .iter()
        .zip(&traj.states)
        .map(|(&q, x)| q * params.g(x[0]))
        .collect();
    let mid_w = sweep
        .mid_costate
        .iter()
        .zip(&sweep.mid_state)
        .map(|(q, x)| q[0] * params.g(x[0]))
        .collect();
    Ok(Unit {
        nodes_q,
        nodes_w,
        mid_w,
        p_final: traj.final_state()[0],
    })
}

fn interval_violations<S: Real>(u: &ControlProfile<S>, mid_w: &[S], scale: S, threshold: S) -> Vec<Violation<S>> {
    let tol = S::lit(LEVEL_TOL);
    let mut out = Vec::new();
    for (i, (&ui, &wi)) in u.values().iter().zip(mid_w).enumerate() {
        let w = scale * wi;
        let (kind, magnitude) = match level(ui, u.bound(), tol) {
            Level::Full => (ViolationKind::FullRateBelow, threshold - w),
            Level::Zero => (ViolationKind::ZeroRateAbove, w - threshold),
            Level::Interior => (ViolationKind::InteriorOff, (w - threshold).abs()),
        };
        if magnitude > S::zero() {
            out.push(Violation {
                index: Some(i),
                kind,
                magnitude,
            });
        }
    }
    out
}

fn certificate<S: Real>(
    u: &ControlProfile<S>,
    unit: &Unit<S>,
    q_terminal: S,
    threshold: S,
    target: Option<S>,
    tau: S,
) -> PmpCertificate<S> {
    let mut violations = interval_violations(u, &unit.mid_w, q_terminal, threshold);
    if let Some(theta) = target {
        let deficit = (theta - unit.p_final) / theta;
        if deficit > S::zero() {
            violations.push(Violation {
                index: None,
                kind: ViolationKind::TerminalDeficit,
                magnitude: deficit,
            });
        }
    }
    let max_violation = violations.iter().map(|v| v.magnitude).fold(S::zero(), S::max);
    PmpCertificate {
        switching: unit.nodes_w.iter().map(|&w| q_terminal * w).collect(),
        costate: unit.nodes_q.iter().map(|&q| q_terminal * q).collect(),
        q_terminal,
        threshold,
        violations,
        max_violation,
        tau,
        verdict: if max_violation <= tau {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    }
}

fn check_alpha<S: Real>(alpha: S) -> Result<()> {
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::Domain {
            quantity: "alpha",
            value: alpha.as_f64(),
            domain: "[0, 1]",
        });
    }
    Ok(())
}

/// Checks the maximization condition of `u` from `p(0) = 0` with the
/// terminal costate `q_terminal`: `w >= 1 - alpha` where `u = M`,
/// `w <= 1 - alpha` where `u = 0`, `w = 1 - alpha` elsewhere, each up to
/// `tau`. The switching function is sampled at interval midpoints.
pub fn switching_function<S: Real>(
    u: &ControlProfile<S>,
    params: &ReducedParams<S>,
    alpha: S,
    q_terminal: S,
    tau: S,
) -> Result<PmpCertificate<S>> {
    check_alpha(alpha)?;
    if !(q_terminal.is_finite() && q_terminal >= S::zero()) {
        return Err(Error::Contract(format!("terminal costate {q_terminal} must be finite and non-negative")));
    }
    let unit = unit_switching(u, params, S::zero())?;
    Ok(certificate(u, &unit, q_terminal, S::one() - alpha, None, tau))
}

/// Terminal costate of the penalized reduced problem: `2 (theta - p(T))+ / eps`.
pub fn penalty_terminal_adjoint<S: Real>(u: &ControlProfile<S>, params: &ReducedParams<S>, eps: S) -> Result<S> {
    let traj = integrate_forward(params, u, [S::zero()])?;
    let gap = (params.theta() - traj.final_state()[0]).max(S::zero());
    Ok(S::lit(2.0) * gap / eps)
}

/// Certificate with the terminal multiplier chosen to minimize the largest
/// interval violation, plus a check that `p(T)` reaches the threshold.
///
/// The violations are piecewise linear in `q(T)`: the `u = M` ones decrease
/// and the `u = 0` ones increase, so the minimax sits where the two maxima
/// cross.
pub fn fit_terminal_adjoint<S: Real>(
    u: &ControlProfile<S>,
    params: &ReducedParams<S>,
    alpha: S,
    tau: S,
) -> Result<PmpCertificate<S>> {
    check_alpha(alpha)?;
    let unit = unit_switching(u, params, S::zero())?;
    let a = S::one() - alpha;
    let tol = S::lit(LEVEL_TOL);
    let levels: Vec<Level> = u.values().iter().map(|&v| level(v, u.bound(), tol)).collect();
    let falling = |c: S| {
        levels
            .iter()
            .zip(&unit.mid_w)
            .filter(|(l, _)| **l != Level::Zero)
            .map(|(_, &w)| a - c * w)
            .fold(S::zero(), S::max)
    };
    let rising = |c: S| {
        levels
            .iter()
            .zip(&unit.mid_w)
            .filter(|(l, _)| **l != Level::Full)
            .map(|(_, &w)| c * w - a)
            .fold(S::zero(), S::max)
    };
    let mut lo = S::zero();
    let mut hi = unit
        .mid_w
        .iter()
        .filter(|&&w| w > S::zero())
        .map(|&w| a / w)
        .fold(S::zero(), S::max);
    let scale = if falling(lo) <= rising(lo) {
        lo
    } else {
        for _ in 0..200 {
            let mid = S::lit(0.5) * (lo + hi);
            if falling(mid) > rising(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if falling(lo).max(rising(lo)) < falling(hi).max(rising(hi)) {
            lo
        } else {
            hi
        }
    };
    Ok(certificate(u, &unit, scale, a, Some(params.theta()), tau))
}

/// Share of bang-bang intervals and whether `{u ~ M}` is one contiguous
/// block, allowing one intermediate interval on each edge.
pub fn check_bang_bang<S: Real>(u: &ControlProfile<S>, tol_fraction: S) -> BangBangReport<S> {
    let levels: Vec<Level> = u.values().iter().map(|&v| level(v, u.bound(), tol_fraction)).collect();
    let n = levels.len();
    let bang = levels.iter().filter(|&&l| l != Level::Interior).count();
    let full: Vec<usize> = (0..n).filter(|&i| levels[i] == Level::Full).collect();
    let (block, single_block) = match (full.first(), full.last()) {
        (Some(&first), Some(&last)) => {
            let contiguous = full.len() == last - first + 1;
            let lo = first.saturating_sub(1);
            let hi = (last + 2).min(n);
            let stray = (0..n).any(|i| (i < lo || i >= hi) && levels[i] != Level::Zero);
            (Some((first, last + 1)), contiguous && !stray)
        }
        _ => (None, false),
    };
    let active_duration = match block {
        Some((first, end)) => {
            let lo = first.saturating_sub(1);
            let hi = (end + 1).min(n);
            let mass = u.values()[lo..hi].iter().fold(S::zero(), |acc, &v| acc + v);
            mass * u.grid().step() / u.bound()
        }
        None => S::zero(),
    };
    BangBangReport {
        fraction: S::from_count(bang) / S::from_count(n),
        single_block,
        block,
        active_duration,
    }
}

// Steps per control interval keeping h (b1 + b2 + d1 + d2) at or below this.
const STIFF_STEP: f64 = 0.1;

fn sup_error<S: Real>(
    u: &ControlProfile<S>,
    reduced: &ReducedParams<S>,
    full: &FullParams<S>,
    substeps: usize,
) -> Result<S> {
    let fine = u.refined(substeps)?;
    let p = integrate_forward(reduced, &fine, [S::zero()])?;
    let start = full.wild_equilibrium();
    let n = integrate_forward(full, &fine, [start.n1, start.n2])?;
    let mut sup = S::zero();
    for (x, y) in n.states.iter().zip(&p.states) {
        let total = x[0] + x[1];
        let share = if total > S::zero() { x[1] / total } else { S::zero() };
        sup = sup.max((share - y[0]).abs());
    }
    Ok(sup)
}

/// Integrates the full model with birth rates `b1_0 / eps`, `b2_0 / eps`
/// from its wild equilibrium under `u`, and measures the sup distance of
/// its infected proportion to the reduced trajectory from 0.
pub fn gamma_convergence_experiment<S: Real>(
    u: &ControlProfile<S>,
    params0: &ReducedParams<S>,
    full_template: &FullParams<S>,
    eps_values: &[S],
) -> Result<ReductionReport<S>> {
    if eps_values.is_empty() {
        return Err(Error::Contract("no eps values".into()));
    }
    if eps_values.iter().any(|&e| !(e > S::zero() && e.is_finite())) {
        return Err(Error::Contract("eps values must be positive".into()));
    }
    if eps_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Contract("eps values must be strictly decreasing".into()));
    }
    let close = |a: S, b: S| (a - b).abs() <= S::lit(1e-12) * a.abs().max(b.abs());
    if !(close(full_template.d1(), params0.d1())
        && close(full_template.d2(), params0.d2())
        && close(full_template.k(), params0.k())
        && close(full_template.s_h(), params0.s_h()))
    {
        return Err(Error::Contract(
            "full template must share d1, d2, K and s_h with the reduced parameters".into(),
        ));
    }
    let mut sup_errors = Vec::with_capacity(eps_values.len());
    let mut halved = Vec::with_capacity(eps_values.len());
    let mut substeps = Vec::with_capacity(eps_values.len());
    for &eps in eps_values {
        let full = full_template.with_birth_rates(params0.b1_0() / eps, params0.b2_0() / eps)?;
        let rate = full.b1() + full.b2() + full.d1() + full.d2();
        let k = (u.grid().step() * rate / S::lit(STIFF_STEP)).ceil().as_f64().max(1.0) as usize;
        sup_errors.push(sup_error(u, params0, &full, k)?);
        halved.push(sup_error(u, params0, &full, 2 * k)?);
        substeps.push(k);
    }
    let monotone_decrease = sup_errors.windows(2).all(|w| w[1] < w[0]);
    Ok(ReductionReport {
        eps_values: eps_values.to_vec(),
        sup_errors,
        monotone_decrease,
        halved_step_errors: halved,
        substeps,
    })
}

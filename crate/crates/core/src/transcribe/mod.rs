//! Direct transcription of the release problems.
//!
//! Controls are piecewise constant on `n` uniform intervals, the terminal
//! constraint is replaced by a penalty, and gradients come from the
//! continuous costate integrated backward along the RK4 trajectory. The
//! free-horizon problem is solved on the unit interval with the horizon as an
//! extra bounded decision variable (`x' = T F(x, u)`).

mod optimizer;
mod solve;

use serde::{Deserialize, Serialize};

use crate::dynamics::{FullParams, FullState, ReducedParams};
use crate::integrate::{
    integrate_forward, sweep_costate, ControlProfile, ControlledSystem, Rescaled, TimeGrid, Trajectory,
};
use crate::{Error, Real, Result};

pub use optimizer::{minimize, BoxObjective, PgOptions, PgOutcome, Termination};
pub use solve::{solve, LegSummary, SolveOptions, SolveReport, SolveTrajectory};

/// Model being controlled, with its initial state and terminal target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "model",
    rename_all = "snake_case",
    bound(deserialize = "S: Real + Deserialize<'de>")
)]
pub enum SystemSpec<S> {
    /// Target: `p(T) >= theta`.
    Reduced { params: ReducedParams<S>, p0: S },
    /// Target: `n1(T) <= n1_max` and `n2(T) >= n2* - n2_margin`.
    Full {
        params: FullParams<S>,
        initial: FullState<S>,
        n1_max: S,
        n2_margin: S,
    },
}

impl<S: Real> SystemSpec<S> {
    /// Full model from the wild equilibrium with the `[0, 10] x [n2* - 10, n2*]`
    /// target box.
    pub fn full_default(params: FullParams<S>) -> Self {
        Self::Full {
            params,
            initial: params.wild_equilibrium(),
            n1_max: S::lit(10.0),
            n2_margin: S::lit(10.0),
        }
    }

    pub fn reduced_default(params: ReducedParams<S>) -> Self {
        Self::Reduced { params, p0: S::zero() }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::Reduced { .. } => 1,
            Self::Full { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HorizonMode<S> {
    Fixed { horizon: S },
    /// Horizon optimized within `[0.1, 10] * initial_guess`, weighted by
    /// `alpha` against the release cost.
    Free { initial_guess: S, alpha: S },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Real + Deserialize<'de>"))]
pub struct ProblemSpec<S> {
    pub system: SystemSpec<S>,
    pub horizon: HorizonMode<S>,
    /// Release-rate bound `M`.
    pub bound: S,
    pub intervals: usize,
    /// Penalty weight is `1 / penalty_eps`.
    pub penalty_eps: S,
}

impl<S: Real> ProblemSpec<S> {
    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::Contract("need at least one interval".into()));
        }
        if !(self.bound.is_finite() && self.bound > S::zero()) {
            return Err(Error::Contract(format!("release bound must be positive, got {}", self.bound)));
        }
        if !(self.penalty_eps.is_finite() && self.penalty_eps > S::zero()) {
            return Err(Error::Contract(format!(
                "penalty eps must be positive, got {}",
                self.penalty_eps
            )));
        }
        match self.horizon {
            HorizonMode::Fixed { horizon } if !(horizon.is_finite() && horizon > S::zero()) => {
                return Err(Error::Contract(format!("horizon must be positive, got {horizon}")));
            }
            HorizonMode::Free { initial_guess, alpha } => {
                if !(initial_guess.is_finite() && initial_guess > S::zero()) {
                    return Err(Error::Contract(format!(
                        "initial horizon guess must be positive, got {initial_guess}"
                    )));
                }
                if alpha == S::zero() {
                    return Err(Error::DegenerateWeight);
                }
                if !(alpha > S::zero() && alpha <= S::one()) {
                    return Err(Error::Domain {
                        quantity: "alpha",
                        value: alpha.as_f64(),
                        domain: "(0, 1]",
                    });
                }
            }
            _ => {}
        }
        match self.system {
            SystemSpec::Reduced { p0, .. } if !(p0 >= S::zero() && p0 <= S::one()) => Err(Error::Domain {
                quantity: "initial proportion",
                value: p0.as_f64(),
                domain: "[0, 1]",
            }),
            SystemSpec::Full {
                initial,
                n1_max,
                n2_margin,
                ..
            } => {
                FullState::new(initial.n1, initial.n2)?;
                if !(n1_max >= S::zero() && n2_margin >= S::zero()) {
                    return Err(Error::Contract("target margins must be non-negative".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Weight on time; zero for a fixed horizon.
    pub fn alpha(&self) -> S {
        match self.horizon {
            HorizonMode::Fixed { .. } => S::zero(),
            HorizonMode::Free { alpha, .. } => alpha,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.horizon, HorizonMode::Free { .. })
    }

    /// Admissible horizon range in free mode.
    pub fn horizon_bounds(&self) -> (S, S) {
        match self.horizon {
            HorizonMode::Fixed { horizon } => (horizon, horizon),
            HorizonMode::Free { initial_guess, .. } => (S::lit(0.1) * initial_guess, S::lit(10.0) * initial_guess),
        }
    }

    /// Horizon the problem starts from.
    pub fn nominal_horizon(&self) -> S {
        match self.horizon {
            HorizonMode::Fixed { horizon } => horizon,
            HorizonMode::Free { initial_guess, .. } => initial_guess,
        }
    }

    pub fn penalty(&self) -> PenaltyTerm<S> {
        let kind = match self.system {
            SystemSpec::Reduced { params, .. } => PenaltyKind::QuadraticHinge { target: params.theta() },
            SystemSpec::Full {
                params,
                n1_max,
                n2_margin,
                ..
            } => PenaltyKind::MaxOfMargins {
                n1_max,
                n2_floor: params.n2_star() - n2_margin,
            },
        };
        PenaltyTerm {
            kind,
            eps: self.penalty_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind<S> {
    /// `((target - p)_+)^2`
    QuadraticHinge { target: S },
    /// `max(n1 - n1_max, n2_floor - n2, 0)`
    MaxOfMargins { n1_max: S, n2_floor: S },
}

/// Terminal penalty `kind(x(T)) / eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTerm<S> {
    pub kind: PenaltyKind<S>,
    pub eps: S,
}

impl<S: Real> PenaltyTerm<S> {
    pub fn value(&self, x: &[S]) -> S {
        let raw = match self.kind {
            PenaltyKind::QuadraticHinge { target } => {
                let gap = (target - x[0]).max(S::zero());
                gap * gap
            }
            PenaltyKind::MaxOfMargins { n1_max, n2_floor } => (x[0] - n1_max).max(n2_floor - x[1]).max(S::zero()),
        };
        raw / self.eps
    }

    /// Gradient (a subgradient for the max form: the active margin, ties
    /// going to the `n1` margin, zero on the target set).
    pub fn gradient(&self, x: &[S]) -> Vec<S> {
        match self.kind {
            PenaltyKind::QuadraticHinge { target } => {
                vec![-S::lit(2.0) * (target - x[0]).max(S::zero()) / self.eps]
            }
            PenaltyKind::MaxOfMargins { n1_max, n2_floor } => {
                let m1 = x[0] - n1_max;
                let m2 = n2_floor - x[1];
                if m1.max(m2) <= S::zero() {
                    vec![S::zero(), S::zero()]
                } else if m1 >= m2 {
                    vec![S::one() / self.eps, S::zero()]
                } else {
                    vec![S::zero(), -S::one() / self.eps]
                }
            }
        }
    }
}

impl<S: Real> PenaltyTerm<S> {
    /// Smooth pieces whose maximum is the penalty, as (value, gradient), and
    /// the index of the piece [`Self::gradient`] selects.
    pub fn pieces(&self, x: &[S]) -> (Vec<(S, Vec<S>)>, usize) {
        match self.kind {
            PenaltyKind::QuadraticHinge { .. } => (vec![(self.value(x), self.gradient(x))], 0),
            PenaltyKind::MaxOfMargins { n1_max, n2_floor } => {
                let m1 = x[0] - n1_max;
                let m2 = n2_floor - x[1];
                let inv = S::one() / self.eps;
                let selected = if m1.max(m2) <= S::zero() {
                    0
                } else if m1 >= m2 {
                    1
                } else {
                    2
                };
                (
                    vec![
                        (S::zero(), vec![S::zero(), S::zero()]),
                        (m1 * inv, vec![inv, S::zero()]),
                        (m2 * inv, vec![S::zero(), -inv]),
                    ],
                    selected,
                )
            }
        }
    }
}

/// Objective value broken into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts<S> {
    /// `int u`
    pub release_cost: S,
    /// Horizon `T`; enters the objective as `alpha * T`.
    pub time_cost: S,
    pub penalty: S,
    pub alpha: S,
    /// `(1 - alpha) * release_cost + alpha * time_cost + penalty`
    pub combined: S,
}

impl<S: Real> ObjectiveParts<S> {
    fn new(release_cost: S, time_cost: S, penalty: S, alpha: S) -> Self {
        Self {
            release_cost,
            time_cost,
            penalty,
            alpha,
            combined: (S::one() - alpha) * release_cost + alpha * time_cost + penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<S> {
    /// Derivative with respect to each interval value.
    pub control: Vec<S>,
    /// Derivative with respect to the horizon (free mode only).
    pub horizon: Option<S>,
}

pub(crate) struct Evaluation<S, const D: usize> {
    pub parts: ObjectiveParts<S>,
    pub trajectory: Trajectory<S, D>,
    /// Gradient for the penalty subgradient selected by [`PenaltyTerm::gradient`].
    pub gradient: Option<Gradient<S>>,
    /// Value and gradient of every smooth piece of the objective.
    pub pieces: Vec<(S, Gradient<S>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Want {
    Value,
    Gradient,
    Pieces,
}

/// Evaluates the objective on `control`'s grid for system `sys`.
///
/// `cost_scale` multiplies the running release cost (1 on `[0, T]`, `T` on
/// the unit interval) and `horizon` is the physical `T`. With
/// `horizon_derivative` the system must be the rescaled one.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(
    sys: &Sys,
    x0: [S; D],
    penalty: &PenaltyTerm<S>,
    control: &ControlProfile<S>,
    alpha: S,
    cost_scale: S,
    horizon: S,
    want: Want,
    horizon_derivative: bool,
) -> Result<Evaluation<S, D>> {
    let factor = refinement(sys, control.grid().step());
    let fine_control;
    let fine = if factor > 1 {
        fine_control = control.refined(factor)?;
        &fine_control
    } else {
        control
    };
    let mut trajectory = integrate_forward(sys, fine, x0)?;
    let x_end = trajectory.final_state();
    let pen = penalty.value(&x_end);
    let release = cost_scale * control.integral();
    let parts = ObjectiveParts::new(release, horizon, pen, alpha);
    if !parts.combined.is_finite() {
        return Err(Error::Instability {
            time: horizon.as_f64(),
            detail: "non-finite objective".into(),
        });
    }
    if want == Want::Value {
        return Ok(Evaluation {
            parts,
            trajectory: coarsen(trajectory, control.grid(), factor),
            gradient: None,
            pieces: Vec::new(),
        });
    }
    let smooth = parts.combined - pen;
    let (piece_list, selected) = if want == Want::Pieces {
        penalty.pieces(&x_end)
    } else {
        (vec![(pen, penalty.gradient(&x_end))], 0)
    };
    let mut pieces = Vec::with_capacity(piece_list.len());
    let mut adjoint = None;
    for (k, (value, grad_pen)) in piece_list.into_iter().enumerate() {
        let q_end: [S; D] = std::array::from_fn(|j| -grad_pen[j]);
        let (gradient, nodes) = sensitivity(sys, fine, &trajectory, q_end, control, factor, alpha, cost_scale, horizon, horizon_derivative)?;
        if k == selected {
            adjoint = Some(nodes);
        }
        pieces.push((smooth + value, gradient));
    }
    trajectory.adjoint = adjoint;
    Ok(Evaluation {
        parts,
        trajectory: coarsen(trajectory, control.grid(), factor),
        gradient: Some(pieces[selected].1.clone()),
        pieces,
    })
}

/// Gradient of the running cost plus the terminal functional whose
/// gradient is `-q_end`, with the costate node samples.
#[allow(clippy::too_many_arguments)]
fn sensitivity<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(
    sys: &Sys,
    fine: &ControlProfile<S>,
    trajectory: &Trajectory<S, D>,
    q_end: [S; D],
    control: &ControlProfile<S>,
    factor: usize,
    alpha: S,
    cost_scale: S,
    horizon: S,
    horizon_derivative: bool,
) -> Result<(Gradient<S>, Vec<[S; D]>)> {
    let sweep = sweep_costate(sys, fine, trajectory, q_end)?;
    let h = fine.grid().step();
    let sixth = h / S::lit(6.0);
    let running = (S::one() - alpha) * cost_scale;
    let dot = |a: &[S; D], b: &[S; D]| (0..D).fold(S::zero(), |acc, k| acc + a[k] * b[k]);
    let mut grad_u = vec![S::zero(); control.values().len()];
    let mut flux = S::zero();
    for (i, &u) in fine.values().iter().enumerate() {
        let x0 = &trajectory.states[i];
        let x1 = &trajectory.states[i + 1];
        let xm = &sweep.mid_state[i];
        let q0 = &sweep.nodes[i];
        let q1 = &sweep.nodes[i + 1];
        let qm = &sweep.mid_costate[i];
        let w0 = dot(q0, &sys.control_gain(x0));
        let wm = dot(qm, &sys.control_gain(xm));
        let w1 = dot(q1, &sys.control_gain(x1));
        let cell = &mut grad_u[i / factor];
        *cell = *cell + running * h - sixth * (w0 + S::lit(4.0) * wm + w1);
        if horizon_derivative {
            let f0 = dot(q0, &sys.rhs(x0, u));
            let fm = dot(qm, &sys.rhs(xm, u));
            let f1 = dot(q1, &sys.rhs(x1, u));
            flux = flux + sixth * (f0 + S::lit(4.0) * fm + f1);
        }
    }
    let grad_t = horizon_derivative.then(|| {
        // sys is x' = T F, so q . F = (q . sys.rhs) / T
        (S::one() - alpha) * control.integral() + alpha - flux / horizon
    });
    Ok((
        Gradient {
            control: grad_u,
            horizon: grad_t,
        },
        sweep.nodes,
    ))
}

/// Number of integration substeps per control interval of width `h`.
pub(crate) fn refinement<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(sys: &Sys, h: S) -> usize {
    match sys.max_stable_step() {
        Some(limit) if h > limit => (h / limit).ceil().as_f64() as usize,
        _ => 1,
    }
}

fn coarsen<S: Real, const D: usize>(mut traj: Trajectory<S, D>, grid: &TimeGrid<S>, factor: usize) -> Trajectory<S, D> {
    if factor > 1 {
        let pick = |v: Vec<[S; D]>| v.into_iter().step_by(factor).collect::<Vec<_>>();
        traj.states = pick(traj.states);
        traj.adjoint = traj.adjoint.map(pick);
        traj.grid = *grid;
    }
    traj
}

fn check_control<S: Real>(spec: &ProblemSpec<S>, u: &ControlProfile<S>) -> Result<()> {
    spec.validate()?;
    if u.grid().intervals() != spec.intervals {
        return Err(Error::Contract(format!(
            "control has {} intervals, problem has {}",
            u.grid().intervals(),
            spec.intervals
        )));
    }
    if u.bound() > spec.bound {
        return Err(Error::Contract(format!(
            "control bound {} exceeds problem bound {}",
            u.bound(),
            spec.bound
        )));
    }
    if u.grid().t0() != S::zero() {
        return Err(Error::Contract("controls must start at t = 0".into()));
    }
    if let HorizonMode::Fixed { horizon } = spec.horizon {
        let end = u.grid().t1();
        if (end - horizon).abs() > S::epsilon() * S::lit(16.0) * horizon {
            return Err(Error::Contract(format!(
                "control grid ends at {end}, fixed horizon is {horizon}"
            )));
        }
    }
    Ok(())
}

/// Dispatches a closure over the concrete system of `spec`.
macro_rules! with_system {
    ($spec:expr, |$sys:ident, $x0:ident| $body:expr) => {
        match $spec.system {
            SystemSpec::Reduced { params, p0 } => {
                let $sys = &params;
                let $x0 = [p0];
                $body
            }
            SystemSpec::Full { params, initial, .. } => {
                let $sys = &params;
                let $x0 = [initial.n1, initial.n2];
                $body
            }
        }
    };
}
pub(crate) use with_system;

/// Objective of `u` on its own grid `[0, T]`: `(1 - alpha) int u + alpha T`
/// plus the terminal penalty (`alpha = 0` for a fixed horizon).
pub fn objective<S: Real>(spec: &ProblemSpec<S>, u: &ControlProfile<S>) -> Result<ObjectiveParts<S>> {
    check_control(spec, u)?;
    let penalty = spec.penalty();
    let horizon = u.grid().t1();
    with_system!(spec, |sys, x0| Ok(
        evaluate(sys, x0, &penalty, u, spec.alpha(), S::one(), horizon, Want::Value, false)?.parts
    ))
}

/// Adjoint gradient of [`objective`]. In free mode the horizon derivative is
/// taken with the control shape held fixed on the rescaled interval.
pub fn gradient<S: Real>(spec: &ProblemSpec<S>, u: &ControlProfile<S>) -> Result<Gradient<S>> {
    check_control(spec, u)?;
    let rescaled = rescale_free_time(spec).ok();
    match rescaled {
        Some(problem) => Ok(problem.evaluate_gradient(u.grid().t1(), u.values())?.1),
        None => {
            let penalty = spec.penalty();
            let horizon = u.grid().t1();
            with_system!(spec, |sys, x0| Ok(evaluate(
                sys,
                x0,
                &penalty,
                u,
                S::zero(),
                S::one(),
                horizon,
                Want::Gradient,
                false
            )?
            .gradient
            .expect("gradient requested")))
        }
    }
}

/// Free-horizon problem on `s in [0, 1]`: `x~' = T F(x~, u~)`, objective
/// `(1 - alpha) T int_0^1 u~ + alpha T + penalty`, with `T` bounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledProblem<S> {
    spec: ProblemSpec<S>,
    unit_grid: TimeGrid<S>,
}

/// Converts a free-horizon problem to the fixed unit interval.
pub fn rescale_free_time<S: Real>(spec: &ProblemSpec<S>) -> Result<RescaledProblem<S>> {
    spec.validate()?;
    if !spec.is_free() {
        return Err(Error::Contract("time rescaling applies to free-horizon problems only".into()));
    }
    Ok(RescaledProblem {
        spec: *spec,
        unit_grid: TimeGrid::new(S::zero(), S::one(), spec.intervals)?,
    })
}

impl<S: Real> RescaledProblem<S> {
    pub fn spec(&self) -> &ProblemSpec<S> {
        &self.spec
    }

    pub fn alpha(&self) -> S {
        self.spec.alpha()
    }

    pub fn horizon_bounds(&self) -> (S, S) {
        self.spec.horizon_bounds()
    }

    /// Control values as a profile on the unit interval.
    pub fn unit_profile(&self, values: &[S]) -> Result<ControlProfile<S>> {
        ControlProfile::new(self.unit_grid, values.to_vec(), self.spec.bound)
    }

    /// Right-hand side of the rescaled dynamics.
    pub fn dynamics<const D: usize, Sys: ControlledSystem<S, D>>(&self, sys: &Sys, horizon: S, x: &[S; D], u: S) -> [S; D] {
        Rescaled { inner: sys, horizon }.rhs(x, u)
    }

    fn check_horizon(&self, horizon: S) -> Result<()> {
        if horizon.is_finite() && horizon > S::zero() {
            Ok(())
        } else {
            Err(Error::Contract(format!("horizon must be positive, got {horizon}")))
        }
    }

    pub fn objective(&self, horizon: S, values: &[S]) -> Result<ObjectiveParts<S>> {
        self.check_horizon(horizon)?;
        let u = self.unit_profile(values)?;
        let penalty = self.spec.penalty();
        with_system!(self.spec, |sys, x0| {
            let scaled = Rescaled { inner: sys, horizon };
            Ok(evaluate(&scaled, x0, &penalty, &u, self.alpha(), horizon, horizon, Want::Value, false)?.parts)
        })
    }

    pub(crate) fn evaluate_gradient(&self, horizon: S, values: &[S]) -> Result<(ObjectiveParts<S>, Gradient<S>)> {
        self.check_horizon(horizon)?;
        let u = self.unit_profile(values)?;
        let penalty = self.spec.penalty();
        with_system!(self.spec, |sys, x0| {
            let scaled = Rescaled { inner: sys, horizon };
            let ev = evaluate(&scaled, x0, &penalty, &u, self.alpha(), horizon, horizon, Want::Gradient, true)?;
            Ok((ev.parts, ev.gradient.expect("gradient requested")))
        })
    }

    /// Objective and gradient `(d/du~_i, d/dT)`.
    pub fn gradient(&self, horizon: S, values: &[S]) -> Result<Gradient<S>> {
        Ok(self.evaluate_gradient(horizon, values)?.1)
    }
}

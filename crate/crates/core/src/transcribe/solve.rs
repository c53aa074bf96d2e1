use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::optimizer::{minimize, BoxObjective, PgOptions, Piece, Termination};
use super::{evaluate, with_system, Gradient, Want, HorizonMode, ObjectiveParts, PenaltyTerm, ProblemSpec, SystemSpec};
use crate::integrate::{ControlProfile, ControlledSystem, Rescaled, TimeGrid, Trajectory};
use crate::{Error, Real, Result};

const HORIZON_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions<S> {
    pub max_iters: usize,
    /// Relative tolerance on the projected-gradient norm.
    pub tol: S,
    /// Seeds the jitter of multi-start initial controls.
    pub seed: u64,
    /// Uniform jitter amplitude, as a fraction of `M`, added to each start.
    pub jitter: S,
    pub spectral: bool,
    /// Constant starting levels as fractions of `M`; `None` picks
    /// `[0.1, 0.5, 0.9]` for the full free-horizon problem and `[0.5]`
    /// otherwise.
    pub starts: Option<Vec<S>>,
}

impl<S: Real> Default for SolveOptions<S> {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: S::lit(1e-6),
            seed: 0,
            jitter: S::zero(),
            spectral: true,
            starts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SolveTrajectory<S: Real> {
    Reduced(Trajectory<S, 1>),
    Full(Trajectory<S, 2>),
}

impl<S: Real> SolveTrajectory<S> {
    pub fn grid(&self) -> &TimeGrid<S> {
        match self {
            Self::Reduced(t) => &t.grid,
            Self::Full(t) => &t.grid,
        }
    }

    pub fn final_state(&self) -> Vec<S> {
        match self {
            Self::Reduced(t) => t.final_state().to_vec(),
            Self::Full(t) => t.final_state().to_vec(),
        }
    }

    pub fn switching(&self) -> Option<&[S]> {
        match self {
            Self::Reduced(t) => t.switching.as_deref(),
            Self::Full(t) => t.switching.as_deref(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, control: &ControlProfile<S>, out: W) -> Result<()> {
        match self {
            Self::Reduced(t) => t.write_csv(control, ["p"], out),
            Self::Full(t) => t.write_csv(control, ["n1", "n2"], out),
        }
    }
}

/// Outcome of one multi-start leg.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegSummary<S> {
    pub start_level: S,
    pub objective: S,
    pub final_time: S,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport<S: Real> {
    /// Control on the physical grid `[0, final_time]`.
    pub control: ControlProfile<S>,
    pub trajectory: SolveTrajectory<S>,
    pub final_time: S,
    pub release_cost: S,
    /// The horizon `T`, weighted by `alpha` in `combined_objective`.
    pub time_cost: S,
    pub penalty_value: S,
    pub combined_objective: S,
    pub alpha: S,
    pub iterations: usize,
    pub converged: bool,
    pub termination: String,
    pub first_order_residual: S,
    /// Objective after each accepted iteration of the winning leg.
    pub history: Vec<S>,
    pub legs: Vec<LegSummary<S>>,
}

impl<S: Real> SolveReport<S> {
    pub fn parts(&self) -> ObjectiveParts<S> {
        ObjectiveParts {
            release_cost: self.release_cost,
            time_cost: self.time_cost,
            penalty: self.penalty_value,
            alpha: self.alpha,
            combined: self.combined_objective,
        }
    }
}

struct Problem<'a, S, const D: usize, Sys> {
    sys: &'a Sys,
    x0: [S; D],
    penalty: PenaltyTerm<S>,
    n: usize,
    bound: S,
    alpha: S,
    /// `Some(T)` for a fixed horizon; `None` appends `T` to the variables.
    fixed: Option<S>,
    lo: Vec<S>,
    hi: Vec<S>,
    w: Vec<S>,
}

impl<'a, S: Real, const D: usize, Sys: ControlledSystem<S, D>> Problem<'a, S, D, Sys> {
    fn new(spec: &ProblemSpec<S>, sys: &'a Sys, x0: [S; D]) -> Self {
        let n = spec.intervals;
        let nominal = spec.nominal_horizon();
        let cell = nominal / S::from_count(n);
        let mut lo = vec![S::zero(); n];
        let mut hi = vec![spec.bound; n];
        let mut w = vec![cell; n];
        let fixed = match spec.horizon {
            HorizonMode::Fixed { horizon } => Some(horizon),
            HorizonMode::Free { initial_guess, .. } => {
                let (t_lo, t_hi) = spec.horizon_bounds();
                lo.push(t_lo);
                hi.push(t_hi);
                // a relative change of T weighs a tenth of the same relative
                // change of a uniform control
                w.push(S::lit(HORIZON_WEIGHT) * spec.bound * spec.bound / initial_guess);
                None
            }
        };
        Self {
            sys,
            x0,
            penalty: spec.penalty(),
            n,
            bound: spec.bound,
            alpha: spec.alpha(),
            fixed,
            lo,
            hi,
            w,
        }
    }

    fn split<'x>(&self, x: &'x [S]) -> (&'x [S], S) {
        match self.fixed {
            Some(t) => (x, t),
            None => (&x[..self.n], x[self.n]),
        }
    }

    fn run(&self, x: &[S], want: Want) -> Result<super::Evaluation<S, D>> {
        let (values, horizon) = self.split(x);
        match self.fixed {
            Some(t) => {
                let u = ControlProfile::new(TimeGrid::horizon(t, self.n)?, values.to_vec(), self.bound)?;
                evaluate(self.sys, self.x0, &self.penalty, &u, self.alpha, S::one(), t, want, false)
            }
            None => {
                let u = ControlProfile::new(TimeGrid::horizon(S::one(), self.n)?, values.to_vec(), self.bound)?;
                let scaled = Rescaled {
                    inner: self.sys,
                    horizon,
                };
                evaluate(&scaled, self.x0, &self.penalty, &u, self.alpha, horizon, horizon, want, true)
            }
        }
    }
}

impl<'a, S: Real, const D: usize, Sys: ControlledSystem<S, D>> BoxObjective<S> for Problem<'a, S, D, Sys> {
    fn lower(&self) -> &[S] {
        &self.lo
    }
    fn upper(&self) -> &[S] {
        &self.hi
    }
    fn metric(&self) -> &[S] {
        &self.w
    }

    fn value(&mut self, x: &[S]) -> Result<S> {
        match self.run(x, Want::Value) {
            Ok(ev) => Ok(ev.parts.combined),
            // a trial step that destabilizes the integration is just rejected
            Err(Error::Instability { .. }) => Ok(S::infinity()),
            Err(e) => Err(e),
        }
    }

    fn value_and_pieces(&mut self, x: &[S]) -> Result<(S, Vec<Piece<S>>)> {
        let ev = self.run(x, Want::Pieces)?;
        let flatten = |g: Gradient<S>| {
            let mut out = g.control;
            out.extend(g.horizon);
            out
        };
        Ok((
            ev.parts.combined,
            ev.pieces.into_iter().map(|(v, g)| (v, flatten(g))).collect(),
        ))
    }
}

struct Leg<S> {
    x: Vec<S>,
    start_level: S,
    outcome: super::optimizer::PgOutcome<S>,
}

fn run_legs<S: Real, const D: usize, Sys: ControlledSystem<S, D> + Sync>(
    spec: &ProblemSpec<S>,
    sys: &Sys,
    x0: [S; D],
    starts: Vec<(S, Vec<S>)>,
    pg: &PgOptions<S>,
) -> Result<Vec<Leg<S>>> {
    let legs: Vec<Result<Leg<S>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .into_iter()
            .map(|(level, init)| {
                scope.spawn(move || {
                    let mut problem = Problem::new(spec, sys, x0);
                    let outcome = minimize(&mut problem, &init, pg)?;
                    Ok(Leg {
                        x: outcome.x.clone(),
                        start_level: level,
                        outcome,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("multi-start leg panicked"))
            .collect()
    });
    legs.into_iter().collect()
}

fn finish<S: Real, const D: usize, Sys: ControlledSystem<S, D> + Sync>(
    spec: &ProblemSpec<S>,
    sys: &Sys,
    x0: [S; D],
    legs: Vec<Leg<S>>,
) -> Result<(ControlProfile<S>, Trajectory<S, D>, ObjectiveParts<S>, Leg<S>, Vec<LegSummary<S>>)> {
    let problem = Problem::new(spec, sys, x0);
    let summaries = legs
        .iter()
        .map(|l| LegSummary {
            start_level: l.start_level,
            objective: l.outcome.value,
            final_time: problem.split(&l.x).1,
            iterations: l.outcome.iterations,
            converged: l.outcome.converged(),
        })
        .collect();
    // first best wins, so ties resolve by start order
    let best = legs
        .into_iter()
        .reduce(|a, b| if b.outcome.value < a.outcome.value { b } else { a })
        .expect("at least one leg");
    let ev = problem.run(&best.x, Want::Gradient)?;
    let (values, horizon) = problem.split(&best.x);
    let control = ControlProfile::new(TimeGrid::horizon(horizon, spec.intervals)?, values.to_vec(), spec.bound)?;
    let mut trajectory = ev.trajectory;
    trajectory.grid = *control.grid();
    // the rescaled costate coincides with the physical one, so the switching
    // function always uses the unscaled gain
    let switching = trajectory.adjoint.as_ref().map(|q| {
        q.iter()
            .zip(&trajectory.states)
            .map(|(q, x)| {
                let gain = sys.control_gain(x);
                (0..D).fold(S::zero(), |acc, k| acc + q[k] * gain[k])
            })
            .collect()
    });
    trajectory.switching = switching;
    Ok((control, trajectory, ev.parts, best, summaries))
}

/// Solves `spec` by projected gradient descent from `u0` (or from the
/// configured constant starts when `u0` is `None`).
///
/// Non-convergence is reported through `converged`, not as an error.
pub fn solve<S: Real>(spec: &ProblemSpec<S>, u0: Option<&ControlProfile<S>>, options: &SolveOptions<S>) -> Result<SolveReport<S>> {
    spec.validate()?;
    let n = spec.intervals;
    let m = spec.bound;
    let nominal = spec.nominal_horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let starts: Vec<(S, Vec<S>)> = match u0 {
        Some(u) => {
            if u.values().len() != n {
                return Err(Error::Contract(format!(
                    "initial control has {} intervals, problem has {n}",
                    u.values().len()
                )));
            }
            let mut x: Vec<S> = u.values().iter().map(|&v| v.max(S::zero()).min(m)).collect();
            if spec.is_free() {
                x.push(nominal);
            }
            vec![(S::nan(), x)]
        }
        None => {
            let levels = options.starts.clone().unwrap_or_else(|| match (spec.system, spec.horizon) {
                (SystemSpec::Full { .. }, HorizonMode::Free { .. }) => vec![S::lit(0.1), S::lit(0.5), S::lit(0.9)],
                _ => vec![S::lit(0.5)],
            });
            if levels.is_empty() {
                return Err(Error::Contract("no starting levels".into()));
            }
            levels
                .into_iter()
                .map(|level| {
                    let mut x: Vec<S> = (0..n)
                        .map(|_| {
                            let kick = if options.jitter > S::zero() {
                                options.jitter * S::lit(rng.gen_range(-1.0..1.0))
                            } else {
                                S::zero()
                            };
                            ((level + kick) * m).max(S::zero()).min(m)
                        })
                        .collect();
                    if spec.is_free() {
                        x.push(nominal);
                    }
                    (level, x)
                })
                .collect()
        }
    };
    let pg = PgOptions {
        max_iters: options.max_iters,
        tol: options.tol,
        spectral: options.spectral,
        ..PgOptions::default()
    };
    let (control, trajectory, parts, best, legs) = with_system!(spec, |sys, x0| {
        let legs = run_legs(spec, sys, x0, starts, &pg)?;
        let (control, traj, parts, best, summaries) = finish(spec, sys, x0, legs)?;
        (control, wrap(traj), parts, best, summaries)
    });
    let outcome = best.outcome;
    Ok(SolveReport {
        final_time: control.grid().t1(),
        control,
        trajectory,
        release_cost: parts.release_cost,
        time_cost: parts.time_cost,
        penalty_value: parts.penalty,
        combined_objective: parts.combined,
        alpha: parts.alpha,
        iterations: outcome.iterations,
        converged: outcome.converged(),
        termination: match outcome.termination {
            Termination::Stationary => "stationary",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchStalled => "line_search_stalled",
            Termination::NoiseFloor => "noise_floor",
        }
        .to_string(),
        first_order_residual: outcome.residual,
        history: outcome.history,
        legs,
    })
}

trait Wrap<S: Real> {
    fn wrap(self) -> SolveTrajectory<S>;
}

impl<S: Real> Wrap<S> for Trajectory<S, 1> {
    fn wrap(self) -> SolveTrajectory<S> {
        SolveTrajectory::Reduced(self)
    }
}

impl<S: Real> Wrap<S> for Trajectory<S, 2> {
    fn wrap(self) -> SolveTrajectory<S> {
        SolveTrajectory::Full(self)
    }
}

fn wrap<S: Real, T: Wrap<S>>(t: T) -> SolveTrajectory<S> {
    t.wrap()
}

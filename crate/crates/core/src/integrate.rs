//! Fixed-step RK4 integration of the controlled models.
//!
//! Controls are piecewise constant on a uniform grid and states are sampled
//! at the grid nodes. Costates are obtained by integrating the continuous
//! adjoint equation `q' = -(df/dx)^T q` backward with the same scheme.

use std::io;

use serde::{Deserialize, Serialize};

use crate::dynamics::{FullParams, FullState, ReducedParams};
use crate::{Error, Real, Result};

/// Uniform partition of `[t0, t1]` into `n` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid<S>", bound(deserialize = "S: Real + Deserialize<'de>"))]
pub struct TimeGrid<S> {
    t0: S,
    t1: S,
    n: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid<S> {
    t0: S,
    t1: S,
    n: usize,
}

impl<S: Real> TryFrom<RawGrid<S>> for TimeGrid<S> {
    type Error = Error;

    fn try_from(r: RawGrid<S>) -> Result<Self> {
        Self::new(r.t0, r.t1, r.n)
    }
}

impl<S: Real> TimeGrid<S> {
    pub fn new(t0: S, t1: S, n: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::Contract(format!("time grid needs t1 > t0, got [{t0}, {t1}]")));
        }
        if n == 0 {
            return Err(Error::Contract("time grid needs at least one interval".into()));
        }
        Ok(Self { t0, t1, n })
    }

    /// `[0, horizon]` with `n` intervals.
    pub fn horizon(horizon: S, n: usize) -> Result<Self> {
        Self::new(S::zero(), horizon, n)
    }

    pub fn t0(&self) -> S {
        self.t0
    }
    pub fn t1(&self) -> S {
        self.t1
    }
    pub fn intervals(&self) -> usize {
        self.n
    }
    pub fn duration(&self) -> S {
        self.t1 - self.t0
    }
    pub fn step(&self) -> S {
        self.duration() / S::from_count(self.n)
    }

    /// Node `i` in `0..=n`; the last node is exactly `t1`.
    pub fn node(&self, i: usize) -> S {
        if i == self.n {
            self.t1
        } else {
            self.t0 + self.step() * S::from_count(i)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = S> + '_ {
        (0..=self.n).map(move |i| self.node(i))
    }

    /// Same grid shifted and stretched onto `[0, horizon]`.
    pub fn with_horizon(&self, horizon: S) -> Result<Self> {
        Self::horizon(horizon, self.n)
    }
}

/// Piecewise-constant release rate, `values[i]` on `[t_i, t_{i+1})`,
/// constrained to the box `[0, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile<S>", bound(deserialize = "S: Real + Deserialize<'de>"))]
pub struct ControlProfile<S> {
    grid: TimeGrid<S>,
    values: Vec<S>,
    bound: S,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "S: Real + Deserialize<'de>"))]
struct RawProfile<S> {
    grid: TimeGrid<S>,
    values: Vec<S>,
    bound: S,
}

impl<S: Real> TryFrom<RawProfile<S>> for ControlProfile<S> {
    type Error = Error;

    fn try_from(r: RawProfile<S>) -> Result<Self> {
        Self::new(r.grid, r.values, r.bound)
    }
}

impl<S: Real> ControlProfile<S> {
    pub fn new(grid: TimeGrid<S>, values: Vec<S>, bound: S) -> Result<Self> {
        if !(bound.is_finite() && bound > S::zero()) {
            return Err(Error::Contract(format!("control bound must be positive, got {bound}")));
        }
        if values.len() != grid.intervals() {
            return Err(Error::Contract(format!(
                "{} control values for a grid of {} intervals",
                values.len(),
                grid.intervals()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= S::zero() && **v <= bound))
        {
            return Err(Error::Contract(format!(
                "control value {v} at interval {i} outside [0, {bound}]"
            )));
        }
        Ok(Self { grid, values, bound })
    }

    pub fn constant(grid: TimeGrid<S>, value: S, bound: S) -> Result<Self> {
        Self::new(grid, vec![value; grid.intervals()], bound)
    }

    /// Builds a profile by clamping arbitrary values into the box.
    pub fn clamped(grid: TimeGrid<S>, values: impl IntoIterator<Item = S>, bound: S) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|v| if v.is_nan() { S::zero() } else { v.max(S::zero()).min(bound) })
            .collect();
        Self::new(grid, values, bound)
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }
    pub fn values(&self) -> &[S] {
        &self.values
    }
    pub fn bound(&self) -> S {
        self.bound
    }

    /// Left-endpoint sum `h * sum(u_i)`, exact for piecewise-constant controls.
    pub fn integral(&self) -> S {
        self.grid.step() * self.values.iter().copied().sum::<S>()
    }

    /// Value used at node `i` (left-endpoint convention, last node repeats
    /// the last interval).
    pub fn at_node(&self, i: usize) -> S {
        self.values[i.min(self.values.len() - 1)]
    }

    /// Same values on a grid with another horizon.
    pub fn with_horizon(&self, horizon: S) -> Result<Self> {
        Self::new(self.grid.with_horizon(horizon)?, self.values.clone(), self.bound)
    }

    /// Each interval split into `factor` equal sub-intervals carrying the
    /// same value.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Contract("refinement factor must be positive".into()));
        }
        let grid = TimeGrid::new(self.grid.t0, self.grid.t1, self.grid.n * factor)?;
        let values = self
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect();
        Self::new(grid, values, self.bound)
    }
}

/// States sampled at the `n + 1` grid nodes, with optional costate and
/// switching-function channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S, const D: usize> {
    pub grid: TimeGrid<S>,
    pub states: Vec<[S; D]>,
    pub adjoint: Option<Vec<[S; D]>>,
    pub switching: Option<Vec<S>>,
}

// Arrays of generic length have no serde impl; states go out as slices.
impl<S: Real + Serialize, const D: usize> Serialize for Trajectory<S, D> {
    fn serialize<Z: serde::Serializer>(&self, ser: Z) -> std::result::Result<Z::Ok, Z::Error> {
        use serde::ser::SerializeStruct;
        let rows = |v: &[[S; D]]| v.iter().map(|x| x.to_vec()).collect::<Vec<_>>();
        let mut st = ser.serialize_struct("Trajectory", 4)?;
        st.serialize_field("grid", &self.grid)?;
        st.serialize_field("states", &rows(&self.states))?;
        st.serialize_field("adjoint", &self.adjoint.as_deref().map(rows))?;
        st.serialize_field("switching", &self.switching)?;
        st.end()
    }
}

impl<S: Real, const D: usize> Trajectory<S, D> {
    pub fn final_state(&self) -> [S; D] {
        *self.states.last().expect("trajectory has n + 1 >= 2 samples")
    }

    pub fn component(&self, k: usize) -> Vec<S> {
        self.states.iter().map(|x| x[k]).collect()
    }

    /// Writes one row per grid node: `t`, the state columns, `u`, then the
    /// costate (`q` or `q1..qD`) and `w` columns when present.
    pub fn write_csv<W: io::Write>(
        &self,
        control: &ControlProfile<S>,
        state_names: [&str; D],
        out: W,
    ) -> Result<()> {
        if control.grid().intervals() != self.grid.intervals() {
            return Err(Error::Contract("control and trajectory grids differ".into()));
        }
        let mut header: Vec<String> = vec!["t".into()];
        header.extend(state_names.iter().map(|s| s.to_string()));
        header.push("u".into());
        if self.adjoint.is_some() {
            if D == 1 {
                header.push("q".into());
            } else {
                header.extend((1..=D).map(|k| format!("q{k}")));
            }
        }
        if self.switching.is_some() {
            header.push("w".into());
        }
        let mut w = csv::Writer::from_writer(out);
        let io_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&header).map_err(io_err)?;
        for (i, t) in self.grid.nodes().enumerate() {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            row.push(t.as_f64().to_string());
            row.extend(self.states[i].iter().map(|v| v.as_f64().to_string()));
            row.push(control.at_node(i).as_f64().to_string());
            if let Some(q) = &self.adjoint {
                row.extend(q[i].iter().map(|v| v.as_f64().to_string()));
            }
            if let Some(sw) = &self.switching {
                row.push(sw[i].as_f64().to_string());
            }
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

/// A control-affine ODE `x' = F(x, u)` with state dimension `D`.
pub trait ControlledSystem<S: Real, const D: usize> {
    fn rhs(&self, x: &[S; D], u: S) -> [S; D];

    /// `dF/dx`, row-major.
    fn state_jacobian(&self, x: &[S; D], u: S) -> [[S; D]; D];

    /// `dF/du`.
    fn control_gain(&self, x: &[S; D]) -> [S; D];

    /// Validates (and possibly clamps) a state produced by a step ending at `t`.
    fn admit(&self, x: [S; D], t: S) -> Result<[S; D]>;

    /// Largest step the optimizer should integrate with; controls on coarser
    /// grids are evaluated on a refined grid.
    fn max_stable_step(&self) -> Option<S> {
        None
    }
}

fn nan_guard<S: Real, const D: usize>(x: &[S; D], t: S) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Instability {
            time: t.as_f64(),
            detail: "non-finite state".into(),
        })
    }
}

impl<S: Real> ControlledSystem<S, 1> for ReducedParams<S> {
    #[inline]
    fn rhs(&self, x: &[S; 1], u: S) -> [S; 1] {
        [self.f(x[0]) + u * self.g(x[0])]
    }

    #[inline]
    fn state_jacobian(&self, x: &[S; 1], u: S) -> [[S; 1]; 1] {
        [[self.f_prime(x[0]) + u * self.g_prime(x[0])]]
    }

    #[inline]
    fn control_gain(&self, x: &[S; 1]) -> [S; 1] {
        [self.g(x[0])]
    }

    fn admit(&self, x: [S; 1], t: S) -> Result<[S; 1]> {
        nan_guard(&x, t)?;
        let slack = S::lit(1e-12).max(S::epsilon() * S::lit(16.0));
        let p = x[0];
        if p < -slack || p > S::one() + slack {
            return Err(Error::Instability {
                time: t.as_f64(),
                detail: format!("proportion {p} left [0, 1]"),
            });
        }
        Ok([p.max(S::zero()).min(S::one())])
    }
}

impl<S: Real> ControlledSystem<S, 2> for FullParams<S> {
    #[inline]
    fn rhs(&self, x: &[S; 2], u: S) -> [S; 2] {
        let (a, b) = FullParams::rhs(self, x[0], x[1], u);
        [a, b]
    }

    #[inline]
    fn state_jacobian(&self, x: &[S; 2], _u: S) -> [[S; 2]; 2] {
        self.jacobian(x[0], x[1])
    }

    #[inline]
    fn control_gain(&self, _x: &[S; 2]) -> [S; 2] {
        [S::zero(), S::one()]
    }

    fn max_stable_step(&self) -> Option<S> {
        // the linearization has entries of order b1 + b2 near the equilibria
        Some(S::one() / (self.b1() + self.b2() + self.d1() + self.d2()))
    }

    fn admit(&self, x: [S; 2], t: S) -> Result<[S; 2]> {
        nan_guard(&x, t)?;
        let slack = S::lit(1e-9) * self.k();
        let mut out = x;
        for v in out.iter_mut() {
            if *v < -slack {
                return Err(Error::Instability {
                    time: t.as_f64(),
                    detail: format!("population {} became negative", *v),
                });
            }
            *v = v.max(S::zero());
        }
        Ok(out)
    }
}

/// Time-rescaled system `x' = T F(x, u)` on the unit interval.
#[derive(Debug, Clone, Copy)]
pub struct Rescaled<'a, Sys, S> {
    pub inner: &'a Sys,
    pub horizon: S,
}

impl<'a, S: Real, const D: usize, Sys: ControlledSystem<S, D>> ControlledSystem<S, D> for Rescaled<'a, Sys, S> {
    fn rhs(&self, x: &[S; D], u: S) -> [S; D] {
        self.inner.rhs(x, u).map(|v| v * self.horizon)
    }

    fn state_jacobian(&self, x: &[S; D], u: S) -> [[S; D]; D] {
        self.inner
            .state_jacobian(x, u)
            .map(|row| row.map(|v| v * self.horizon))
    }

    fn control_gain(&self, x: &[S; D]) -> [S; D] {
        self.inner.control_gain(x).map(|v| v * self.horizon)
    }

    fn admit(&self, x: [S; D], t: S) -> Result<[S; D]> {
        self.inner.admit(x, t)
    }

    fn max_stable_step(&self) -> Option<S> {
        self.inner.max_stable_step().map(|h| h / self.horizon)
    }
}

#[inline]
fn axpy<S: Real, const D: usize>(x: &[S; D], a: S, y: &[S; D]) -> [S; D] {
    std::array::from_fn(|k| x[k] + a * y[k])
}

#[inline]
fn mat_t_vec<S: Real, const D: usize>(m: &[[S; D]; D], v: &[S; D]) -> [S; D] {
    std::array::from_fn(|j| (0..D).fold(S::zero(), |acc, i| acc + m[i][j] * v[i]))
}

/// One classical RK4 step with the control frozen.
#[inline]
pub fn rk4_step<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(sys: &Sys, x: &[S; D], u: S, h: S) -> [S; D] {
    let half = S::lit(0.5) * h;
    let k1 = sys.rhs(x, u);
    let k2 = sys.rhs(&axpy(x, half, &k1), u);
    let k3 = sys.rhs(&axpy(x, half, &k2), u);
    let k4 = sys.rhs(&axpy(x, h, &k3), u);
    let sixth = h / S::lit(6.0);
    std::array::from_fn(|k| x[k] + sixth * (k1[k] + S::lit(2.0) * (k2[k] + k3[k]) + k4[k]))
}

/// Forward RK4 sweep over the control grid.
pub fn integrate_forward<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(
    sys: &Sys,
    control: &ControlProfile<S>,
    x0: [S; D],
) -> Result<Trajectory<S, D>> {
    let grid = *control.grid();
    let h = grid.step();
    let mut states = Vec::with_capacity(grid.intervals() + 1);
    let mut x = sys.admit(x0, grid.t0())?;
    states.push(x);
    for (i, &u) in control.values().iter().enumerate() {
        x = sys.admit(rk4_step(sys, &x, u, h), grid.node(i + 1))?;
        states.push(x);
    }
    Ok(Trajectory {
        grid,
        states,
        adjoint: None,
        switching: None,
    })
}

/// Costate samples at the nodes plus, per interval, the state and costate
/// at the midpoint (used for Simpson quadrature of gradient integrands).
pub(crate) struct CostateSweep<S, const D: usize> {
    pub nodes: Vec<[S; D]>,
    pub mid_costate: Vec<[S; D]>,
    pub mid_state: Vec<[S; D]>,
}

fn check_grids<S: Real, const D: usize>(control: &ControlProfile<S>, traj: &Trajectory<S, D>) -> Result<()> {
    if *control.grid() != traj.grid || traj.states.len() != traj.grid.intervals() + 1 {
        return Err(Error::Contract("control and trajectory grids differ".into()));
    }
    Ok(())
}

// Backward RK4 step for the linear costate equation over [t - h, t],
// with the Jacobian supplied at t, t - h/2 and t - h.
#[inline]
fn costate_step<S: Real, const D: usize>(q: &[S; D], h: S, a_end: &[[S; D]; D], a_mid: &[[S; D]; D], a_start: &[[S; D]; D]) -> [S; D] {
    // dq/dt = -A^T q; stepping backward means dq/d(-t) = A^T q
    let half = S::lit(0.5) * h;
    let k1 = mat_t_vec(a_end, q);
    let k2 = mat_t_vec(a_mid, &axpy(q, half, &k1));
    let k3 = mat_t_vec(a_mid, &axpy(q, half, &k2));
    let k4 = mat_t_vec(a_start, &axpy(q, h, &k3));
    let sixth = h / S::lit(6.0);
    std::array::from_fn(|k| q[k] + sixth * (k1[k] + S::lit(2.0) * (k2[k] + k3[k]) + k4[k]))
}

pub(crate) fn sweep_costate<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(
    sys: &Sys,
    control: &ControlProfile<S>,
    traj: &Trajectory<S, D>,
    q_terminal: [S; D],
) -> Result<CostateSweep<S, D>> {
    check_grids(control, traj)?;
    let n = traj.grid.intervals();
    let h = traj.grid.step();
    let half = S::lit(0.5) * h;
    let quarter = S::lit(0.25) * h;
    let mut nodes = vec![q_terminal; n + 1];
    let mut mid_costate = vec![q_terminal; n];
    let mut mid_state = vec![traj.states[0]; n];
    let mut q = q_terminal;
    for i in (0..n).rev() {
        let u = control.values()[i];
        let x0 = traj.states[i];
        let x1 = traj.states[i + 1];
        let xq1 = rk4_step(sys, &x0, u, quarter);
        let xm = rk4_step(sys, &x0, u, half);
        let xq3 = rk4_step(sys, &x0, u, S::lit(3.0) * quarter);
        let a1 = sys.state_jacobian(&x1, u);
        let aq3 = sys.state_jacobian(&xq3, u);
        let am = sys.state_jacobian(&xm, u);
        let aq1 = sys.state_jacobian(&xq1, u);
        let a0 = sys.state_jacobian(&x0, u);
        let qm = costate_step(&q, half, &a1, &aq3, &am);
        q = costate_step(&qm, half, &am, &aq1, &a0);
        nan_guard(&q, traj.grid.node(i))?;
        nodes[i] = q;
        mid_costate[i] = qm;
        mid_state[i] = xm;
    }
    Ok(CostateSweep {
        nodes,
        mid_costate,
        mid_state,
    })
}

/// Costate samples at the grid nodes for terminal value `q_terminal`.
pub fn integrate_costate<S: Real, const D: usize, Sys: ControlledSystem<S, D>>(
    sys: &Sys,
    control: &ControlProfile<S>,
    traj: &Trajectory<S, D>,
    q_terminal: [S; D],
) -> Result<Vec<[S; D]>> {
    Ok(sweep_costate(sys, control, traj, q_terminal)?.nodes)
}

/// Reduced model from `p0`.
pub fn integrate_reduced<S: Real>(u: &ControlProfile<S>, p0: S, params: &ReducedParams<S>) -> Result<Trajectory<S, 1>> {
    if !(p0 >= S::zero() && p0 <= S::one()) {
        return Err(Error::Domain {
            quantity: "initial proportion",
            value: p0.as_f64(),
            domain: "[0, 1]",
        });
    }
    integrate_forward(params, u, [p0])
}

/// Full model from `s0`.
pub fn integrate_full<S: Real>(u: &ControlProfile<S>, s0: FullState<S>, params: &FullParams<S>) -> Result<Trajectory<S, 2>> {
    let s0 = FullState::new(s0.n1, s0.n2)?;
    integrate_forward(params, u, [s0.n1, s0.n2])
}

/// Costate of the reduced model, `q' = -q (f'(p) + u g'(p))`.
pub fn integrate_adjoint_reduced<S: Real>(
    u: &ControlProfile<S>,
    traj: &Trajectory<S, 1>,
    q_terminal: S,
    params: &ReducedParams<S>,
) -> Result<Vec<S>> {
    Ok(integrate_costate(params, u, traj, [q_terminal])?
        .into_iter()
        .map(|q| q[0])
        .collect())
}

/// Costate of the full model.
pub fn integrate_adjoint_full<S: Real>(
    u: &ControlProfile<S>,
    traj: &Trajectory<S, 2>,
    q_terminal: [S; 2],
    params: &FullParams<S>,
) -> Result<Vec<[S; 2]>> {
    integrate_costate(params, u, traj, q_terminal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> ReducedParams<f64> {
        ReducedParams::table1()
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(0.0, 0.5, 300).unwrap();
        assert_relative_eq!(g.step(), 0.5 / 300.0);
        assert_eq!(g.node(300), 0.5);
        assert_eq!(g.nodes().count(), 301);
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn profile_rejects_inadmissible_values() {
        let g = TimeGrid::horizon(1.0, 4).unwrap();
        assert!(ControlProfile::new(g, vec![0.0, 1.0, 11.0, 0.0], 10.0).is_err());
        assert!(ControlProfile::new(g, vec![0.0, -1e-9, 1.0, 0.0], 10.0).is_err());
        assert!(ControlProfile::new(g, vec![0.0; 3], 10.0).is_err());
        let c = ControlProfile::clamped(g, [12.0, -1.0, 3.0, f64::NAN], 10.0).unwrap();
        assert_eq!(c.values(), &[10.0, 0.0, 3.0, 0.0]);
        assert_relative_eq!(c.integral(), 13.0 / 4.0);
    }

    #[test]
    fn zero_state_is_an_equilibrium() {
        let p = table1();
        let u = ControlProfile::constant(TimeGrid::horizon(1.0, 50).unwrap(), 0.0, 10.0).unwrap();
        let tr = integrate_reduced(&u, 0.0, &p).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn threshold_is_held_without_control() {
        let p = table1();
        let u = ControlProfile::constant(TimeGrid::horizon(1.0, 100).unwrap(), 0.0, 10.0).unwrap();
        let tr = integrate_reduced(&u, p.theta(), &p).unwrap();
        for x in &tr.states {
            assert!((x[0] - p.theta()).abs() < 1e-8);
        }
    }

    #[test]
    fn maximal_release_reaches_threshold_at_reference_time() {
        let p = table1();
        let u = ControlProfile::constant(TimeGrid::horizon(0.0238122, 300).unwrap(), 10.0, 10.0).unwrap();
        let tr = integrate_reduced(&u, 0.0, &p).unwrap();
        assert!((tr.final_state()[0] - p.theta()).abs() < 2e-3);
    }

    #[test]
    fn full_equilibria_are_preserved() {
        let params = FullParams::<f64>::table2();
        let u = ControlProfile::constant(TimeGrid::horizon(100.0, 2000).unwrap(), 0.0, 112.0).unwrap();
        for s0 in [params.wild_equilibrium(), params.infected_equilibrium()] {
            let tr = integrate_full(&u, s0, &params).unwrap();
            for x in &tr.states {
                assert!((x[0] - s0.n1).abs() < 1e-6 * params.k());
                assert!((x[1] - s0.n2).abs() < 1e-6 * params.k());
            }
        }
    }

    #[test]
    fn release_from_wild_equilibrium_raises_infected() {
        let params = FullParams::<f64>::table2();
        let d = crate::dynamics::full_rhs(params.wild_equilibrium(), 112.0, &params).unwrap();
        assert!(d.n2 > 0.0);
        let u = ControlProfile::constant(TimeGrid::horizon(5.0, 50).unwrap(), 112.0, 112.0).unwrap();
        let tr = integrate_full(&u, params.wild_equilibrium(), &params).unwrap();
        assert!(tr.states[1][1] > 0.0 && tr.states[2][1] > tr.states[1][1]);
    }

    #[test]
    fn coarse_stiff_grid_reports_instability() {
        let params = FullParams::<f64>::table2();
        let u = ControlProfile::constant(TimeGrid::horizon(200.0, 2).unwrap(), 112.0, 112.0).unwrap();
        let err = integrate_full(&u, params.wild_equilibrium(), &params).unwrap_err();
        assert!(matches!(err, Error::Instability { .. }), "{err:?}");
    }

    #[test]
    fn zero_terminal_costate_stays_zero() {
        let p = table1();
        let u = ControlProfile::constant(TimeGrid::horizon(0.5, 30).unwrap(), 3.0, 10.0).unwrap();
        let tr = integrate_reduced(&u, 0.0, &p).unwrap();
        assert!(integrate_adjoint_reduced(&u, &tr, 0.0, &p).unwrap().iter().all(|&q| q == 0.0));
        let full = FullParams::<f64>::table2();
        let u2 = ControlProfile::constant(TimeGrid::horizon(10.0, 30).unwrap(), 3.0, 112.0).unwrap();
        let tr2 = integrate_full(&u2, full.wild_equilibrium(), &full).unwrap();
        assert!(integrate_adjoint_full(&u2, &tr2, [0.0, 0.0], &full)
            .unwrap()
            .iter()
            .all(|q| q[0] == 0.0 && q[1] == 0.0));
    }

    #[test]
    fn costate_at_rest_is_exponential() {
        let p = table1();
        let horizon = 2.0;
        let u = ControlProfile::constant(TimeGrid::horizon(horizon, 40).unwrap(), 0.0, 10.0).unwrap();
        let tr = integrate_reduced(&u, 0.0, &p).unwrap();
        let q = integrate_adjoint_reduced(&u, &tr, 1.0, &p).unwrap();
        let e = 1e-6;
        let fp0 = (p.f(e) - p.f(-e)) / (2.0 * e);
        for (t, qt) in tr.grid.nodes().zip(&q) {
            assert_relative_eq!(*qt, (fp0 * (horizon - t)).exp(), max_relative = 1e-8);
        }
    }

    #[test]
    fn grid_mismatch_is_a_contract_error() {
        let p = table1();
        let u = ControlProfile::constant(TimeGrid::horizon(0.5, 30).unwrap(), 3.0, 10.0).unwrap();
        let v = ControlProfile::constant(TimeGrid::horizon(0.5, 31).unwrap(), 3.0, 10.0).unwrap();
        let tr = integrate_reduced(&u, 0.0, &p).unwrap();
        assert!(matches!(integrate_adjoint_reduced(&v, &tr, 1.0, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn csv_layout() {
        let p = table1();
        let u = ControlProfile::constant(TimeGrid::horizon(0.5, 4).unwrap(), 3.0, 10.0).unwrap();
        let mut tr = integrate_reduced(&u, 0.0, &p).unwrap();
        tr.adjoint = Some(vec![[1.0]; 5]);
        tr.switching = Some(vec![0.5; 5]);
        let mut buf = Vec::new();
        tr.write_csv(&u, ["p"], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,p,u,q,w");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("0.5,"));
    }
}

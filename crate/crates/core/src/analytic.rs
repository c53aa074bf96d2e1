//! Closed-form optima of the reduced problem.
//!
//! For a release bound `M` above the minimal effective rate `m*`, releasing
//! at full rate during one block of length `T*` (the time `M` needs to carry
//! the proportion from 0 to the threshold) is optimal for any fixed horizon
//! `T >= T*`, at cost `M T*`. With the horizon free and a weight `alpha > 0`
//! on time, the block must start at 0 and the horizon equals `T*`.

use serde::{Deserialize, Serialize};

use crate::dynamics::ReducedParams;
use crate::integrate::{ControlProfile, TimeGrid};
use crate::quadrature::integrate_adaptive;
use crate::{Error, Real, Result};

const MAX_QUADRATURE_INTERVALS: usize = 20_000;

/// `M` on `[start, start + duration)`, zero elsewhere on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BangBangPolicy<S> {
    pub rate: S,
    pub start: S,
    pub duration: S,
    pub horizon: S,
}

impl<S: Real> BangBangPolicy<S> {
    pub fn value_at(&self, t: S) -> S {
        if t >= self.start && t < self.start + self.duration {
            self.rate
        } else {
            S::zero()
        }
    }

    pub fn release_cost(&self) -> S {
        self.rate * self.duration
    }

    /// Cell-averaged profile on `n` uniform intervals of `[0, horizon]`.
    /// Cells cut by a switching time carry the mass-preserving average.
    pub fn to_profile(&self, n: usize) -> Result<ControlProfile<S>> {
        let grid = TimeGrid::horizon(self.horizon, n)?;
        let h = grid.step();
        let end = self.start + self.duration;
        let values = (0..n).map(|i| {
            let a = grid.node(i);
            let b = grid.node(i + 1);
            let overlap = (b.min(end) - a.max(self.start)).max(S::zero());
            self.rate * (overlap / h).min(S::one())
        });
        ControlProfile::clamped(grid, values, self.rate)
    }
}

/// Optimal value of the weighted problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalValue<S> {
    pub release_cost: S,
    pub time_cost: S,
    pub combined: S,
    pub alpha: S,
}

impl<S: Real> OptimalValue<S> {
    pub fn new(release_cost: S, time_cost: S, alpha: S) -> Self {
        Self {
            release_cost,
            time_cost,
            combined: (S::one() - alpha) * release_cost + alpha * time_cost,
            alpha,
        }
    }
}

/// Minimal constant release rate able to hold any proportion below the
/// threshold: `max_{[0, theta]} -f/g`, attained at `p*`.
pub fn m_star<S: Real>(params: &ReducedParams<S>) -> S {
    let value = params.holding_rate(params.p_star());
    debug_assert!({
        let theta = params.theta();
        let n = 1000;
        let grid_max = (0..=n)
            .map(|i| params.holding_rate(theta * S::from_count(i) / S::from_count(n)))
            .fold(S::neg_infinity(), S::max);
        grid_max <= value * (S::one() + S::lit(1e-6)) + S::epsilon()
    });
    value
}

/// Time for a constant release `u_bar` to carry the proportion from 0 to the
/// threshold: `int_0^theta dv / (f(v) + u_bar g(v))`.
pub fn feasibility_time<S: Real>(u_bar: S, params: &ReducedParams<S>) -> Result<S> {
    let m = m_star(params);
    if !(u_bar.is_finite() && u_bar > m) {
        return Err(Error::InfeasibleRate {
            rate: u_bar.as_f64(),
            m_star: m.as_f64(),
        });
    }
    let res = integrate_adaptive(
        |v| S::one() / (params.f(v) + u_bar * params.g(v)),
        S::zero(),
        params.theta(),
        S::tolerance_floor(),
        MAX_QUADRATURE_INTERVALS,
    )?;
    Ok(res.value)
}

/// Minimal time `T*` to reach the threshold with release bound `rate`.
pub fn t_star<S: Real>(rate: S, params: &ReducedParams<S>) -> Result<S> {
    feasibility_time(rate, params)
}

/// Member `xi` of the optimal bang-bang family for horizon `horizon`.
pub fn theorem1_policy<S: Real>(xi: S, horizon: S, rate: S, params: &ReducedParams<S>) -> Result<BangBangPolicy<S>> {
    let t_min = t_star(rate, params)?;
    let slack = S::lit(1e-12) * t_min.max(S::one());
    if !(horizon.is_finite() && horizon >= t_min - slack) {
        return Err(Error::InfeasibleHorizon {
            horizon: horizon.as_f64(),
            t_star: t_min.as_f64(),
        });
    }
    let latest = (horizon - t_min).max(S::zero());
    if !(xi >= -slack && xi <= latest + slack) {
        return Err(Error::Contract(format!(
            "offset {xi} outside the admissible range [0, {latest}]"
        )));
    }
    Ok(BangBangPolicy {
        rate,
        start: xi.max(S::zero()).min(latest),
        duration: t_min,
        horizon: horizon.max(t_min),
    })
}

/// Unique optimum of the free-horizon problem with time weight `alpha`.
pub fn theorem2_policy<S: Real>(alpha: S, rate: S, params: &ReducedParams<S>) -> Result<(BangBangPolicy<S>, OptimalValue<S>)> {
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
    let t_min = t_star(rate, params)?;
    let policy = BangBangPolicy {
        rate,
        start: S::zero(),
        duration: t_min,
        horizon: t_min,
    };
    Ok((policy, OptimalValue::new(rate * t_min, t_min, alpha)))
}

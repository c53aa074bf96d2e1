//! Population models.
//!
//! The full model tracks a wild population `n1` and a Wolbachia-infected
//! population `n2`:
//!
//! ```text
//! n1' = b1 n1 (1 - s_h n2/(n1+n2)) (1 - (n1+n2)/K) - d1 n1
//! n2' = b2 n2 (1 - (n1+n2)/K) - d2 n2 + u
//! ```
//!
//! In the high-birth-rate limit the infected proportion `p = n2/(n1+n2)`
//! follows the scalar equation `p' = f(p) + u g(p)`, which is bistable with
//! stable states `0`, `1` and an invasion threshold `theta` in between.

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

fn positive<S: Real>(name: &'static str, v: S) -> Result<()> {
    if v.is_finite() && v > S::zero() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "{name} must be finite and strictly positive, got {v}"
        )))
    }
}

fn unit_interval<S: Real>(name: &'static str, v: S) -> Result<()> {
    if v.is_finite() && v >= S::zero() && v <= S::one() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "{name} must lie in [0, 1], got {v}"
        )))
    }
}

fn check_proportion<S: Real>(p: S) -> Result<()> {
    if p.is_finite() && p >= S::zero() && p <= S::one() {
        Ok(())
    } else {
        Err(Error::Domain {
            quantity: "proportion",
            value: p.as_f64(),
            domain: "[0, 1]",
        })
    }
}

/// Parameters of the reduced proportion model.
///
/// Construction enforces `1 - s_h < d1 b2_0 / (d2 b1_0) < 1`, so every
/// value of this type has a threshold `theta` strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReducedParams<S>", bound(deserialize = "S: Real + Deserialize<'de>"))]
pub struct ReducedParams<S> {
    b1_0: S,
    b2_0: S,
    d1: S,
    d2: S,
    k: S,
    s_h: S,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReducedParams<S> {
    b1_0: S,
    b2_0: S,
    d1: S,
    d2: S,
    k: S,
    s_h: S,
}

impl<S: Real> TryFrom<RawReducedParams<S>> for ReducedParams<S> {
    type Error = Error;

    fn try_from(r: RawReducedParams<S>) -> Result<Self> {
        Self::new(r.b1_0, r.b2_0, r.d1, r.d2, r.k, r.s_h)
    }
}

impl<S: Real> ReducedParams<S> {
    pub fn new(b1_0: S, b2_0: S, d1: S, d2: S, k: S, s_h: S) -> Result<Self> {
        positive("b1_0", b1_0)?;
        positive("b2_0", b2_0)?;
        positive("d1", d1)?;
        positive("d2", d2)?;
        positive("K", k)?;
        unit_interval("s_h", s_h)?;
        let params = Self {
            b1_0,
            b2_0,
            d1,
            d2,
            k,
            s_h,
        };
        let ratio = params.ratio();
        if !(S::one() - s_h < ratio && ratio < S::one()) {
            return Err(Error::BistabilityCondition {
                ratio: ratio.as_f64(),
                s_h: s_h.as_f64(),
            });
        }
        Ok(params)
    }

    /// Normalized parameter set used for the reduced-model experiments:
    /// `b1_0 = 1, b2_0 = 0.9, d1 = 0.27, d2 = 0.3, K = 1, s_h = 0.9`.
    pub fn table1() -> Self {
        Self::new(
            S::one(),
            S::lit(0.9),
            S::lit(0.27),
            S::lit(0.3),
            S::one(),
            S::lit(0.9),
        )
        .expect("reference parameters are valid")
    }

    pub fn b1_0(&self) -> S {
        self.b1_0
    }
    pub fn b2_0(&self) -> S {
        self.b2_0
    }
    pub fn d1(&self) -> S {
        self.d1
    }
    pub fn d2(&self) -> S {
        self.d2
    }
    pub fn k(&self) -> S {
        self.k
    }
    pub fn s_h(&self) -> S {
        self.s_h
    }

    /// `d1 b2_0 / (d2 b1_0)`.
    pub fn ratio(&self) -> S {
        self.d1 * self.b2_0 / (self.d2 * self.b1_0)
    }

    /// Invasion threshold: the interior root of `f`.
    pub fn theta(&self) -> S {
        (S::one() - self.ratio()) / self.s_h
    }

    /// Interior critical point of `f/g` on `(0, theta)`.
    pub fn p_star(&self) -> S {
        (S::one() - self.ratio().sqrt()) / self.s_h
    }

    // f = p(1-p) N / D, g = E / (K D) with
    //   N = d1 b2_0 - d2 b1_0 (1 - s_h p)
    //   E = b1_0 (1-p)(1 - s_h p)
    //   D = E + b2_0 p
    #[inline]
    fn parts(&self, p: S) -> (S, S, S) {
        let one = S::one();
        let num = self.d1 * self.b2_0 - self.d2 * self.b1_0 * (one - self.s_h * p);
        let wild = self.b1_0 * (one - p) * (one - self.s_h * p);
        (num, wild, wild + self.b2_0 * p)
    }

    /// Drift `f(p)`. Meaningful on `[0, 1]`; see [`f_reduced`] for the
    /// checked variant.
    #[inline]
    pub fn f(&self, p: S) -> S {
        let (num, _, den) = self.parts(p);
        p * (S::one() - p) * num / den
    }

    /// Control gain `g(p)`.
    #[inline]
    pub fn g(&self, p: S) -> S {
        let (_, wild, den) = self.parts(p);
        wild / (self.k * den)
    }

    #[inline]
    pub fn f_prime(&self, p: S) -> S {
        let one = S::one();
        let two = S::lit(2.0);
        let (num, _, den) = self.parts(p);
        let num_p = self.d2 * self.b1_0 * self.s_h;
        let den_p = self.wild_prime(p) + self.b2_0;
        let a = p * (one - p);
        let a_p = one - two * p;
        (a_p * num + a * num_p) / den - a * num * den_p / (den * den)
    }

    #[inline]
    pub fn g_prime(&self, p: S) -> S {
        let (_, wild, den) = self.parts(p);
        let wild_p = self.wild_prime(p);
        let den_p = wild_p + self.b2_0;
        (wild_p * den - wild * den_p) / (self.k * den * den)
    }

    #[inline]
    fn wild_prime(&self, p: S) -> S {
        let one = S::one();
        -self.b1_0 * ((one - self.s_h * p) + self.s_h * (one - p))
    }

    /// `-f(p)/g(p)`: the constant release rate that holds `p` fixed.
    pub fn holding_rate(&self, p: S) -> S {
        -self.f(p) / self.g(p)
    }
}

/// Checked drift `f(p)`.
pub fn f_reduced<S: Real>(p: S, params: &ReducedParams<S>) -> Result<S> {
    check_proportion(p)?;
    Ok(params.f(p))
}

/// Checked control gain `g(p)`.
pub fn g_reduced<S: Real>(p: S, params: &ReducedParams<S>) -> Result<S> {
    check_proportion(p)?;
    Ok(params.g(p))
}

pub fn theta<S: Real>(params: &ReducedParams<S>) -> S {
    params.theta()
}

pub fn p_star<S: Real>(params: &ReducedParams<S>) -> S {
    params.p_star()
}

/// State of the reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState<S> {
    p: S,
}

impl<S: Real> ReducedState<S> {
    pub fn new(p: S) -> Result<Self> {
        check_proportion(p)?;
        Ok(Self { p })
    }

    pub fn p(&self) -> S {
        self.p
    }
}

/// Parameters of the two-species model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFullParams<S>", bound(deserialize = "S: Real + Deserialize<'de>"))]
pub struct FullParams<S> {
    b1: S,
    b2: S,
    d1: S,
    d2: S,
    k: S,
    s_h: S,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFullParams<S> {
    b1: S,
    b2: S,
    d1: S,
    d2: S,
    k: S,
    s_h: S,
}

impl<S: Real> TryFrom<RawFullParams<S>> for FullParams<S> {
    type Error = Error;

    fn try_from(r: RawFullParams<S>) -> Result<Self> {
        Self::new(r.b1, r.b2, r.d1, r.d2, r.k, r.s_h)
    }
}

impl<S: Real> FullParams<S> {
    pub fn new(b1: S, b2: S, d1: S, d2: S, k: S, s_h: S) -> Result<Self> {
        positive("b1", b1)?;
        positive("b2", b2)?;
        positive("d1", d1)?;
        positive("d2", d2)?;
        positive("K", k)?;
        unit_interval("s_h", s_h)?;
        if b1 <= d1 {
            return Err(Error::InvalidParameters(format!(
                "wild birth rate b1 = {b1} must exceed death rate d1 = {d1}"
            )));
        }
        if b2 <= d2 {
            return Err(Error::InvalidParameters(format!(
                "infected birth rate b2 = {b2} must exceed death rate d2 = {d2}"
            )));
        }
        Ok(Self {
            b1,
            b2,
            d1,
            d2,
            k,
            s_h,
        })
    }

    /// Field parameters for a 74 ha island at 69 mosquitoes/ha
    /// (`K` derived from the density, see [`carrying_capacity_from_density`]).
    pub fn table2() -> Self {
        let b1 = S::lit(11.2);
        let d1 = S::lit(0.04);
        let k = carrying_capacity_from_density(S::lit(74.0), S::lit(69.0), d1, b1)
            .expect("reference parameters are valid");
        Self::new(b1, S::lit(10.1), d1, S::lit(0.044), k, S::lit(0.9))
            .expect("reference parameters are valid")
    }

    pub fn b1(&self) -> S {
        self.b1
    }
    pub fn b2(&self) -> S {
        self.b2
    }
    pub fn d1(&self) -> S {
        self.d1
    }
    pub fn d2(&self) -> S {
        self.d2
    }
    pub fn k(&self) -> S {
        self.k
    }
    pub fn s_h(&self) -> S {
        self.s_h
    }

    /// Same parameters with both birth rates replaced.
    pub fn with_birth_rates(&self, b1: S, b2: S) -> Result<Self> {
        Self::new(b1, b2, self.d1, self.d2, self.k, self.s_h)
    }

    /// Wild-only equilibrium population `K (1 - d1/b1)`.
    pub fn n1_star(&self) -> S {
        self.k * (S::one() - self.d1 / self.b1)
    }

    /// Infected-only equilibrium population `K (1 - d2/b2)`.
    pub fn n2_star(&self) -> S {
        self.k * (S::one() - self.d2 / self.b2)
    }

    pub fn wild_equilibrium(&self) -> FullState<S> {
        FullState {
            n1: self.n1_star(),
            n2: S::zero(),
        }
    }

    pub fn infected_equilibrium(&self) -> FullState<S> {
        FullState {
            n1: S::zero(),
            n2: self.n2_star(),
        }
    }

    /// Vector field. The proportion `n2/(n1+n2)` is taken as zero on the
    /// extinct state, where the `n1` equation vanishes anyway.
    #[inline]
    pub fn rhs(&self, n1: S, n2: S, u: S) -> (S, S) {
        let one = S::one();
        let total = n1 + n2;
        let share = if total > S::zero() {
            n2 / total
        } else {
            S::zero()
        };
        let logistic = one - total / self.k;
        let dn1 = self.b1 * n1 * (one - self.s_h * share) * logistic - self.d1 * n1;
        let dn2 = self.b2 * n2 * logistic - self.d2 * n2 + u;
        (dn1, dn2)
    }

    /// Jacobian of [`rhs`](Self::rhs) with respect to `(n1, n2)`, row-major.
    #[inline]
    pub fn jacobian(&self, n1: S, n2: S) -> [[S; 2]; 2] {
        let one = S::one();
        let total = n1 + n2;
        let (share, dshare_dn1, dshare_dn2) = if total > S::zero() {
            let t2 = total * total;
            (n2 / total, -n2 / t2, n1 / t2)
        } else {
            (S::zero(), S::zero(), S::zero())
        };
        let logistic = one - total / self.k;
        let ci = one - self.s_h * share;
        let inv_k = one / self.k;
        let a11 = self.b1 * ci * logistic - self.b1 * n1 * self.s_h * dshare_dn1 * logistic
            - self.b1 * n1 * ci * inv_k
            - self.d1;
        let a12 = -self.b1 * n1 * self.s_h * dshare_dn2 * logistic - self.b1 * n1 * ci * inv_k;
        let a21 = -self.b2 * n2 * inv_k;
        let a22 = self.b2 * logistic - self.b2 * n2 * inv_k - self.d2;
        [[a11, a12], [a21, a22]]
    }
}

/// Wild and infected populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState<S> {
    pub n1: S,
    pub n2: S,
}

impl<S: Real> FullState<S> {
    pub fn new(n1: S, n2: S) -> Result<Self> {
        for (name, v) in [("n1", n1), ("n2", n2)] {
            if !(v.is_finite() && v >= S::zero()) {
                return Err(Error::Domain {
                    quantity: name,
                    value: v.as_f64(),
                    domain: "[0, inf)",
                });
            }
        }
        Ok(Self { n1, n2 })
    }

    /// Infected proportion, `None` on the extinct state.
    pub fn proportion(&self) -> Option<S> {
        let total = self.n1 + self.n2;
        (total > S::zero()).then(|| self.n2 / total)
    }
}

/// Checked vector field of the full model.
pub fn full_rhs<S: Real>(state: FullState<S>, u: S, params: &FullParams<S>) -> Result<FullState<S>> {
    let state = FullState::new(state.n1, state.n2)?;
    if !(u.is_finite() && u >= S::zero()) {
        return Err(Error::Domain {
            quantity: "release rate",
            value: u.as_f64(),
            domain: "[0, inf)",
        });
    }
    let (n1, n2) = params.rhs(state.n1, state.n2, u);
    Ok(FullState { n1, n2 })
}

/// Carrying capacity that puts the wild equilibrium at `area * density`.
pub fn carrying_capacity_from_density<S: Real>(area: S, density: S, d1: S, b1: S) -> Result<S> {
    positive("area", area)?;
    positive("density", density)?;
    positive("b1", b1)?;
    if !(d1.is_finite() && d1 >= S::zero()) {
        return Err(Error::InvalidParameters(format!(
            "d1 must be finite and non-negative, got {d1}"
        )));
    }
    if b1 <= d1 {
        return Err(Error::InvalidParameters(format!(
            "b1 = {b1} must exceed d1 = {d1}"
        )));
    }
    Ok(area * density / (S::one() - d1 / b1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> ReducedParams<f64> {
        ReducedParams::table1()
    }

    #[test]
    fn f_vanishes_at_the_three_roots() {
        let p = table1();
        assert_eq!(p.f(0.0), 0.0);
        assert_eq!(p.f(1.0), 0.0);
        // theta = (1 - 0.27*0.9/0.3)/0.9 = 0.19/0.9
        assert_relative_eq!(p.theta(), 0.19 / 0.9, epsilon = 1e-15);
        assert!(p.f(p.theta()).abs() < 1e-12);
    }

    #[test]
    fn g_boundary_values() {
        let p = table1();
        assert_eq!(p.g(1.0), 0.0);
        assert_relative_eq!(p.g(0.0), 1.0, epsilon = 1e-15);
        let scaled = ReducedParams::new(1.0, 0.9, 0.27, 0.3, 4.0, 0.9).unwrap();
        assert_relative_eq!(scaled.g(0.0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn p_star_closed_form() {
        let p = table1();
        // sqrt(0.81) = 0.9, so p* = 0.1/0.9
        assert_relative_eq!(p.p_star(), 0.1 / 0.9, epsilon = 1e-14);
        assert!(p.p_star() < p.theta());
    }

    #[test]
    fn holding_rate_is_stationary_at_p_star() {
        let p = table1();
        let h = 1e-5;
        let ps = p.p_star();
        let slope = (p.holding_rate(ps + h) - p.holding_rate(ps - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-8, "slope {slope}");
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        let p = table1();
        let h = 1e-6;
        for i in 1..50 {
            let x = i as f64 / 50.0;
            let fd_f = (p.f(x + h) - p.f(x - h)) / (2.0 * h);
            let fd_g = (p.g(x + h) - p.g(x - h)) / (2.0 * h);
            assert_relative_eq!(p.f_prime(x), fd_f, epsilon = 1e-8);
            assert_relative_eq!(p.g_prime(x), fd_g, epsilon = 1e-8);
        }
    }

    #[test]
    fn bistability_condition_is_enforced() {
        // s_h = 0.1 makes 1 - s_h = 0.9 > ratio 0.81
        let err = ReducedParams::new(1.0, 0.9, 0.27, 0.3, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::BistabilityCondition { .. }));
        // ratio above one
        let err = ReducedParams::new(1.0, 0.9, 0.4, 0.3, 1.0, 0.9).unwrap_err();
        assert!(matches!(err, Error::BistabilityCondition { .. }));
        assert!(ReducedParams::new(1.0, 0.9, 0.27, 0.3, -1.0, 0.9).is_err());
        assert!(ReducedParams::new(1.0, 0.9, 0.27, 0.3, 1.0, 1.5).is_err());
    }

    #[test]
    fn theta_tends_to_zero_as_ratio_tends_to_one() {
        let near = ReducedParams::new(1.0, 1.0, 0.3 * (1.0 - 1e-9), 0.3, 1.0, 0.9).unwrap();
        assert!(near.theta() > 0.0 && near.theta() < 1e-8);
    }

    #[test]
    fn checked_evaluations_reject_out_of_range_proportions() {
        let p = table1();
        assert!(f_reduced(-0.1, &p).is_err());
        assert!(g_reduced(1.1, &p).is_err());
        assert!(f_reduced(f64::NAN, &p).is_err());
        assert_eq!(g_reduced(0.0, &p).unwrap(), 1.0);
    }

    #[test]
    fn carrying_capacity_reference() {
        let k = carrying_capacity_from_density(74.0, 69.0, 0.04, 11.2).unwrap();
        assert_relative_eq!(k, 5124.3011, epsilon = 1e-4);
        let full = FullParams::<f64>::table2();
        assert_relative_eq!(full.n1_star(), 5106.0, epsilon = 1e-9);
        assert_eq!(carrying_capacity_from_density(74.0, 69.0, 0.0, 11.2).unwrap(), 74.0 * 69.0);
        assert!(carrying_capacity_from_density(74.0, 69.0, 12.0, 11.2).is_err());
    }

    #[test]
    fn full_equilibria() {
        let params = FullParams::<f64>::table2();
        for s in [params.wild_equilibrium(), params.infected_equilibrium()] {
            let d = full_rhs(s, 0.0, &params).unwrap();
            assert!(d.n1.hypot(d.n2) < 1e-9 * params.k());
        }
        let zero = full_rhs(FullState::new(0.0, 0.0).unwrap(), 0.0, &params).unwrap();
        assert_eq!((zero.n1, zero.n2), (0.0, 0.0));
        assert!(full_rhs(FullState { n1: -1.0, n2: 0.0 }, 0.0, &params).is_err());
    }

    #[test]
    fn full_jacobian_matches_central_differences() {
        let params = FullParams::<f64>::table2();
        for &(n1, n2) in &[(5106.0, 0.0), (3000.0, 1500.0), (10.0, 5000.0), (200.0, 7.0)] {
            let jac = params.jacobian(n1, n2);
            let h = 1e-4;
            let (a, b) = params.rhs(n1 + h, n2, 3.0);
            let (c, d) = params.rhs(n1 - h, n2, 3.0);
            let (e, f) = params.rhs(n1, n2 + h, 3.0);
            let (g, k) = params.rhs(n1, n2 - h, 3.0);
            let fd = [
                [(a - c) / (2.0 * h), (e - g) / (2.0 * h)],
                [(b - d) / (2.0 * h), (f - k) / (2.0 * h)],
            ];
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(jac[i][j], fd[i][j], epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let p = ReducedParams::<f32>::table1();
        assert!((p.theta() - 0.211_111).abs() < 1e-6);
        assert!(p.f(p.theta()).abs() < 1e-6);
    }

    #[test]
    fn params_deserialize_through_validation() {
        let ok: ReducedParams<f64> = serde_json::from_str(
            r#"{"b1_0":1,"b2_0":0.9,"d1":0.27,"d2":0.3,"k":1,"s_h":0.9}"#,
        )
        .unwrap();
        assert_eq!(ok, ReducedParams::table1());
        let bad = serde_json::from_str::<ReducedParams<f64>>(
            r#"{"b1_0":1,"b2_0":0.9,"d1":0.27,"d2":0.3,"k":1,"s_h":0.05}"#,
        );
        assert!(bad.is_err());
    }
}

//! Projected gradient descent on a box with Armijo backtracking.
//!
//! Objectives may be a pointwise maximum of smooth pieces (the exact
//! terminal penalty of the full model is one). Each trial step of length
//! `t` then solves the small dual problem of
//! `min_d max_k [phi_k - f + G_k . d] + |d|^2 / (2t)` over the pieces, so
//! that near a kink the step follows it instead of bouncing off. With a
//! single piece this is the plain projected gradient step.

use crate::{Error, Real, Result};

/// Value and gradient of one smooth piece.
pub type Piece<S> = (S, Vec<S>);

/// An objective over a box `[lower, upper]`, given as `max_k phi_k(x)`.
///
/// `metric` holds the diagonal weights of the inner product the gradient is
/// taken in: the descent direction is `-g_i / metric_i`.
pub trait BoxObjective<S> {
    fn lower(&self) -> &[S];
    fn upper(&self) -> &[S];
    fn metric(&self) -> &[S];
    fn value(&mut self, x: &[S]) -> Result<S>;
    /// The objective value and its smooth pieces; smooth objectives return a
    /// single piece.
    fn value_and_pieces(&mut self, x: &[S]) -> Result<(S, Vec<Piece<S>>)>;
}

#[derive(Debug, Clone, Copy)]
pub struct PgOptions<S> {
    /// Sufficient-decrease constant.
    pub armijo_c: S,
    /// Step contraction per rejected trial.
    pub backtrack: S,
    /// First trial step.
    pub initial_step: S,
    pub max_iters: usize,
    /// Stop when the projected-gradient norm is below `tol * (1 + |f|)`.
    pub tol: S,
    pub max_backtracks: usize,
    /// Start each line search from a Barzilai–Borwein step instead of
    /// `initial_step`.
    pub spectral: bool,
}

impl<S: Real> Default for PgOptions<S> {
    fn default() -> Self {
        Self {
            armijo_c: S::lit(1e-4),
            backtrack: S::lit(0.5),
            initial_step: S::one(),
            max_iters: 5000,
            tol: S::lit(1e-6),
            max_backtracks: 60,
            spectral: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Stationary,
    MaxIterations,
    /// Backtracking found no acceptable step.
    LineSearchStalled,
    /// No trial step promised a decrease larger than the rounding noise of
    /// the objective.
    NoiseFloor,
}

#[derive(Debug, Clone)]
pub struct PgOutcome<S> {
    pub x: Vec<S>,
    pub value: S,
    pub iterations: usize,
    pub residual: S,
    pub termination: Termination,
    /// Objective after each accepted iteration, starting with the initial
    /// point.
    pub history: Vec<S>,
}

impl<S> PgOutcome<S> {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Stationary | Termination::NoiseFloor)
    }
}

/// Relative size of decreases treated as rounding noise.
const NOISE: f64 = 1e-9;

fn project<S: Real>(x: S, lo: S, hi: S) -> S {
    x.max(lo).min(hi)
}

fn residual<S: Real>(x: &[S], g: &[S], lo: &[S], hi: &[S], w: &[S]) -> S {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .zip(w)
        .map(|(((&xi, &gi), (&l, &h)), &wi)| {
            let d = xi - project(xi - gi / wi, l, h);
            wi * d * d
        })
        .sum::<S>()
        .sqrt()
}

/// Solves `a z = b` by Gaussian elimination with partial pivoting; `None`
/// when singular.
fn solve_dense<S: Real>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Option<Vec<S>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(S::zero(), |m, v| m.max(v.abs()));
    let tiny = scale * S::epsilon() * S::lit(1e3);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).expect("finite"))?;
        if a[p][c].abs() <= tiny {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] = a[r][k] - f * a[c][k];
            }
            b[r] = b[r] - f * b[c];
        }
    }
    let mut z = vec![S::zero(); n];
    for r in (0..n).rev() {
        let s = (r + 1..n).fold(b[r], |acc, k| acc - a[r][k] * z[k]);
        z[r] = s / a[r][r];
    }
    Some(z)
}

/// Minimizes `(t/2) l^T G l - l^T b` over the unit simplex by enumerating
/// the faces; meant for a handful of pieces.
fn simplex_qp<S: Real>(gram: &[Vec<S>], b: &[S], t: S) -> Vec<S> {
    let k = gram.len();
    let objective = |l: &[S]| {
        let quad = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .fold(S::zero(), |acc, (i, j)| acc + l[i] * gram[i][j] * l[j]);
        S::lit(0.5) * t * quad - (0..k).fold(S::zero(), |acc, i| acc + l[i] * b[i])
    };
    let mut best = (S::infinity(), vec![S::zero(); k]);
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let m = idx.len();
        let mut a = vec![vec![S::zero(); m + 1]; m + 1];
        let mut rhs = vec![S::zero(); m + 1];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[r][c] = t * gram[i][j];
            }
            a[r][m] = S::one();
            a[m][r] = S::one();
            rhs[r] = b[i];
        }
        rhs[m] = S::one();
        let Some(z) = solve_dense(a, rhs) else { continue };
        if z[..m].iter().any(|&l| !(l >= -S::epsilon() * S::lit(1e3))) {
            continue;
        }
        let mut lambda = vec![S::zero(); k];
        for (r, &i) in idx.iter().enumerate() {
            lambda[i] = z[r].max(S::zero());
        }
        let total: S = lambda.iter().copied().sum();
        lambda.iter_mut().for_each(|l| *l = *l / total);
        let value = objective(&lambda);
        if value < best.0 {
            best = (value, lambda);
        }
    }
    best.1
}

/// Combined gradient `sum_k l_k G_k` for a trial step of length `t`.
fn combined_gradient<S: Real>(x: &[S], f: S, pieces: &[Piece<S>], t: S, lo: &[S], hi: &[S], w: &[S]) -> Vec<S> {
    if pieces.len() == 1 {
        return pieces[0].1.clone();
    }
    let b: Vec<S> = pieces.iter().map(|p| p.0 - f).collect();
    let blocked = |i: usize, g: &[S]| (x[i] <= lo[i] && g[i] > S::zero()) || (x[i] >= hi[i] && g[i] < S::zero());
    let mut combined: Option<Vec<S>> = None;
    // coordinates the projection clips stay out of the norm; iterate until
    // the clipped set is consistent with the combination
    for _ in 0..20 {
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| match &combined {
                Some(g) => !blocked(i, g),
                None => !pieces.iter().all(|p| blocked(i, &p.1)),
            })
            .collect();
        let gram: Vec<Vec<S>> = pieces
            .iter()
            .map(|a| {
                pieces
                    .iter()
                    .map(|c| free.iter().fold(S::zero(), |acc, &i| acc + a.1[i] * c.1[i] / w[i]))
                    .collect()
            })
            .collect();
        let lambda = simplex_qp(&gram, &b, t);
        let next: Vec<S> = (0..x.len())
            .map(|i| pieces.iter().zip(&lambda).fold(S::zero(), |acc, (p, &l)| acc + l * p.1[i]))
            .collect();
        let settled = combined
            .as_ref()
            .is_some_and(|g| (0..x.len()).all(|i| blocked(i, g) == blocked(i, &next)));
        combined = Some(next);
        if settled {
            break;
        }
    }
    combined.expect("at least one pass")
}

/// Armijo backtracking along the projection arc; returns the accepted point
/// and step.
#[allow(clippy::too_many_arguments)]
fn line_search<S: Real, P: BoxObjective<S>>(
    problem: &mut P,
    x: &[S],
    f: S,
    pieces: &[Piece<S>],
    step: S,
    lo: &[S],
    hi: &[S],
    w: &[S],
    opts: &PgOptions<S>,
) -> Result<Search<S>> {
    let mut t = step;
    let mut best = S::zero();
    for _ in 0..opts.max_backtracks {
        let g = combined_gradient(x, f, pieces, t, lo, hi, w);
        let trial: Vec<S> = (0..x.len())
            .map(|i| project(x[i] - t * g[i] / w[i], lo[i], hi[i]))
            .collect();
        // decrease predicted by the linearized max of the pieces
        let predicted = pieces
            .iter()
            .map(|p| p.0 - f + (0..x.len()).fold(S::zero(), |acc, i| acc + p.1[i] * (trial[i] - x[i])))
            .fold(S::neg_infinity(), S::max);
        if predicted < S::zero() {
            best = best.min(predicted);
            let f_trial = problem.value(&trial)?;
            if f_trial.is_finite() && f_trial <= f + opts.armijo_c * predicted {
                return Ok(Search::Accepted(trial, t));
            }
        }
        t = t * opts.backtrack;
    }
    Ok(Search::Failed { best_predicted: best })
}

enum Search<S> {
    Accepted(Vec<S>, S),
    Failed { best_predicted: S },
}

pub fn minimize<S: Real, P: BoxObjective<S>>(problem: &mut P, x0: &[S], opts: &PgOptions<S>) -> Result<PgOutcome<S>> {
    let lo = problem.lower().to_vec();
    let hi = problem.upper().to_vec();
    let w = problem.metric().to_vec();
    if x0.len() != lo.len() || hi.len() != lo.len() || w.len() != lo.len() {
        return Err(Error::Contract("optimizer dimensions disagree".into()));
    }
    if w.iter().any(|&wi| !(wi > S::zero())) {
        return Err(Error::Contract("metric weights must be positive".into()));
    }
    let mut x: Vec<S> = x0
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(&v, (&l, &h))| project(v, l, h))
        .collect();
    let (mut f, mut pieces) = problem.value_and_pieces(&x)?;
    // stationarity is measured with the unit-step combination
    let mut g = combined_gradient(&x, f, &pieces, S::one(), &lo, &hi, &w);
    let mut history = vec![f];
    let mut step = opts.initial_step;
    let max_step = S::lit(1e12);
    let min_step = S::lit(1e-14);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut res = residual(&x, &g, &lo, &hi, &w);

    while iterations < opts.max_iters {
        if res <= opts.tol * (S::one() + f.abs()) {
            termination = Termination::Stationary;
            break;
        }
        let mut found = line_search(problem, &x, f, &pieces, step, &lo, &hi, &w, opts)?;
        if matches!(found, Search::Failed { .. }) && step != opts.initial_step {
            // spectral steps go wrong when the gradient jumps across a kink
            found = line_search(problem, &x, f, &pieces, opts.initial_step, &lo, &hi, &w, opts)?;
        }
        let (x_new, t) = match found {
            Search::Accepted(x_new, t) => (x_new, t),
            Search::Failed { best_predicted } => {
                termination = if -best_predicted <= S::lit(NOISE) * (S::one() + f.abs()) {
                    Termination::NoiseFloor
                } else {
                    Termination::LineSearchStalled
                };
                break;
            }
        };
        let (f_new, pieces_new) = problem.value_and_pieces(&x_new)?;
        let g_new = combined_gradient(&x_new, f_new, &pieces_new, S::one(), &lo, &hi, &w);
        iterations += 1;
        step = if opts.spectral {
            let mut ss = S::zero();
            let mut sy = S::zero();
            for i in 0..x.len() {
                let s = x_new[i] - x[i];
                ss = ss + w[i] * s * s;
                sy = sy + s * (g_new[i] - g[i]);
            }
            if sy > S::zero() {
                (ss / sy).max(min_step).min(max_step)
            } else {
                // non-convex curvature: retry from a longer step
                (t * S::lit(4.0)).min(max_step)
            }
        } else {
            opts.initial_step
        };
        x = x_new;
        f = f_new;
        g = g_new;
        pieces = pieces_new;
        history.push(f);
        res = residual(&x, &g, &lo, &hi, &w);
    }
    if termination != Termination::Stationary && res <= opts.tol * (S::one() + f.abs()) {
        termination = Termination::Stationary;
    }
    Ok(PgOutcome {
        x,
        value: f,
        iterations,
        residual: res,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: Vec<f64>,
        scale: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
        w: Vec<f64>,
    }

    impl BoxObjective<f64> for Quadratic {
        fn lower(&self) -> &[f64] {
            &self.lo
        }
        fn upper(&self) -> &[f64] {
            &self.hi
        }
        fn metric(&self) -> &[f64] {
            &self.w
        }
        fn value(&mut self, x: &[f64]) -> Result<f64> {
            Ok(x.iter()
                .zip(&self.center)
                .zip(&self.scale)
                .map(|((x, c), s)| 0.5 * s * (x - c).powi(2))
                .sum())
        }
        fn value_and_pieces(&mut self, x: &[f64]) -> Result<(f64, Vec<Piece<f64>>)> {
            let g = x
                .iter()
                .zip(&self.center)
                .zip(&self.scale)
                .map(|((x, c), s)| s * (x - c))
                .collect();
            let f = self.value(x)?;
            Ok((f, vec![(f, g)]))
        }
    }

    fn problem() -> Quadratic {
        Quadratic {
            center: vec![-1.0, 0.5, 3.0, 0.25],
            scale: vec![1.0, 100.0, 0.01, 10.0],
            lo: vec![0.0; 4],
            hi: vec![1.0; 4],
            w: vec![1.0; 4],
        }
    }

    #[test]
    fn finds_the_box_projection_of_the_center() {
        for spectral in [false, true] {
            let opts = PgOptions {
                spectral,
                max_iters: 20_000,
                ..PgOptions::default()
            };
            let out = minimize(&mut problem(), &[0.5; 4], &opts).unwrap();
            assert!(out.converged(), "{:?}", out.termination);
            let expected = [0.0, 0.5, 1.0, 0.25];
            for (a, b) in out.x.iter().zip(expected) {
                assert!((a - b).abs() < 1e-5, "{:?}", out.x);
            }
            assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn iterates_stay_in_the_box() {
        let out = minimize(&mut problem(), &[5.0, -3.0, 0.2, 0.9], &PgOptions::default()).unwrap();
        assert!(out.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(minimize(&mut problem(), &[0.5; 3], &PgOptions::default()).is_err());
    }

    // max(x + 10y, x - 10y) + |(x, y)|^2 / 2 on x >= -0.5
    struct Kink {
        lo: Vec<f64>,
        hi: Vec<f64>,
        w: Vec<f64>,
    }

    impl BoxObjective<f64> for Kink {
        fn lower(&self) -> &[f64] {
            &self.lo
        }
        fn upper(&self) -> &[f64] {
            &self.hi
        }
        fn metric(&self) -> &[f64] {
            &self.w
        }
        fn value(&mut self, x: &[f64]) -> Result<f64> {
            Ok(self.value_and_pieces(x)?.0)
        }
        fn value_and_pieces(&mut self, x: &[f64]) -> Result<(f64, Vec<Piece<f64>>)> {
            let q = 0.5 * (x[0] * x[0] + x[1] * x[1]);
            let a = (x[0] + 10.0 * x[1] + q, vec![1.0 + x[0], 10.0 + x[1]]);
            let b = (x[0] - 10.0 * x[1] + q, vec![1.0 + x[0], -10.0 + x[1]]);
            Ok((a.0.max(b.0), vec![a, b]))
        }
    }

    #[test]
    fn slides_along_a_kink() {
        let mut k = Kink {
            lo: vec![-0.5, -5.0],
            hi: vec![5.0, 5.0],
            w: vec![1.0, 1.0],
        };
        let out = minimize(&mut k, &[3.0, 2.0], &PgOptions::default()).unwrap();
        assert!(out.converged(), "{:?} {:?}", out.termination, out.x);
        assert!((out.x[0] + 0.5).abs() < 1e-6 && out.x[1].abs() < 1e-6, "{:?}", out.x);
    }

    #[test]
    fn min_norm_point_of_a_segment() {
        // points (1, 0) and (0, 1): minimum norm at the midpoint
        let gram = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let l: Vec<f64> = simplex_qp(&gram, &[0.0, 0.0], 1.0);
        assert!((l[0] - 0.5).abs() < 1e-12 && (l[1] - 0.5).abs() < 1e-12);
        // (1, 0) and (2, 0): the nearer vertex
        let gram = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let l: Vec<f64> = simplex_qp(&gram, &[0.0, 0.0], 1.0);
        assert!((l[0] - 1.0).abs() < 1e-12);
        // a piece far below the max drops out
        let gram = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = simplex_qp(&gram, &[0.0, -10.0], 1.0);
        assert_eq!(l, vec![1.0, 0.0]);
    }
}

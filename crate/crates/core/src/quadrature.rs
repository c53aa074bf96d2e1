#![allow(clippy::excessive_precision)]

//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::{Error, Real, Result};

// Kronrod abscissae on [0, 1]; odd indices are the Gauss-7 nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Integral estimate with an error bound.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult<S> {
    pub value: S,
    pub error: S,
    pub intervals: usize,
}

/// One 15-point Kronrod evaluation on `[a, b]` with the embedded
/// Gauss-7 difference as error estimate.
pub fn gauss_kronrod_15<S, F>(f: &F, a: S, b: S) -> (S, S)
where
    S: Real,
    F: Fn(S) -> S,
{
    let half = S::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let f_center = f(center);
    let mut kronrod = f_center * S::lit(WGK[7]);
    let mut gauss = f_center * S::lit(WG[3]);
    for j in 0..7 {
        let x = half_len * S::lit(XGK[j]);
        let sum = f(center - x) + f(center + x);
        kronrod = kronrod + S::lit(WGK[j]) * sum;
        if j % 2 == 1 {
            gauss = gauss + S::lit(WG[j / 2]) * sum;
        }
    }
    (kronrod * half_len, ((kronrod - gauss) * half_len).abs())
}

/// Integrates `f` over `[a, b]` by repeatedly bisecting the subinterval with
/// the largest error estimate until the total estimate falls below
/// `rel_tol * |value|` (or an absolute floor for vanishing integrals).
pub fn integrate_adaptive<S, F>(f: F, a: S, b: S, rel_tol: S, max_intervals: usize) -> Result<QuadratureResult<S>>
where
    S: Real,
    F: Fn(S) -> S,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("integration bounds must be finite".into()));
    }
    if a == b {
        return Ok(QuadratureResult {
            value: S::zero(),
            error: S::zero(),
            intervals: 0,
        });
    }
    let abs_floor = S::epsilon() * S::lit(50.0);
    let mut pieces = vec![{
        let (v, e) = gauss_kronrod_15(&f, a, b);
        (a, b, v, e)
    }];
    loop {
        let value: S = pieces.iter().map(|p| p.2).sum();
        let error: S = pieces.iter().map(|p| p.3).sum();
        if !value.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if error <= rel_tol * value.abs() || error <= abs_floor * (b - a).abs() {
            return Ok(QuadratureResult {
                value,
                error,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= max_intervals {
            return Err(Error::Quadrature(format!(
                "no convergence after {max_intervals} subintervals (estimate {value}, error {error})"
            )));
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, S::neg_infinity()), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = S::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::Quadrature("subinterval below machine resolution".into()));
        }
        for (x0, x1) in [(lo, mid), (mid, hi)] {
            let (v, e) = gauss_kronrod_15(&f, x0, x1);
            pieces.push((x0, x1, v, e));
        }
    }
}

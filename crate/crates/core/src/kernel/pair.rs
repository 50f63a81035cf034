use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::density::DensitySpec;
use crate::kernel::interval::{log_add_exp, log_sub_exp, Interval, Relation};
use crate::kernel::quadrature::gl20_integrate;
use crate::kernel::C0;

const SERIES_LIMIT: f64 = 0.5;
const THIN_LIMIT: f64 = 1e-3;

/// `I` of the uniform probability measures on two disjoint intervals.
///
/// Inputs are centers and natural-log half-lengths; `ln_h = -inf` is a point
/// mass. Requires distinct centers and `h1 + h2 <= |c1 - c2|` (touching is
/// allowed).
pub(crate) fn uniform_pair(c1: f64, ln_h1: f64, c2: f64, ln_h2: f64) -> f64 {
    let d = (c1 - c2).abs();
    let ln_d = d.ln();
    let (ln_big, ln_small) = if ln_h1 >= ln_h2 { (ln_h1, ln_h2) } else { (ln_h2, ln_h1) };
    let ln_s = log_add_exp(ln_big, ln_small);
    let ln_t = log_sub_exp(ln_big, ln_small);
    let sigma = (ln_s - ln_d).exp().min(1.0);
    let tau = (ln_t - ln_d).exp().min(sigma);

    if sigma <= SERIES_LIMIT {
        return -ln_d + moment_series(sigma, tau);
    }
    if sigma - tau >= THIN_LIMIT {
        return -ln_d + corner_formula(sigma, tau);
    }
    let big = (ln_big - ln_d).exp();
    -ln_d + thin_beside_big(sigma, tau, big, ln_small - ln_d, ln_small - ln_big)
}

/// `sum_j D_{j+1} / ((2j+1)(2j)(j+1))` with `D_1 = 1`, `D_{k+1} = s^2 D_k + t^{2k}`.
fn moment_series(sigma: f64, tau: f64) -> f64 {
    let s2 = sigma * sigma;
    let t2 = tau * tau;
    let mut d = 1.0;
    let mut t_pow = 1.0;
    let mut acc = 0.0;
    for j in 1..400 {
        t_pow *= t2;
        d = s2 * d + t_pow;
        let jf = j as f64;
        let term = d / ((2.0 * jf + 1.0) * (2.0 * jf) * (jf + 1.0));
        acc += term;
        if term <= 1e-18 * acc {
            break;
        }
    }
    acc
}

fn corner_f(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        0.25 * x * x * (2.0 * x.ln() - 3.0)
    }
}

/// Corner combination of `x^2 (2 log x - 3) / 4`, distances scaled by `d`.
fn corner_formula(sigma: f64, tau: f64) -> f64 {
    let gap = (1.0 - sigma).max(0.0);
    let num = corner_f(gap) + corner_f(1.0 + sigma) - corner_f(1.0 - tau) - corner_f(1.0 + tau);
    -num / ((sigma - tau) * (sigma + tau))
}

fn psi(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln() - x
    }
}

/// `∫_0^1 x log(r + x) dx`.
fn x_log_shift(r: f64) -> f64 {
    if r > 1.0 {
        return gl20_integrate(|x| x * (r + x).ln(), 0.0, 1.0);
    }
    let a = |w: f64| {
        if w == 0.0 {
            0.0
        } else {
            0.5 * w * w * w.ln() - 0.25 * w * w
        }
    };
    let b = |w: f64| if w == 0.0 { 0.0 } else { w * w.ln() - w };
    a(1.0 + r) - a(r) - r * (b(1.0 + r) - b(r))
}

/// Thin interval beside a comparable one, in units of the center distance.
///
/// The difference of the two uniforms has a trapezoidal law; the flat part
/// integrates in closed form and the thin ramps are integrated in a
/// stretched variable.
fn thin_beside_big(sigma: f64, tau: f64, big: f64, ln_small: f64, ln_ratio: f64) -> f64 {
    let small = ln_small.exp();
    let gap = (1.0 - sigma).max(0.0);
    let flat = -(psi(1.0 + tau) - psi(gap + 2.0 * small)) / (2.0 * big);
    if small < f64::MIN_POSITIVE || ln_ratio < -600.0 {
        return flat;
    }
    let outer = gl20_integrate(|x| x * (1.0 + sigma - 2.0 * small * x).ln(), 0.0, 1.0);
    let r = gap / (2.0 * small);
    let inner = 0.5 * (ln_small + LN_2) + x_log_shift(r);
    flat - ln_ratio.exp() * (outer + inner)
}

/// Exact energy of the normalized uniform measure on an interval: `-loglen + C0`.
pub fn self_energy_uniform(a: &Interval) -> f64 {
    -a.loglen() + C0
}

fn effective(iv: &Interval) -> Interval {
    iv.materialize().map(|m| m.interval).unwrap_or(*iv)
}

/// `I(da * u_a, db * u_b)` with `u_a`, `u_b` the uniform probability measures
/// on the (clipped) intervals.
pub fn pair_interaction_closed_form(a: &Interval, da: &DensitySpec, b: &Interval, db: &DensitySpec) -> Result<f64> {
    let (fa, fb) = match (da.as_constant(), db.as_constant()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::invalid("density", "closed form needs constant densities")),
    };
    let ea = effective(a);
    let eb = effective(b);
    uniform_interaction(&ea, &eb, 0, 1).map(|v| fa * fb * v)
}

/// Uniform-probability interaction of two effective intervals; `first` and
/// `second` label the pair in errors.
pub(crate) fn uniform_interaction(a: &Interval, b: &Interval, first: usize, second: usize) -> Result<f64> {
    match a.relation(b) {
        Relation::Identical => Ok(self_energy_uniform(a)),
        Relation::Overlap => Err(Error::PartialOverlap { first, second }),
        Relation::Disjoint => Ok(uniform_pair(a.center(), a.ln_half(), b.center(), b.ln_half())),
    }
}

/// Point-evaluation approximation of a pair term with its certified error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarField {
    pub value: f64,
    pub bound: f64,
    pub ratio: f64,
    pub epsilon: f64,
}

/// `(l_a + l_b) / (2 |c_a - c_b|)` computed in log domain.
pub fn gap_ratio(a: &Interval, b: &Interval) -> f64 {
    let d = (a.center() - b.center()).abs();
    (log_add_exp(a.loglen(), b.loglen()) - LN_2 - d.ln()).exp()
}

pub fn farfield_interaction(a: &Interval, fa: f64, b: &Interval, fb: f64) -> Result<FarField> {
    farfield_interaction_with_sup(a, fa, b, fb, 0.0)
}

/// As [`farfield_interaction`], with `sup` an extra sup-norm entering `K`.
pub fn farfield_interaction_with_sup(a: &Interval, fa: f64, b: &Interval, fb: f64, sup: f64) -> Result<FarField> {
    let d = (a.center() - b.center()).abs();
    if d == 0.0 {
        return Err(Error::SingularPair { first: 0, second: 1 });
    }
    let ratio = gap_ratio(a, b);
    if !(ratio < 1.0) {
        return Err(Error::invalid(
            "ratio",
            format!("{ratio} must be < 1 for the far-field bound"),
        ));
    }
    let epsilon = -(-ratio).ln_1p();
    let k = fa.abs().max(fb.abs()).max(sup.abs());
    let log_term = -d.ln();
    Ok(FarField {
        value: log_term * fa * fb,
        bound: (2.0 * k * log_term + k * k) * epsilon,
        ratio,
        epsilon,
    })
}

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::kernel::density::DensitySpec;
use crate::kernel::interval::{Interval, Relation};

/// Node budget for one call to [`interaction_quadrature`].
pub const DEFAULT_BUDGET: usize = 400_000;

/// Smallest loglen the quadrature accepts; below it use the closed forms.
pub const MIN_QUADRATURE_LOGLEN: f64 = -600.0;

const TS_TMAX: f64 = 3.5;
const TS_MAX_LEVEL: u32 = 14;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

pub(crate) fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(8))
}

pub(crate) fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(20))
}

/// Integrate a smooth function over `[lo, hi]` with the 20-point rule.
pub(crate) fn gl20_integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (x, w) = gl20();
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    x.iter().zip(w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}

/// Adaptive tanh-sinh on `[lo, hi]`.
///
/// Endpoint offsets are built from stored complements so that nodes crowd
/// the ends without cancellation. Returns `Err(best)` when the level cap or
/// `budget` is hit before two successive levels agree within `tol`.
pub fn tanh_sinh(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
    budget: &mut usize,
) -> std::result::Result<f64, f64> {
    let half = 0.5 * (hi - lo);
    if half == 0.0 {
        return Ok(0.0);
    }
    let eval_pair = |t: f64, f: &mut dyn FnMut(f64) -> f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let comp = 2.0 / (1.0 + (2.0 * u).exp());
        let ch = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (ch * ch);
        let off = half * comp;
        if off <= 0.0 || w == 0.0 {
            return 0.0;
        }
        w * (f(lo + off) + f(hi - off))
    };
    let mut sum = FRAC_PI_2 * f(lo + half);
    let mut used = 1usize;
    let n0 = TS_TMAX as usize;
    for j in 1..=n0 {
        sum += eval_pair(j as f64, &mut f);
        used += 2;
    }
    let mut prev = sum * half;
    let mut h = 1.0;
    for level in 1..=TS_MAX_LEVEL {
        h *= 0.5;
        let mut t = h;
        while t <= TS_TMAX {
            sum += eval_pair(t, &mut f);
            used += 2;
            t += 2.0 * h;
        }
        let est = sum * h * half;
        if used > *budget {
            *budget = 0;
            return Err(est);
        }
        if level >= 3 && (est - prev).abs() <= tol {
            *budget -= used;
            return Ok(est);
        }
        prev = est;
    }
    *budget = budget.saturating_sub(used);
    Err(prev)
}

fn lin1(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.abs().ln() - u
    }
}

fn lin2(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        0.5 * u * u * u.abs().ln() - 0.25 * u * u
    }
}

/// `V(y) = ∫_0^1 -log|s - y| rho(s) ds` for a reference density `rho`.
pub fn reference_potential(rho: &DensitySpec, y: f64) -> f64 {
    match rho {
        DensitySpec::Constant(v) => cell_potential(0.0, 1.0, *v, 0.0, y),
        DensitySpec::Sampled(p) => p.cells().map(|c| cell_potential(c.p, c.w, c.a, c.b, y)).sum(),
    }
}

/// Potential at `y` of the density `a + b (s - p)` on `[p, p + w]`.
fn cell_potential(p: f64, w: f64, a: f64, b: f64, y: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let mid = p + 0.5 * w;
    if (y - mid).abs() > 4.0 * w {
        let (x, wt) = gl8();
        let half = 0.5 * w;
        let mut acc = 0.0;
        for (xi, wi) in x.iter().zip(wt) {
            let s = mid + half * xi;
            acc += wi * (a + b * (s - p)) * (s - y).abs().ln();
        }
        return -acc * half;
    }
    let u0 = p - y;
    let u1 = p + w - y;
    -(a - b * u0) * (lin1(u1) - lin1(u0)) - b * (lin2(u1) - lin2(u0))
}

/// Adaptive estimate of `I(mu_a, mu_b)` for general densities.
///
/// Each atom carries `d mu = rho(t) dt` on its reference interval, so a
/// constant density `v` gives mass `v`. The self case (identical intervals)
/// integrates the exact inner potential across the diagonal.
pub fn interaction_quadrature(a: &Interval, da: &DensitySpec, b: &Interval, db: &DensitySpec, tol: f64) -> Result<f64> {
    interaction_quadrature_with_budget(a, da, b, db, tol, DEFAULT_BUDGET)
}

pub fn interaction_quadrature_with_budget(
    a: &Interval,
    da: &DensitySpec,
    b: &Interval,
    db: &DensitySpec,
    tol: f64,
    budget: usize,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("{tol} must be > 0")));
    }
    da.validate()?;
    db.validate()?;
    if da.is_zero() || db.is_zero() {
        return Ok(0.0);
    }
    let ma = a
        .materialize()
        .ok_or_else(|| Error::invalid("a", "interval has no positive length inside [0, 1]"))?;
    let mb = b
        .materialize()
        .ok_or_else(|| Error::invalid("b", "interval has no positive length inside [0, 1]"))?;
    for m in [&ma, &mb] {
        if m.interval.loglen() < MIN_QUADRATURE_LOGLEN {
            return Err(Error::invalid(
                "loglen",
                format!(
                    "{} is below the quadrature floor; use the closed form",
                    m.interval.loglen()
                ),
            ));
        }
    }
    let relation = ma.interval.relation(&mb.interval);
    if relation == Relation::Overlap {
        return Err(Error::PartialOverlap { first: 0, second: 1 });
    }

    // source carries the inner potential, target is integrated over
    let swap = relation == Relation::Disjoint
        && (mb.interval.loglen(), mb.interval.center()) > (ma.interval.loglen(), ma.interval.center());
    let (src, rs, tgt, rt) = if swap { (&mb, db, &ma, da) } else { (&ma, da, &mb, db) };

    let len_s = src.hi - src.lo;
    let len_t = tgt.hi - tgt.lo;
    let shift = (tgt.lo - src.lo) / len_s;
    let ratio = len_t / len_s;

    let mut cuts = rt.breakpoints();
    if relation == Relation::Identical {
        cuts.extend(rs.breakpoints());
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
    }
    let seg_tol = tol / cuts.len() as f64;
    let mut remaining = budget;
    let mut total = -len_s.ln() * rs.mean() * rt.mean();
    let mut failed = false;
    for w in cuts.windows(2) {
        let g = |t: f64| reference_potential(rs, shift + ratio * t) * rt.eval(t);
        match tanh_sinh(g, w[0], w[1], seg_tol, &mut remaining) {
            Ok(v) => total += v,
            Err(best) => {
                total += best;
                failed = true;
                if remaining == 0 {
                    break;
                }
            }
        }
    }
    if failed {
        return Err(Error::BudgetExceeded { budget, best: total });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 2, 5, 8, 20] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let est: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert_relative_eq!(est, exact, epsilon = 1e-14);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn tanh_sinh_handles_endpoint_log() {
        let mut budget = 100_000;
        let v = tanh_sinh(|x| -x.ln(), 0.0, 1.0, 1e-13, &mut budget).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tanh_sinh_reports_budget() {
        let mut budget = 10;
        let r = tanh_sinh(|x| x.sin(), 0.0, 1.0, 1e-15, &mut budget);
        assert!(r.is_err());
    }

    #[test]
    fn unit_square_self_energy() {
        let u = Interval::unit();
        let one = DensitySpec::Constant(1.0);
        let v = interaction_quadrature(&u, &one, &u, &one, 1e-12).unwrap();
        assert_relative_eq!(v, 1.5, epsilon = 1e-10);
    }

    #[test]
    fn potential_of_unit_interval() {
        let one = DensitySpec::Constant(1.0);
        for y in [0.0, 0.1, 0.5, 0.93, 1.0, 3.0, -10.0] {
            let exact = if (0.0..=1.0).contains(&y) {
                let t: f64 = y;
                let xl = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
                1.0 - xl(t) - xl(1.0 - t)
            } else {
                let t = y.abs().max((1.0 - y).abs());
                let s = y.abs().min((1.0 - y).abs());
                -(t * t.ln() - t - s * s.ln() + s)
            };
            assert_relative_eq!(reference_potential(&one, y), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_density_gives_zero() {
        let u = Interval::unit();
        let v = interaction_quadrature(&u, &DensitySpec::Constant(0.0), &u, &DensitySpec::Constant(1.0), 1e-9).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn overlap_is_rejected() {
        let a = Interval::from_bounds(0.0, 0.6).unwrap();
        let b = Interval::from_bounds(0.4, 1.0).unwrap();
        let one = DensitySpec::Constant(1.0);
        assert!(matches!(
            interaction_quadrature(&a, &one, &b, &one, 1e-9),
            Err(Error::PartialOverlap { .. })
        ));
    }

    #[test]
    fn tiny_budget_reports_best_estimate() {
        let u = Interval::unit();
        let one = DensitySpec::Constant(1.0);
        match interaction_quadrature_with_budget(&u, &one, &u, &one, 1e-14, 30) {
            Err(Error::BudgetExceeded { budget, best }) => {
                assert_eq!(budget, 30);
                assert!((best - 1.5).abs() < 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A subinterval of `[0, 1]` stored as center and natural-log length.
///
/// Lengths such as `e^{-1000}` are representable; every energy formula in
/// this crate works from `loglen` and center distances only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    center: f64,
    loglen: f64,
}

/// Clipped geometry of an [`Interval`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Materialized {
    /// Effective interval (center and loglen of the clipped geometry).
    pub interval: Interval,
    pub lo: f64,
    pub hi: f64,
    pub clipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Identical,
    Disjoint,
    Overlap,
}

/// Slack allowed when deciding that two touching intervals do not overlap.
pub(crate) const TOUCH_SLACK: f64 = 1e-12;

impl Interval {
    /// `loglen = -inf` is accepted and denotes the point-mass limit.
    pub fn new(center: f64, loglen: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&center) {
            return Err(Error::invalid("center", format!("{center} not in [0, 1]")));
        }
        if loglen.is_nan() || loglen > 0.0 {
            return Err(Error::invalid("loglen", format!("{loglen} must be <= 0")));
        }
        Ok(Self { center, loglen })
    }

    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(
                "bounds",
                format!("[{lo}, {hi}] is not a nondegenerate subinterval of [0, 1]"),
            ));
        }
        Self::new(0.5 * (lo + hi), (hi - lo).ln())
    }

    pub fn unit() -> Self {
        Self {
            center: 0.5,
            loglen: 0.0,
        }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn loglen(&self) -> f64 {
        self.loglen
    }

    pub fn length(&self) -> f64 {
        self.loglen.exp()
    }

    /// Natural log of the half-length.
    pub fn ln_half(&self) -> f64 {
        self.loglen - LN_2
    }

    /// Nominal endpoints clipped to `[0, 1]`.
    pub fn bounds(&self) -> (f64, f64) {
        let h = 0.5 * self.length();
        ((self.center - h).max(0.0), (self.center + h).min(1.0))
    }

    /// Clip to `[0, 1]`. Returns `None` when nothing of positive length
    /// survives.
    pub fn materialize(&self) -> Option<Materialized> {
        let h = 0.5 * self.length();
        let raw_lo = self.center - h;
        let raw_hi = self.center + h;
        if raw_lo >= 0.0 && raw_hi <= 1.0 {
            if self.loglen == f64::NEG_INFINITY {
                return None;
            }
            return Some(Materialized {
                interval: *self,
                lo: raw_lo,
                hi: raw_hi,
                clipped: false,
            });
        }
        let lo = raw_lo.max(0.0);
        let hi = raw_hi.min(1.0);
        let width = hi - lo;
        if width <= 0.0 {
            log::warn!("interval at {} clipped to zero length", self.center);
            return None;
        }
        log::debug!(
            "interval at {} (loglen {}) clipped to [{lo}, {hi}]",
            self.center,
            self.loglen
        );
        Some(Materialized {
            interval: Interval {
                center: 0.5 * (lo + hi),
                loglen: width.ln(),
            },
            lo,
            hi,
            clipped: true,
        })
    }

    /// Geometric relation of two (already materialized) intervals.
    pub fn relation(&self, other: &Interval) -> Relation {
        if self.center == other.center && self.loglen == other.loglen {
            return Relation::Identical;
        }
        let d = (self.center - other.center).abs();
        if d == 0.0 {
            return Relation::Overlap;
        }
        let ln_s = log_add_exp(self.ln_half(), other.ln_half());
        if ln_s - d.ln() > TOUCH_SLACK {
            Relation::Overlap
        } else {
            Relation::Disjoint
        }
    }

    /// Whether `self` lies inside `outer` (closed containment, log-domain safe).
    pub fn is_inside(&self, outer: &Materialized) -> bool {
        let h = 0.5 * self.length();
        let left = self.center - outer.lo;
        let right = outer.hi - self.center;
        left >= h && right >= h
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a >= b`.
pub(crate) fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == a {
        return f64::NEG_INFINITY;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_fields() {
        assert!(Interval::new(1.5, -1.0).is_err());
        assert!(Interval::new(0.5, 0.1).is_err());
        assert!(Interval::new(0.5, f64::NAN).is_err());
        assert!(Interval::new(0.5, f64::NEG_INFINITY).is_ok());
    }

    #[test]
    fn clipping_keeps_nominal_center() {
        let iv = Interval::new(0.05, (0.2f64).ln()).unwrap();
        let m = iv.materialize().unwrap();
        assert!(m.clipped);
        assert_eq!(iv.center(), 0.05);
        assert_eq!(m.lo, 0.0);
        assert!((m.hi - 0.15).abs() < 1e-15);
        assert!((m.interval.length() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn tiny_interval_materializes_without_underflow_of_loglen() {
        let iv = Interval::new(0.3, -1000.0).unwrap();
        let m = iv.materialize().unwrap();
        assert!(!m.clipped);
        assert_eq!(m.interval.loglen(), -1000.0);
    }

    #[test]
    fn relations() {
        let a = Interval::from_bounds(0.0, 0.5).unwrap();
        let b = Interval::from_bounds(0.5, 1.0).unwrap();
        let c = Interval::from_bounds(0.4, 0.6).unwrap();
        assert_eq!(a.relation(&b), Relation::Disjoint);
        assert_eq!(a.relation(&a), Relation::Identical);
        assert_eq!(a.relation(&c), Relation::Overlap);
        let p = Interval::new(0.5, -20.0).unwrap();
        let q = Interval::new(0.5, -21.0).unwrap();
        assert_eq!(p.relation(&q), Relation::Overlap);
    }

    #[test]
    fn containment() {
        let outer = Interval::from_bounds(0.4, 0.6).unwrap().materialize().unwrap();
        assert!(Interval::from_bounds(0.45, 0.55).unwrap().is_inside(&outer));
        assert!(!Interval::from_bounds(0.35, 0.45).unwrap().is_inside(&outer));
        assert!(Interval::new(0.5, -500.0).unwrap().is_inside(&outer));
    }

    #[test]
    fn log_helpers() {
        let v = log_add_exp(2f64.ln(), 3f64.ln());
        assert!((v - 5f64.ln()).abs() < 1e-15);
        let w = log_sub_exp(5f64.ln(), 3f64.ln());
        assert!((w - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sub_exp(1.0, 1.0), f64::NEG_INFINITY);
    }
}

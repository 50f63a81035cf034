//! Zero-capacity criterion for `l_k = exp(-lambda k^alpha)` and the sweep over
//! `alpha` pairing energy lower bounds with `h_0` cover sums.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{discretize, solve_equilibrium};
use crate::error::{Error, Result};
use crate::kernel::DensitySpec;
use crate::redistribution::{multi_level, RedistributionConfig};
use crate::setgen::{level_union, CenterSequence, LengthSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Divergent,
    Convergent,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Divergent => "divergent",
            Verdict::Convergent => "convergent",
        })
    }
}

/// `sum_{k >= m} 1 / |log l_k|` with a two-sided bracket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct H0Bound {
    pub m: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub infinite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesClass {
    pub verdict: Verdict,
    /// `(N, sum_{k=1}^N 1/(lambda k^alpha))`.
    pub partial_sums: Vec<(usize, f64)>,
    pub total: H0Bound,
}

const PARTIAL_TERMS: usize = 100_000;

fn term(s: &LengthSchedule, k: usize) -> f64 {
    -1.0 / s.length(k).expect("k >= 1")
}

/// `∫_a^∞ dx / (lambda x^alpha)` for `alpha > 1`, `a > 0`.
fn tail_integral(s: &LengthSchedule, a: f64) -> f64 {
    a.powf(1.0 - s.alpha()) / (s.lambda() * (s.alpha() - 1.0))
}

/// Divergent iff `alpha <= 1`.
pub fn classify_series(schedule: &LengthSchedule) -> SeriesClass {
    let verdict = if schedule.alpha() > 1.0 {
        Verdict::Convergent
    } else {
        Verdict::Divergent
    };
    let mut partial_sums = Vec::new();
    let mut acc = 0.0;
    let mut next = 10;
    for k in 1..=PARTIAL_TERMS {
        acc += term(schedule, k);
        if k == next {
            partial_sums.push((k, acc));
            next *= 10;
        }
    }
    SeriesClass {
        verdict,
        partial_sums,
        total: h0_volume_bound(schedule, 1).expect("m = 1"),
    }
}

/// Cover sum of `h_0(x) = 1/|log x|` over `{I_k}_{k >= m}`, bracketed by
/// explicit terms followed by the integral test; `infinite` when
/// `alpha <= 1`.
pub fn h0_volume_bound(schedule: &LengthSchedule, m: usize) -> Result<H0Bound> {
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if schedule.alpha() <= 1.0 {
        return Ok(H0Bound {
            m,
            value: f64::INFINITY,
            lower: f64::INFINITY,
            upper: f64::INFINITY,
            infinite: true,
        });
    }
    let end = m + PARTIAL_TERMS;
    let head: f64 = (m..end).map(|k| term(schedule, k)).sum();
    // sum_{k >= end} g(k) lies in [∫_end^∞ g, g(end) + ∫_end^∞ g]
    let lo = head + tail_integral(schedule, end as f64);
    let hi = lo + term(schedule, end);
    Ok(H0Bound {
        m,
        value: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
        infinite: false,
    })
}

/// Integral-test bracket `[∫_m^∞ g, g(m) + ∫_m^∞ g]` with no explicit terms.
pub fn integral_bracket(schedule: &LengthSchedule, m: usize) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if schedule.alpha() <= 1.0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let lo = tail_integral(schedule, m as f64);
    Ok((lo, lo + term(schedule, m)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lambda: f64,
    pub centers: CenterSequence,
    pub f: DensitySpec,
    pub q_override: Option<usize>,
    pub tol: f64,
    /// Capacities of `V_m` are solved only for `m` up to this value.
    pub capacity_max_m: usize,
    pub panels_per_interval: usize,
}

impl SweepConfig {
    pub fn new(lambda: f64, centers: CenterSequence) -> Self {
        Self {
            lambda,
            centers,
            f: DensitySpec::Constant(1.0),
            q_override: None,
            tol: 1e-9,
            capacity_max_m: 256,
            panels_per_interval: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub m: usize,
    pub energy: f64,
    /// `exp(-I(mu^m))`, a lower bound for the capacity of the finite union
    /// carrying `mu^m`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub alpha: f64,
    pub lambda: f64,
    pub series_verdict: Verdict,
    pub tail_sums: Vec<H0Bound>,
    pub lower_bounds: Vec<LowerBound>,
    /// `(m, Cap(V_m))` from the equilibrium solver.
    pub capacity_estimates: Vec<(usize, f64)>,
    pub errors: Vec<String>,
}

/// One line of the combined sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub lambda: f64,
    pub verdict: Verdict,
    pub kind: String,
    pub m: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const SWEEP_FOOTER: &str = "exp(-I(mu^m)) bounds the capacity of the finite union carrying mu^m from below; \
h0 cover sums bound the h0-volume of S from above. Neither is a computation of Cap(S).";

fn sweep_cell(config: &SweepConfig, alpha: f64, ms: &[usize]) -> Result<RegimeReport> {
    let schedule = LengthSchedule::new(config.lambda, alpha)?;
    let series_verdict = classify_series(&schedule).verdict;
    let mut report = RegimeReport {
        alpha,
        lambda: config.lambda,
        series_verdict,
        tail_sums: Vec::new(),
        lower_bounds: Vec::new(),
        capacity_estimates: Vec::new(),
        errors: Vec::new(),
    };
    match series_verdict {
        Verdict::Convergent => {
            let mut grid: Vec<usize> = std::iter::once(1).chain(ms.iter().copied()).collect();
            grid.sort_unstable();
            grid.dedup();
            for m in grid {
                report.tail_sums.push(h0_volume_bound(&schedule, m)?);
            }
        }
        Verdict::Divergent => {
            let mut rc = RedistributionConfig::new(schedule, config.centers.clone(), config.f.clone())?;
            rc.q_override = config.q_override;
            rc.tol = config.tol;
            for &m in ms {
                match multi_level(&rc, m) {
                    Ok(ml) => report.lower_bounds.push(LowerBound {
                        m,
                        energy: ml.energy(),
                        bound: (-ml.energy()).exp(),
                    }),
                    Err(e) => report.errors.push(format!("multi_level m={m}: {e}")),
                }
                if m <= config.capacity_max_m {
                    let cap = (|| {
                        let mut centers = config.centers.clone();
                        centers.extend_to(2 * m - 1)?;
                        let v = level_union(&schedule, &centers, m)?;
                        let d = discretize(&v.intervals, config.panels_per_interval * m)?;
                        solve_equilibrium(&d)
                    })();
                    match cap {
                        Ok(c) => report.capacity_estimates.push((m, c.capacity)),
                        Err(e) => report.errors.push(format!("capacity m={m}: {e}")),
                    }
                }
            }
        }
    }
    Ok(report)
}

/// One report per `alpha`; all cells share the centers. Errors inside a
/// cell are recorded in its report and the sweep continues.
pub fn sweep_alpha(config: &SweepConfig, alphas: &[f64], ms: &[usize]) -> Result<Vec<RegimeReport>> {
    if alphas.is_empty() {
        return Err(Error::invalid("alphas", "empty"));
    }
    if ms.iter().any(|&m| m == 0) {
        return Err(Error::invalid("m", "grid entries must be >= 1"));
    }
    alphas
        .par_iter()
        .map(|&alpha| {
            sweep_cell(config, alpha, ms).or_else(|e| {
                if matches!(e, Error::InvalidArgument { name: "alpha", .. }) {
                    return Err(e);
                }
                Ok(RegimeReport {
                    alpha,
                    lambda: config.lambda,
                    series_verdict: if alpha > 1.0 {
                        Verdict::Convergent
                    } else {
                        Verdict::Divergent
                    },
                    tail_sums: Vec::new(),
                    lower_bounds: Vec::new(),
                    capacity_estimates: Vec::new(),
                    errors: vec![e.to_string()],
                })
            })
        })
        .collect()
}

/// Flatten reports into plot-ready rows.
pub fn sweep_table(reports: &[RegimeReport]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for r in reports {
        let row = |kind: &str, m, value, lower, upper| SweepRow {
            alpha: r.alpha,
            lambda: r.lambda,
            verdict: r.series_verdict,
            kind: kind.to_string(),
            m,
            value,
            lower,
            upper,
        };
        for t in &r.tail_sums {
            rows.push(row("h0_tail", t.m, t.value, t.lower, t.upper));
        }
        for b in &r.lower_bounds {
            rows.push(row("energy", b.m, b.energy, b.energy, b.energy));
            rows.push(row("capacity_lower_bound", b.m, b.bound, b.bound, b.bound));
        }
        for &(m, c) in &r.capacity_estimates {
            rows.push(row("union_capacity", m, c, c, c));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sched(lambda: f64, alpha: f64) -> LengthSchedule {
        LengthSchedule::new(lambda, alpha).unwrap()
    }

    #[test]
    fn verdicts() {
        assert_eq!(classify_series(&sched(1.0, 2.0)).verdict, Verdict::Convergent);
        assert_eq!(classify_series(&sched(1.0, 1.0)).verdict, Verdict::Divergent);
        assert_eq!(classify_series(&sched(2.0, 1.001)).verdict, Verdict::Convergent);
        assert_eq!(classify_series(&sched(1.0, 0.5)).verdict, Verdict::Divergent);
    }

    #[test]
    fn basel() {
        let b = h0_volume_bound(&sched(1.0, 2.0), 1).unwrap();
        let target = PI * PI / 6.0;
        assert!(b.lower <= target && target <= b.upper);
        assert!(b.upper - b.lower < 1e-9);
        let c = classify_series(&sched(1.0, 2.0));
        assert!(c.partial_sums.iter().all(|&(_, s)| s < target));
    }

    #[test]
    fn tail_at_hundred() {
        let s = sched(1.0, 2.0);
        let b = h0_volume_bound(&s, 100).unwrap();
        let (lo, hi) = integral_bracket(&s, 100).unwrap();
        assert_relative_eq!(lo, 0.01, epsilon = 1e-15);
        assert_relative_eq!(hi, 0.0101, epsilon = 1e-15);
        assert!(lo <= b.lower && b.upper <= hi);
    }

    #[test]
    fn infinite_flag_and_scaling() {
        assert!(h0_volume_bound(&sched(1.0, 1.0), 5).unwrap().infinite);
        let a = h0_volume_bound(&sched(1.0, 1.5), 10).unwrap();
        let b = h0_volume_bound(&sched(0.5, 1.5), 10).unwrap();
        assert_relative_eq!(b.value, 2.0 * a.value, max_relative = 1e-14);
        assert!(h0_volume_bound(&sched(1.0, 1.5), 11).unwrap().value < a.value);
        assert!(h0_volume_bound(&sched(1.0, 1.5), 0).is_err());
    }

    #[test]
    fn huge_but_finite() {
        let b = h0_volume_bound(&sched(2.0, 1.001), 1).unwrap();
        assert!(!b.infinite && b.value.is_finite() && b.value > 100.0);
    }
}

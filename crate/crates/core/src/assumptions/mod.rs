//! Finite-scale audits of the distribution, log-average spacing and gap
//! control assumptions.

mod montecarlo;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::interval::log_add_exp;
use crate::setgen::{default_q, CenterSequence, DensityTable, LengthSchedule, LevelBlocks};

pub use montecarlo::{
    centered_kernel_check, fourth_moment_trend, montecarlo_fourth_moment, montecarlo_gap_tail, CenteredKernel,
    ConditionalMean, FourthMomentTrend, PairSums, TailStats,
};

/// Default δ grid, ascending.
pub const DEFAULT_DELTAS: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// A named test function with its target `∫ f φ dx`.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub target: f64,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("target", &self.target)
            .finish()
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static, target: f64) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            target,
        }
    }

    /// Target computed by quadrature against `table`.
    pub fn against(
        table: &DensityTable,
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let target = table.integrate(&f);
        Self::new(name, f, target)
    }

    /// `1`, `x`, `x^2` and `sin(pi x)` against `table`.
    pub fn defaults(table: &DensityTable) -> Vec<Self> {
        vec![
            Self::against(table, "1", |_| 1.0),
            Self::against(table, "x", |x| x),
            Self::against(table, "x^2", |x| x * x),
            Self::against(table, "sin(pi x)", |x| (std::f64::consts::PI * x).sin()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionTrace {
    pub n: usize,
    pub deviation: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub functions: Vec<String>,
    pub targets: Vec<f64>,
    pub n_max: usize,
    pub trace: Vec<DistributionTrace>,
    pub max_deviation: f64,
    pub final_deviation: f64,
    pub threshold: f64,
    pub trend_ok: bool,
    pub pass: bool,
}

/// `sup_F |(1/n) Σ_{k in A_n} f(c_k) - ∫ f φ|` for `n = 1, 2, 4, ..., n_max`.
///
/// Passes when the last deviation is below `scale / sqrt(n_max)` and no
/// larger than the largest deviation over the first half of the trace.
pub fn check_distribution(
    centers: &CenterSequence,
    n_max: usize,
    functions: &[TestFunction],
    scale: f64,
) -> Result<DistributionReport> {
    if n_max == 0 || functions.is_empty() {
        return Err(Error::invalid(
            "n_max",
            "need n_max >= 1 and at least one test function",
        ));
    }
    if centers.len() < 2 * n_max - 1 {
        return Err(Error::InsufficientData {
            required: 2 * n_max - 1,
            available: centers.len(),
        });
    }
    let mut trace = Vec::new();
    let mut n = 1;
    while n <= n_max {
        let block = &centers.centers()[n - 1..2 * n - 1];
        let deviation = functions
            .iter()
            .map(|tf| {
                let avg = block.iter().map(|&c| (tf.f)(c)).sum::<f64>() / n as f64;
                (avg - tf.target).abs()
            })
            .fold(0.0, f64::max);
        trace.push(DistributionTrace {
            n,
            deviation,
            threshold: scale / (n as f64).sqrt(),
        });
        if n == n_max {
            break;
        }
        n = (2 * n).min(n_max);
    }
    let last = trace.last().expect("nonempty trace");
    let half = trace.len().div_ceil(2);
    let early_max = trace[..half].iter().map(|t| t.deviation).fold(0.0, f64::max);
    let trend_ok = last.deviation <= early_max;
    let pass = last.deviation < last.threshold && trend_ok;
    Ok(DistributionReport {
        functions: functions.iter().map(|f| f.name.clone()).collect(),
        targets: functions.iter().map(|f| f.target).collect(),
        n_max,
        max_deviation: trace.iter().map(|t| t.deviation).fold(0.0, f64::max),
        final_deviation: last.deviation,
        threshold: last.threshold,
        trend_ok,
        pass,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacingCell {
    pub delta: f64,
    pub n1: usize,
    pub n2: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacingReport {
    pub n: usize,
    pub q: usize,
    pub epsilon: f64,
    pub deltas: Vec<f64>,
    pub cells: Vec<SpacingCell>,
    /// Worst value over `(n', n'')` per evaluated δ.
    pub worst: Vec<f64>,
    pub passing_delta: Option<f64>,
    pub pass: bool,
}

fn sorted_block(centers: &[f64], range: std::ops::Range<usize>) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = range.map(|k| (centers[k - 1], k)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// `Σ -log|c_i - c_j|` over `i in a`, `j in b`, `i != j`, `|c_i - c_j| < delta`.
pub(crate) fn truncated_log_sum(a: &[(f64, usize)], b: &[(f64, usize)], delta: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &(ci, i) in a {
        let start = b.partition_point(|&(c, _)| c <= ci - delta);
        for &(cj, j) in &b[start..] {
            let d = (cj - ci).abs();
            if cj - ci >= delta {
                break;
            }
            if i == j {
                continue;
            }
            if d == 0.0 {
                return Err(Error::SingularPair {
                    first: i.min(j),
                    second: i.max(j),
                });
            }
            if d < delta {
                acc -= d.ln();
            }
        }
    }
    Ok(acc)
}

/// Truncated log-averages over `n', n'' in {n, 2n, ..., 2^q n}`.
///
/// δ is scanned in ascending order; with `stop_at_pass` the scan ends at the
/// first δ that meets `epsilon` for every pair of levels.
pub fn check_log_spacing(
    centers: &CenterSequence,
    n: usize,
    q: usize,
    deltas: &[f64],
    epsilon: f64,
    stop_at_pass: bool,
) -> Result<SpacingReport> {
    let blocks = LevelBlocks::new(n, q)?;
    let need = blocks.union().end - 1;
    if centers.len() < need {
        return Err(Error::InsufficientData {
            required: need,
            available: centers.len(),
        });
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::invalid("deltas", "need positive values"));
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_by(f64::total_cmp);
    let levels = blocks.levels();
    let sorted: Vec<Vec<(f64, usize)>> = levels
        .iter()
        .map(|&m| sorted_block(centers.centers(), LevelBlocks::block(m)))
        .collect();
    let mut cells = Vec::new();
    let mut worst = Vec::new();
    let mut passing_delta = None;
    for &delta in &deltas {
        let mut w: f64 = 0.0;
        for (a, &n1) in levels.iter().enumerate() {
            for (b, &n2) in levels.iter().enumerate() {
                let value = truncated_log_sum(&sorted[a], &sorted[b], delta)? / (n1 as f64 * n2 as f64);
                w = w.max(value);
                cells.push(SpacingCell { delta, n1, n2, value });
            }
        }
        worst.push(w);
        if w < epsilon && passing_delta.is_none() {
            passing_delta = Some(delta);
            if stop_at_pass {
                break;
            }
        }
    }
    Ok(SpacingReport {
        n,
        q,
        epsilon,
        deltas: deltas[..worst.len()].to_vec(),
        cells,
        worst,
        passing_delta,
        pass: passing_delta.is_some(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n: usize,
    pub q: usize,
    pub epsilon: f64,
    pub max_ratio: f64,
    /// Natural log of `max_ratio`, finite even when the ratio underflows.
    pub ln_max_ratio: f64,
    pub worst_pair: (usize, usize),
    pub pass: bool,
}

/// `ln((l_i + l_j) / (2|c_i - c_j|))`.
fn ln_ratio(li: f64, lj: f64, d: f64) -> f64 {
    log_add_exp(li, lj) - std::f64::consts::LN_2 - d.ln()
}

/// Largest `(l_i + l_j) / (2|c_i - c_j|)` over `i != j` in `A_{n,q}`.
pub fn check_gap_control(
    schedule: &LengthSchedule,
    centers: &CenterSequence,
    n: usize,
    q: usize,
    epsilon: f64,
) -> Result<GapReport> {
    let blocks = LevelBlocks::new(n, q)?;
    let range = blocks.union();
    let need = range.end - 1;
    if centers.len() < need {
        return Err(Error::InsufficientData {
            required: need,
            available: centers.len(),
        });
    }
    let (ln_max, pair) = max_gap_ratio(schedule, centers.centers(), range)?;
    let max_ratio = ln_max.exp();
    Ok(GapReport {
        n,
        q,
        epsilon,
        max_ratio,
        ln_max_ratio: ln_max,
        worst_pair: pair,
        pass: ln_max < epsilon.ln(),
    })
}

/// Sorted scan with pruning by the largest length in the range.
pub(crate) fn max_gap_ratio(
    schedule: &LengthSchedule,
    centers: &[f64],
    range: std::ops::Range<usize>,
) -> Result<(f64, (usize, usize))> {
    let ll_max = schedule.loglen_unchecked(range.start);
    let pts: Vec<(f64, usize, f64)> = {
        let mut v: Vec<(f64, usize, f64)> = range
            .map(|k| (centers[k - 1], k, schedule.loglen_unchecked(k)))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    };
    if pts.len() < 2 {
        return Ok((f64::NEG_INFINITY, (0, 0)));
    }
    let mut best = f64::NEG_INFINITY;
    let mut pair = (0, 0);
    let consider =
        |a: &(f64, usize, f64), b: &(f64, usize, f64), best: &mut f64, pair: &mut (usize, usize)| -> Result<()> {
            let d = b.0 - a.0;
            if d == 0.0 {
                return Err(Error::SingularPair {
                    first: a.1.min(b.1),
                    second: a.1.max(b.1),
                });
            }
            let r = ln_ratio(a.2, b.2, d);
            if r > *best {
                *best = r;
                *pair = (a.1.min(b.1), a.1.max(b.1));
            }
            Ok(())
        };
    for w in pts.windows(2) {
        consider(&w[0], &w[1], &mut best, &mut pair)?;
    }
    for i in 0..pts.len() {
        let bound_ll = log_add_exp(pts[i].2, ll_max) - std::f64::consts::LN_2;
        for j in i + 2..pts.len() {
            let d = pts[j].0 - pts[i].0;
            if bound_ll - d.ln() < best {
                break;
            }
            consider(&pts[i], &pts[j], &mut best, &mut pair)?;
        }
    }
    Ok((best, pair))
}

/// Thresholds and ranges for [`audit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub n: usize,
    pub q: Option<usize>,
    pub a1_scale: f64,
    pub a2_epsilon: f64,
    pub deltas: Vec<f64>,
    pub a3_epsilon: f64,
    pub stop_at_pass: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            n: 4096,
            q: None,
            a1_scale: 5.0,
            a2_epsilon: 0.05,
            deltas: DEFAULT_DELTAS.to_vec(),
            a3_epsilon: 0.1,
            stop_at_pass: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n: usize,
    pub q: usize,
    pub seed: Option<u64>,
    pub a1: DistributionReport,
    pub a2: SpacingReport,
    pub a3: GapReport,
    pub verdicts: Verdicts,
}

/// All three audits at level `n` with `q = q_override` or `default_q(n)`.
pub fn audit(
    schedule: &LengthSchedule,
    centers: &mut CenterSequence,
    functions: &[TestFunction],
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    let q = match cfg.q {
        Some(q) => q,
        None => default_q(cfg.n)?,
    };
    let need = (cfg.n << (q + 1)) - 1;
    let _ = centers.extend_to(need);
    let a1 = check_distribution(centers, cfg.n, functions, cfg.a1_scale)?;
    let a2 = check_log_spacing(centers, cfg.n, q, &cfg.deltas, cfg.a2_epsilon, cfg.stop_at_pass)?;
    let a3 = check_gap_control(schedule, centers, cfg.n, q, cfg.a3_epsilon)?;
    let seed = match centers.kind() {
        crate::setgen::CenterKind::Iid { seed, .. } => Some(*seed),
        _ => None,
    };
    Ok(AuditReport {
        n: cfg.n,
        q,
        seed,
        verdicts: Verdicts {
            a1: a1.pass,
            a2: a2.pass,
            a3: a3.pass,
        },
        a1,
        a2,
        a3,
    })
}

/// `c_k = 1/2 + e^{-k}` for `k = 1..=count`.
pub fn clustered_centers(count: usize) -> Result<CenterSequence> {
    CenterSequence::explicit((1..=count).map(|k| 0.5 + (-(k as f64)).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setgen::sample_centers_iid;
    use approx::assert_relative_eq;

    #[test]
    fn constant_function_is_exact() {
        let c = sample_centers_iid(&DensityTable::uniform(), 1, 127);
        let r = check_distribution(&c, 64, &[TestFunction::new("1", |_| 1.0, 1.0)], 5.0).unwrap();
        assert!(r.trace.iter().all(|t| t.deviation == 0.0));
    }

    #[test]
    fn degenerate_sequence_fails() {
        let c = CenterSequence::explicit(vec![0.5; 8191]).unwrap();
        let r = check_distribution(&c, 4096, &[TestFunction::new("x^2", |x| x * x, 1.0 / 3.0)], 5.0).unwrap();
        assert_relative_eq!(r.final_deviation, 1.0 / 12.0, epsilon = 1e-12);
        assert!(!r.pass);
    }

    #[test]
    fn short_sequence_rejected() {
        let c = CenterSequence::explicit(vec![0.5; 10]).unwrap();
        assert!(matches!(
            check_distribution(&c, 8, &[TestFunction::new("1", |_| 1.0, 1.0)], 5.0),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn grid_spacing_below_delta_is_empty() {
        let c = CenterSequence::explicit((1..8).map(|k| k as f64 / 8.0).collect()).unwrap();
        let r = check_log_spacing(&c, 2, 1, &[0.1], 0.05, false).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.cells.iter().all(|cell| cell.value == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn gap_ratio_arithmetic() {
        let s = LengthSchedule::new(1.0, 1.0).unwrap();
        let (r, _) = max_gap_ratio(&s, &[0.25, 0.75], 1..3).unwrap();
        let expect = ((-1f64).exp() + (-2f64).exp()) / (2.0 * 0.5);
        assert_relative_eq!(r.exp(), expect, epsilon = 1e-14);
        let e = ln_ratio(0.02f64.ln(), 0.02f64.ln(), 0.5).exp();
        assert_relative_eq!(e, 0.04, epsilon = 1e-15);
    }

    #[test]
    fn gap_scan_matches_brute_force() {
        let s = LengthSchedule::new(0.05, 1.0).unwrap();
        let c = sample_centers_iid(&DensityTable::uniform(), 11, 200);
        let (fast, pair) = max_gap_ratio(&s, c.centers(), 10..200).unwrap();
        let mut brute = f64::NEG_INFINITY;
        for i in 10..200 {
            for j in i + 1..200 {
                let d = (c.centers()[i - 1] - c.centers()[j - 1]).abs();
                brute = brute.max(ln_ratio(s.loglen_unchecked(i), s.loglen_unchecked(j), d));
            }
        }
        assert_eq!(fast, brute);
        assert!(pair.0 < pair.1);
    }

    #[test]
    fn clustered_fails_spacing_and_gap() {
        let c = clustered_centers(31).unwrap();
        let s = LengthSchedule::new(1.0, 1.0).unwrap();
        let a2 = check_log_spacing(&c, 4, 2, &DEFAULT_DELTAS, 0.05, false).unwrap();
        assert!(!a2.pass);
        let a3 = check_gap_control(&s, &c, 4, 2, 0.5).unwrap();
        assert!(!a3.pass);
        let e = (-1f64).exp();
        // center differences near e^{-31} carry rounding of relative size ~1e-3
        assert_relative_eq!(a3.max_ratio, (1.0 + e) / (2.0 * (1.0 - e)), max_relative = 1e-3);
    }

    #[test]
    fn coincident_centers_are_singular() {
        let c = CenterSequence::explicit(vec![0.3, 0.4, 0.4, 0.7, 0.2, 0.9, 0.1]).unwrap();
        let s = LengthSchedule::new(1.0, 1.0).unwrap();
        assert_eq!(
            check_gap_control(&s, &c, 2, 1, 0.1).unwrap_err(),
            Error::SingularPair { first: 2, second: 3 }
        );
        assert!(matches!(
            check_log_spacing(&c, 2, 1, &[0.1], 0.1, false),
            Err(Error::SingularPair { .. })
        ));
    }
}

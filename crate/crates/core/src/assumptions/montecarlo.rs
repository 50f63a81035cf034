use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{max_gap_ratio, sorted_block, truncated_log_sum};
use crate::error::{Error, Result};
use crate::kernel::quadrature::{gl20_integrate, tanh_sinh};
use crate::setgen::{default_q, sample_centers_iid, DensityTable, LengthSchedule, LevelBlocks};

/// Seed of trial `t`, independent of how trials are scheduled.
pub(crate) fn trial_seed(seed: u64, t: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(t.wrapping_add(1 << 32));
    rng.next_u64()
}

/// Moments of `S_{n',n''}` over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSums {
    pub n1: usize,
    pub n2: usize,
    pub mean: f64,
    pub mean_sq: f64,
    pub mean_fourth: f64,
    pub exceed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub n: usize,
    pub q: usize,
    pub trials: usize,
    pub violation_count: usize,
    pub frequency: f64,
    pub bound_value: f64,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
    pub fourth_moment_sums: Vec<PairSums>,
}

/// Frequency of gap-control violations in `A_{n,q(n)}` against
/// `4 n^4 (2K/ε) l_n` with `K = sup φ`.
pub fn montecarlo_gap_tail(
    schedule: &LengthSchedule,
    table: &DensityTable,
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<TailStats> {
    if trials == 0 || !(epsilon > 0.0) {
        return Err(Error::invalid("trials", "need trials >= 1 and epsilon > 0"));
    }
    let q = default_q(n)?;
    let blocks = LevelBlocks::new(n, q)?;
    let range = blocks.union();
    let ln_eps = epsilon.ln();
    let violated: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let c = sample_centers_iid(table, trial_seed(seed, t), range.end - 1);
            max_gap_ratio(schedule, c.centers(), range.clone()).map(|(r, _)| r >= ln_eps)
        })
        .collect::<Result<_>>()?;
    let violation_count = violated.iter().filter(|v| **v).count();
    let nf = n as f64;
    let bound_value = 4.0 * nf.powi(4) * (2.0 * table.sup() / epsilon) * schedule.length(n)?.exp();
    Ok(TailStats {
        n,
        q,
        trials,
        violation_count,
        frequency: violation_count as f64 / trials as f64,
        bound_value,
        vacuous: bound_value >= 1.0,
        fourth_moment_sums: Vec::new(),
    })
}

const KERNEL_GRID: usize = 4096;

/// `H(x, y) = G(x, y) - g(x) - g(y) + c` with
/// `G(x, y) = -log|x - y| 1(|x - y| < δ)`, `g(x) = E G(x, Y)`, `c = E G(X, Y)`.
#[derive(Clone, Debug)]
pub struct CenteredKernel {
    pub delta: f64,
    pub c: f64,
    closed_form: bool,
    grid: Vec<f64>,
    /// Largest gap between the tabulated `g` and direct quadrature at probes.
    pub interpolation_error: f64,
}

fn a_uniform(a: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a - a * a.ln()
    }
}

fn g_direct(table: &DensityTable, delta: f64, x: f64) -> f64 {
    let mut acc = 0.0;
    for sign in [-1.0, 1.0] {
        let reach = if sign < 0.0 { x.min(delta) } else { (1.0 - x).min(delta) };
        if reach <= 0.0 {
            continue;
        }
        // distance u from x, split where x + sign u crosses a knot
        let mut cuts = vec![0.0];
        cuts.extend(
            table
                .knots()
                .iter()
                .map(|k| sign * (k - x))
                .filter(|u| *u > 0.0 && *u < reach),
        );
        cuts.push(reach);
        cuts.sort_by(f64::total_cmp);
        let f = |u: f64| {
            if u > 0.0 {
                -u.ln() * table.eval(x + sign * u)
            } else {
                0.0
            }
        };
        for w in cuts.windows(2) {
            let mut budget = 200_000;
            acc += match tanh_sinh(f, w[0], w[1], 1e-13, &mut budget) {
                Ok(v) | Err(v) => v,
            };
        }
    }
    acc
}

impl CenteredKernel {
    /// Closed forms for the uniform density; otherwise `g` is tabulated on a
    /// uniform grid and interpolated linearly.
    pub fn new(table: &DensityTable, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta", format!("{delta} must be >= 0")));
        }
        let uniform = table.knots().len() == 2 && table.eval(0.0) == 1.0 && table.eval(1.0) == 1.0;
        if uniform || delta == 0.0 {
            let d = delta.min(1.0);
            let c = if delta == 0.0 {
                0.0
            } else {
                2.0 * (d - d * d.ln() - 0.25 * d * d + 0.5 * d * d * d.ln())
            };
            return Ok(Self {
                delta,
                c,
                closed_form: true,
                grid: Vec::new(),
                interpolation_error: 0.0,
            });
        }
        let grid: Vec<f64> = (0..=KERNEL_GRID)
            .into_par_iter()
            .map(|i| g_direct(table, delta, i as f64 / KERNEL_GRID as f64))
            .collect();
        let mut k = Self {
            delta,
            c: 0.0,
            closed_form: false,
            grid,
            interpolation_error: 0.0,
        };
        let mut cuts: Vec<f64> = (0..=KERNEL_GRID).map(|i| i as f64 / KERNEL_GRID as f64).collect();
        cuts.extend(table.knots().iter().copied());
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        k.c = cuts
            .windows(2)
            .map(|w| gl20_integrate(|x| k.g(x) * table.eval(x), w[0], w[1]))
            .sum();
        k.interpolation_error = (0..64)
            .map(|i| {
                let x = (i as f64 + 0.37) / 64.0;
                (k.g(x) - g_direct(table, delta, x)).abs()
            })
            .fold(0.0, f64::max);
        Ok(k)
    }

    pub fn big_g(&self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        if d < self.delta && d > 0.0 {
            -d.ln()
        } else {
            0.0
        }
    }

    pub fn g(&self, x: f64) -> f64 {
        if self.delta == 0.0 {
            return 0.0;
        }
        if self.closed_form {
            let d = self.delta;
            return a_uniform(x.min(d)) + a_uniform((1.0 - x).min(d));
        }
        let s = x.clamp(0.0, 1.0) * KERNEL_GRID as f64;
        let i = (s.floor() as usize).min(KERNEL_GRID - 1);
        let r = s - i as f64;
        self.grid[i] * (1.0 - r) + self.grid[i + 1] * r
    }

    pub fn h(&self, x: f64, y: f64) -> f64 {
        self.big_g(x, y) - self.g(x) - self.g(y) + self.c
    }
}

/// `S_{n',n''}` for every pair of levels, in `levels x levels` order.
fn block_sums(k: &CenteredKernel, centers: &[f64], levels: &[usize]) -> Result<Vec<f64>> {
    let sorted: Vec<Vec<(f64, usize)>> = levels
        .iter()
        .map(|&m| sorted_block(centers, LevelBlocks::block(m)))
        .collect();
    let gsum: Vec<f64> = sorted.iter().map(|b| b.iter().map(|&(c, _)| k.g(c)).sum()).collect();
    let mut out = Vec::with_capacity(levels.len() * levels.len());
    for (a, &na) in levels.iter().enumerate() {
        for (b, &nb) in levels.iter().enumerate() {
            let gg = if k.delta > 0.0 {
                truncated_log_sum(&sorted[a], &sorted[b], k.delta)?
            } else {
                0.0
            };
            let (na, nb) = (na as f64, nb as f64);
            let (marg, pairs) = if a == b {
                (2.0 * (na - 1.0) * gsum[a], na * (na - 1.0))
            } else {
                (nb * gsum[a] + na * gsum[b], na * nb)
            };
            out.push(gg - marg + k.c * pairs);
        }
    }
    Ok(out)
}

/// Tail of `|S_{n',n''}| > ε n' n''` over `n', n'' in {n, ..., 2^q n}`.
///
/// A trial violates when any pair of levels exceeds. `bound_value` is the
/// largest empirical fourth-moment bound `E S^4 / (ε n' n'')^4`.
pub fn montecarlo_fourth_moment(
    table: &DensityTable,
    delta: f64,
    n: usize,
    q: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<TailStats> {
    let kernel = CenteredKernel::new(table, delta)?;
    fourth_moment_with(&kernel, table, n, q, epsilon, trials, seed)
}

fn fourth_moment_with(
    kernel: &CenteredKernel,
    table: &DensityTable,
    n: usize,
    q: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<TailStats> {
    if trials == 0 || !(epsilon > 0.0) {
        return Err(Error::invalid("trials", "need trials >= 1 and epsilon > 0"));
    }
    let blocks = LevelBlocks::new(n, q)?;
    let levels = blocks.levels();
    let need = blocks.union().end - 1;
    let sums: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let c = sample_centers_iid(table, trial_seed(seed, t), need);
            block_sums(kernel, c.centers(), &levels)
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    let mut idx = 0;
    let mut bound: f64 = 0.0;
    for &n1 in &levels {
        for &n2 in &levels {
            let scale = epsilon * n1 as f64 * n2 as f64;
            let (mut m1, mut m2, mut m4, mut exceed) = (0.0, 0.0, 0.0, 0);
            for s in &sums {
                let v = s[idx];
                m1 += v;
                m2 += v * v;
                m4 += v.powi(4);
                exceed += (v.abs() > scale) as usize;
            }
            let tf = trials as f64;
            bound = bound.max(m4 / tf / scale.powi(4));
            cells.push(PairSums {
                n1,
                n2,
                mean: m1 / tf,
                mean_sq: m2 / tf,
                mean_fourth: m4 / tf,
                exceed,
            });
            idx += 1;
        }
    }
    let violation_count = sums
        .iter()
        .filter(|s| {
            s.iter()
                .zip(levels.iter().flat_map(|&a| levels.iter().map(move |&b| (a, b))))
                .any(|(v, (a, b))| v.abs() > epsilon * a as f64 * b as f64)
        })
        .count();
    Ok(TailStats {
        n,
        q,
        trials,
        violation_count,
        frequency: violation_count as f64 / trials as f64,
        bound_value: bound,
        vacuous: bound >= 1.0,
        fourth_moment_sums: cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourthMomentTrend {
    pub delta: f64,
    pub c: f64,
    pub interpolation_error: f64,
    pub stats: Vec<TailStats>,
    pub non_increasing: bool,
    /// Smallest `C'` with `frequency <= C' / (ε^4 n^4)` at every `n`.
    pub fitted_constant: f64,
}

pub fn fourth_moment_trend(
    table: &DensityTable,
    delta: f64,
    ns: &[usize],
    q: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<FourthMomentTrend> {
    let kernel = CenteredKernel::new(table, delta)?;
    let stats = ns
        .iter()
        .map(|&n| fourth_moment_with(&kernel, table, n, q, epsilon, trials, seed))
        .collect::<Result<Vec<_>>>()?;
    let non_increasing = stats.windows(2).all(|w| w[1].frequency <= w[0].frequency);
    let fitted_constant = stats
        .iter()
        .map(|s| s.frequency * epsilon.powi(4) * (s.n as f64).powi(4))
        .fold(0.0, f64::max);
    Ok(FourthMomentTrend {
        delta,
        c: kernel.c,
        interpolation_error: kernel.interpolation_error,
        stats,
        non_increasing,
        fitted_constant,
    })
}

/// Sample mean of `H` with one argument fixed at `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMean {
    pub x: f64,
    /// 0 when `x` is the first argument, 1 when it is the second.
    pub argument: usize,
    pub mean: f64,
    pub stderr: f64,
    pub within_three_stderr: bool,
}

pub fn centered_kernel_check(
    table: &DensityTable,
    delta: f64,
    probes: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ConditionalMean>> {
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least two samples"));
    }
    let kernel = CenteredKernel::new(table, delta)?;
    let jobs: Vec<(usize, f64, usize)> = probes
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| [(2 * i, x, 0), (2 * i + 1, x, 1)])
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(stream, x, argument)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..samples {
                let y = table.quantile(rng.random::<f64>());
                let v = if argument == 0 { kernel.h(x, y) } else { kernel.h(y, x) };
                s1 += v;
                s2 += v * v;
            }
            let m = samples as f64;
            let mean = s1 / m;
            let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
            let stderr = (var / m).sqrt();
            ConditionalMean {
                x,
                argument,
                mean,
                stderr,
                within_three_stderr: mean.abs() <= 3.0 * stderr,
            }
        })
        .collect())
}

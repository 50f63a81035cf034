//! Length schedules, center sequences, dyadic index blocks and finite-stage
//! approximations of `S = ⋂_m ⋃_{k>=m} I_k`.

mod table;

use std::collections::HashSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Interval;

pub use table::DensityTable;

/// `l_k = exp(-lambda k^alpha)`, kept in log domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSchedule {
    lambda: f64,
    alpha: f64,
}

impl LengthSchedule {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("{lambda} must be > 0")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("{alpha} must be > 0")));
        }
        Ok(Self { lambda, alpha })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `loglen(k) = -lambda k^alpha` for `k >= 1`.
    pub fn length(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::invalid("k", "indices start at 1"));
        }
        Ok(self.loglen_unchecked(k))
    }

    pub(crate) fn loglen_unchecked(&self, k: usize) -> f64 {
        let kf = k as f64;
        if self.alpha == 1.0 {
            -self.lambda * kf
        } else {
            -self.lambda * kf.powf(self.alpha)
        }
    }

    pub fn interval(&self, center: f64, k: usize) -> Result<Interval> {
        Interval::new(center, self.length(k)?)
    }
}

/// How a [`CenterSequence`] produces `c_1, c_2, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CenterKind {
    Iid {
        table: DensityTable,
        seed: u64,
    },
    /// Concatenated grids `c_{j,n} = (2j+1)/(2n)`, `n = 1, 2, ...`.
    UniformGrid,
    Explicit(Vec<f64>),
}

/// Centers `c_k`, `k >= 1`, with a cache of the generated prefix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterSequence {
    kind: CenterKind,
    cache: Vec<f64>,
    #[serde(skip)]
    seen: HashSet<u64>,
    perturbed: usize,
}

impl PartialEq for CenterSequence {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.cache == other.cache
    }
}

impl CenterSequence {
    pub fn explicit(centers: Vec<f64>) -> Result<Self> {
        if let Some(c) = centers.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return Err(Error::invalid("centers", format!("{c} not in (0, 1)")));
        }
        Ok(Self {
            cache: centers.clone(),
            kind: CenterKind::Explicit(centers),
            seen: HashSet::new(),
            perturbed: 0,
        })
    }

    pub fn uniform_grid(count: usize) -> Self {
        let mut s = Self {
            kind: CenterKind::UniformGrid,
            cache: Vec::new(),
            seen: HashSet::new(),
            perturbed: 0,
        };
        s.extend_to(count).expect("grid sequences are unbounded");
        s
    }

    pub fn kind(&self) -> &CenterKind {
        &self.kind
    }

    /// Generated prefix `c_1..c_N` (index `k` at position `k - 1`).
    pub fn centers(&self) -> &[f64] {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    /// Number of sampled centers nudged by one ulp to avoid coincidence.
    pub fn perturbed(&self) -> usize {
        self.perturbed
    }

    /// `c_k` for `k >= 1`.
    pub fn get(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.cache.len() {
            return Err(Error::InsufficientData {
                required: k,
                available: self.cache.len(),
            });
        }
        Ok(self.cache[k - 1])
    }

    /// Make `c_1..c_count` available; explicit sequences cannot grow.
    pub fn extend_to(&mut self, count: usize) -> Result<()> {
        while self.cache.len() < count {
            let k = self.cache.len() + 1;
            let c = match &self.kind {
                CenterKind::Explicit(v) => {
                    return Err(Error::InsufficientData {
                        required: count,
                        available: v.len(),
                    })
                }
                CenterKind::UniformGrid => grid_center(k),
                CenterKind::Iid { table, seed } => {
                    let mut c = table.quantile(unit_draw(*seed, k as u64));
                    if c <= 0.0 {
                        c = f64::MIN_POSITIVE;
                    }
                    if c >= 1.0 {
                        c = 1.0 - f64::EPSILON / 2.0;
                    }
                    while self.seen.contains(&c.to_bits()) {
                        log::info!("center c_{k} = {c} coincides with an earlier one; nudging");
                        c = c.next_up();
                        self.perturbed += 1;
                    }
                    self.seen.insert(c.to_bits());
                    c
                }
            };
            self.cache.push(c);
        }
        Ok(())
    }
}

/// Uniform draw in `(0, 1)` that depends only on `(seed, index)`.
fn unit_draw(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn grid_center(k: usize) -> f64 {
    // block n holds indices n(n-1)/2 + 1 ..= n(n+1)/2
    let mut n = 1;
    while n * (n + 1) / 2 < k {
        n += 1;
    }
    let j = k - n * (n - 1) / 2 - 1;
    (2 * j + 1) as f64 / (2 * n) as f64
}

/// i.i.d. centers drawn by inverse CDF; each index has its own stream so
/// extending the sequence never re-draws earlier centers.
pub fn sample_centers_iid(table: &DensityTable, seed: u64, count: usize) -> CenterSequence {
    let mut s = CenterSequence {
        kind: CenterKind::Iid {
            table: table.clone(),
            seed,
        },
        cache: Vec::with_capacity(count),
        seen: HashSet::with_capacity(count),
        perturbed: 0,
    };
    s.extend_to(count).expect("iid sequences are unbounded");
    if table.has_zero_region() {
        log::warn!("density table vanishes on a set of positive length");
    }
    s
}

/// `c_{j,n} = (2j+1)/(2n)`, `j = 0..n-1`.
pub fn uniform_grid_centers(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    Ok((0..n).map(|j| (2 * j + 1) as f64 / (2 * n) as f64).collect())
}

/// `q(n) = max(1, floor(log2(ln n)))`.
pub fn default_q(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::invalid("n", format!("{n} must be >= 2")));
    }
    let v = (n as f64).ln().log2().floor();
    Ok(if v < 1.0 { 1 } else { v as usize })
}

/// Dyadic index blocks `A_n`, `A_{n,q}` and `B_m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelBlocks {
    pub n: usize,
    pub q: usize,
}

impl LevelBlocks {
    pub fn new(n: usize, q: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be >= 1"));
        }
        Ok(Self { n, q })
    }

    /// `A_n = {n, ..., 2n-1}`.
    pub fn block(n: usize) -> Range<usize> {
        n..2 * n
    }

    /// `n, 2n, ..., 2^q n`.
    pub fn levels(&self) -> Vec<usize> {
        (0..=self.q).map(|s| self.n << s).collect()
    }

    /// `A_{n,q} = A_n ∪ A_{2n} ∪ ... ∪ A_{2^q n} = {n, ..., 2^{q+1} n - 1}`.
    pub fn union(&self) -> Range<usize> {
        self.n..(self.n << (self.q + 1))
    }

    pub fn union_len(&self) -> usize {
        ((1 << (self.q + 1)) - 1) * self.n
    }

    /// `B_m = {0, ..., q-1}`.
    pub fn b(q: usize) -> Range<usize> {
        0..q
    }
}

/// `V_n` with bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelUnion {
    pub n: usize,
    /// Index `k` of each interval.
    pub indices: Vec<usize>,
    /// Clipped intervals `I_k`, `k in A_n`.
    pub intervals: Vec<Interval>,
    pub overlaps: Vec<(usize, usize)>,
    pub clipped: usize,
}

impl LevelUnion {
    pub fn is_disjoint(&self) -> bool {
        self.overlaps.is_empty()
    }
}

/// Effective (clipped) `I_k` for `k` in `range`.
pub(crate) fn block_intervals(
    schedule: &LengthSchedule,
    centers: &CenterSequence,
    range: Range<usize>,
) -> Result<(Vec<Interval>, usize)> {
    if range.end > centers.len() + 1 {
        return Err(Error::InsufficientData {
            required: range.end - 1,
            available: centers.len(),
        });
    }
    let mut clipped = 0;
    let mut out = Vec::with_capacity(range.len());
    for k in range {
        let iv = schedule.interval(centers.get(k)?, k)?;
        match iv.materialize() {
            Some(m) => {
                clipped += m.clipped as usize;
                out.push(m.interval);
            }
            None => {
                clipped += 1;
                out.push(iv);
            }
        }
    }
    Ok((out, clipped))
}

/// All overlapping pairs found by a left-to-right sweep, as original positions.
pub(crate) fn overlapping_pairs(intervals: &[Interval]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| {
        intervals[a]
            .bounds()
            .0
            .total_cmp(&intervals[b].bounds().0)
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for &i in &order {
        let lo = intervals[i].bounds().0;
        active.retain(|&j| intervals[j].bounds().1 > lo || intervals[j].center() == intervals[i].center());
        for &j in &active {
            if intervals[i].relation(&intervals[j]) != crate::kernel::Relation::Disjoint {
                out.push((i.min(j), i.max(j)));
            }
        }
        active.push(i);
    }
    out.sort_unstable();
    out
}

/// `V_n = ⋃_{k in A_n} I_k`; overlaps are reported, not assumed away.
pub fn level_union(schedule: &LengthSchedule, centers: &CenterSequence, n: usize) -> Result<LevelUnion> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let range = LevelBlocks::block(n);
    let (intervals, clipped) = block_intervals(schedule, centers, range.clone())?;
    let overlaps = overlapping_pairs(&intervals)
        .into_iter()
        .map(|(a, b)| (a + n, b + n))
        .collect::<Vec<_>>();
    if !overlaps.is_empty() {
        log::warn!("V_{n}: {} overlapping pairs", overlaps.len());
    }
    Ok(LevelUnion {
        n,
        indices: range.collect(),
        intervals,
        overlaps,
        clipped,
    })
}

/// Result of [`restrict_support`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    pub kept: Vec<Interval>,
    /// Position in `V` of each kept interval.
    pub positions: Vec<usize>,
    /// Position in the support of the interval containing each kept one.
    pub owners: Vec<usize>,
    /// Intervals of `V` that meet the support without lying inside it.
    pub straddlers: usize,
}

/// Intervals of `V` wholly inside some interval of `support`.
pub fn restrict_support(support: &[Interval], v: &[Interval]) -> Restriction {
    let mut spans: Vec<(f64, f64, usize)> = support
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.materialize().map(|m| (m.lo, m.hi, i)))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Restriction::default();
    for (pos, iv) in v.iter().enumerate() {
        let (lo, hi) = iv.bounds();
        let c = iv.center();
        let idx = spans.partition_point(|s| s.0 <= c);
        let mut inside = None;
        if idx > 0 {
            let (slo, shi, owner) = spans[idx - 1];
            let m = crate::kernel::Materialized {
                interval: support[owner],
                lo: slo,
                hi: shi,
                clipped: false,
            };
            if iv.is_inside(&m) {
                inside = Some(owner);
            }
        }
        match inside {
            Some(owner) => {
                out.kept.push(*iv);
                out.positions.push(pos);
                out.owners.push(owner);
            }
            None => {
                let meets = spans.iter().any(|s| lo < s.1 && hi > s.0);
                if meets {
                    out.straddlers += 1;
                }
            }
        }
    }
    out
}

/// Finite-stage approximation `C_m = V_{n_1} ∩ ... ∩ V_{n_m}` under the
/// containment rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GDeltaApprox {
    pub schedule: LengthSchedule,
    pub centers: CenterSequence,
    pub stages: Vec<usize>,
    pub current_support: Vec<Interval>,
    pub discarded: usize,
}

impl GDeltaApprox {
    pub fn new(schedule: LengthSchedule, centers: CenterSequence) -> Self {
        Self {
            schedule,
            centers,
            stages: Vec::new(),
            current_support: vec![Interval::unit()],
            discarded: 0,
        }
    }

    /// Intersect the current support with `V_n`.
    pub fn advance(&mut self, n: usize) -> Result<Restriction> {
        if let Some(&last) = self.stages.last() {
            if n < 2 * last {
                return Err(Error::invalid(
                    "n",
                    format!("stage level {n} must be at least twice the previous level {last}"),
                ));
            }
        }
        let _ = self.centers.extend_to(2 * n - 1);
        let v = level_union(&self.schedule, &self.centers, n)?;
        let r = restrict_support(&self.current_support, &v.intervals);
        self.discarded += r.straddlers;
        self.current_support = r.kept.clone();
        self.stages.push(n);
        Ok(r)
    }
}

//! Re-distribution of measures onto the intervals `I_k`: component measures,
//! the single-level and multi-level averages, one re-distribution step and a
//! nested driver that chains steps under a geometric budget.

use std::borrow::Cow;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    measure_energy, mutual_energy, Atom, DensitySpec, EnergyBreakdown, Interval, PiecewiseMeasure, C0,
};
use crate::setgen::{
    block_intervals, default_q, overlapping_pairs, restrict_support, CenterKind, CenterSequence, DensityTable,
    LengthSchedule, LevelBlocks,
};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_CENTERS: usize = 1 << 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RedistributionConfig {
    pub schedule: LengthSchedule,
    pub centers: CenterSequence,
    /// Density on `[0, 1]`; evaluated at the centers.
    pub f: DensitySpec,
    pub q_override: Option<usize>,
    /// Smallest base level tried by [`nested_driver`].
    pub m_min: usize,
    /// Highest center index that may be generated.
    pub max_centers: usize,
    pub tol: f64,
}

impl RedistributionConfig {
    pub fn new(schedule: LengthSchedule, centers: CenterSequence, f: DensitySpec) -> Result<Self> {
        f.validate()?;
        let positive = match &f {
            DensitySpec::Constant(v) => *v > 0.0,
            DensitySpec::Sampled(p) => p.values().iter().all(|&v| v > 0.0),
        };
        if !positive {
            return Err(Error::invalid("f", "density must be positive on [0, 1]"));
        }
        Ok(Self {
            schedule,
            centers,
            f,
            q_override: None,
            m_min: 32,
            max_centers: DEFAULT_MAX_CENTERS,
            tol: DEFAULT_TOL,
        })
    }

    pub fn with_q(mut self, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("q", "must be >= 1"));
        }
        self.q_override = Some(q);
        Ok(self)
    }

    pub fn with_m_min(mut self, m_min: usize) -> Result<Self> {
        if m_min == 0 {
            return Err(Error::invalid("m_min", "must be >= 1"));
        }
        self.m_min = m_min;
        Ok(self)
    }

    pub fn with_max_centers(mut self, max_centers: usize) -> Self {
        self.max_centers = max_centers;
        self
    }

    pub fn q_for(&self, m: usize) -> Result<usize> {
        match self.q_override {
            Some(q) => Ok(q),
            None => default_q(m.max(2)),
        }
    }

    fn centers_through(&self, count: usize) -> Result<Cow<'_, CenterSequence>> {
        if count <= self.centers.len() {
            return Ok(Cow::Borrowed(&self.centers));
        }
        if count > self.max_centers {
            return Err(Error::InsufficientData {
                required: count,
                available: self.max_centers,
            });
        }
        let mut c = self.centers.clone();
        c.extend_to(count)?;
        Ok(Cow::Owned(c))
    }

    fn sampling_density(&self) -> Option<&DensityTable> {
        match self.centers.kind() {
            CenterKind::Iid { table, .. } => Some(table),
            _ => None,
        }
    }
}

/// `mu_k = f dx|_{I_k} / |I_k|`; its mass is the mean of `f` over `I_k`.
pub fn component_measure(f: &DensitySpec, interval: &Interval) -> Result<PiecewiseMeasure> {
    let m = interval
        .materialize()
        .ok_or_else(|| Error::invalid("interval", "nothing of positive length inside [0, 1]"))?;
    let density = if m.hi > m.lo {
        f.restrict(m.lo, m.hi)?
    } else {
        DensitySpec::constant(f.eval(m.interval.center()))?
    };
    Ok(PiecewiseMeasure::single(Atom::new(m.interval, density, 1.0)?))
}

/// `lambda (3n - 1) / (2n) + C0 / n`, the self sum of `mu_{A_n}` for
/// `l_k = exp(-lambda k)` and constant `f`.
pub fn self_sum_identity(lambda: f64, n: usize) -> f64 {
    let nf = n as f64;
    lambda * (3.0 * nf - 1.0) / (2.0 * nf) + C0 / nf
}

/// One normalized level: constant-density atoms on the kept intervals.
#[derive(Clone, Debug)]
struct Level {
    measure: PiecewiseMeasure,
    normalization: f64,
}

/// Normalize `ln_weights` (entries `-inf` are dropped) into a probability
/// measure over `intervals`.
fn level_from_log_weights(intervals: &[Interval], ln_weights: &[f64]) -> Result<Level> {
    let top = ln_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::invalid("level", "no interval carries positive mass"));
    }
    let rel: Vec<f64> = ln_weights.iter().map(|&l| (l - top).exp()).collect();
    let sum: f64 = rel.iter().sum();
    let atoms = intervals
        .iter()
        .zip(&rel)
        .filter(|(_, &w)| w > 0.0)
        .map(|(iv, &w)| Atom::uniform(*iv, w / sum))
        .collect::<Result<Vec<_>>>()?;
    Ok(Level {
        measure: PiecewiseMeasure::new(atoms)?,
        normalization: top.exp() * sum / intervals.len().max(1) as f64,
    })
}

fn check_disjoint(intervals: &[Interval], indices: &[usize]) -> Result<()> {
    if let Some(&(a, b)) = overlapping_pairs(intervals).first() {
        return Err(Error::NotDisjoint {
            first: indices[a],
            second: indices[b],
        });
    }
    Ok(())
}

fn frozen_level(
    config: &RedistributionConfig,
    centers: &CenterSequence,
    n: usize,
) -> Result<(Level, Vec<usize>, Vec<Interval>)> {
    let range = LevelBlocks::block(n);
    let indices: Vec<usize> = range.clone().collect();
    let (intervals, _) = block_intervals(&config.schedule, centers, range)?;
    check_disjoint(&intervals, &indices)?;
    let lw = indices
        .iter()
        .map(|&k| Ok(config.f.eval(centers.get(k)?).ln()))
        .collect::<Result<Vec<_>>>()?;
    Ok((level_from_log_weights(&intervals, &lw)?, indices, intervals))
}

/// `mu_hat_n = mu_{A_n} / mu_{A_n}(V_n)` with `f` frozen at each center.
/// The breakdown is that of `mu_hat_n`; its `normalization` field holds
/// `mu_{A_n}(V_n)`.
pub fn single_level(config: &RedistributionConfig, n: usize) -> Result<(PiecewiseMeasure, EnergyBreakdown)> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let centers = config.centers_through(2 * n - 1)?;
    let (level, _, _) = frozen_level(config, &centers, n)?;
    let mut b = measure_energy(&level.measure, config.tol)?;
    b.normalization = level.normalization;
    Ok((level.measure.into_disjoint()?, b))
}

/// `mu^m` with its level-by-level decomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiLevel {
    pub m: usize,
    pub q: usize,
    pub levels: Vec<usize>,
    pub measure: PiecewiseMeasure,
    /// `self_sum` is the level-diagonal part, `outer_sum` the cross-level part.
    pub breakdown: EnergyBreakdown,
    /// `cells[s][t] = I(mu_hat_s, mu_hat_t) / q^2`.
    pub cells: Vec<Vec<f64>>,
    /// `I(mu_hat_s)` per level.
    pub level_energies: Vec<f64>,
}

impl MultiLevel {
    pub fn energy(&self) -> f64 {
        self.breakdown.total
    }
}

fn assemble(m: usize, levels: Vec<usize>, parts: Vec<Level>, tol: f64) -> Result<MultiLevel> {
    let q = parts.len();
    let qf = q as f64;
    let mut cells = vec![vec![0.0; q]; q];
    let mut level_energies = Vec::with_capacity(q);
    let mut ff_pairs = 0;
    let mut ff_bound = 0.0;
    let cell_tol = tol / (qf * qf);
    for (s, p) in parts.iter().enumerate() {
        let b = measure_energy(&p.measure, cell_tol)?;
        ff_pairs += b.farfield_pairs;
        ff_bound += b.farfield_bound / (qf * qf);
        level_energies.push(b.total);
        cells[s][s] = b.total / (qf * qf);
        for t in 0..s {
            let v = mutual_energy(&parts[t].measure, &p.measure, cell_tol)? / (qf * qf);
            cells[s][t] = v;
            cells[t][s] = v;
        }
    }
    let self_sum: f64 = (0..q).map(|s| cells[s][s]).sum();
    let outer_sum: f64 = (0..q)
        .map(|s| (0..q).filter(|&t| t != s).map(|t| cells[s][t]).sum::<f64>())
        .sum();
    let atoms: Vec<Atom> = parts
        .iter()
        .flat_map(|p| {
            p.measure.atoms().iter().map(|a| Atom {
                weight: a.weight / qf,
                ..a.clone()
            })
        })
        .collect();
    let measure = PiecewiseMeasure::new(atoms)?;
    let normalization = measure.total_mass();
    Ok(MultiLevel {
        m,
        q,
        levels,
        measure,
        breakdown: EnergyBreakdown {
            self_sum,
            outer_sum,
            normalization,
            total: self_sum + outer_sum,
            farfield_pairs: ff_pairs,
            farfield_bound: ff_bound,
        },
        cells,
        level_energies,
    })
}

fn level_list(m: usize, q: usize) -> Vec<usize> {
    LevelBlocks::b(q).map(|s| m << s).collect()
}

/// `mu^m = (1/q) sum_{s < q} mu_hat_{2^s m}`.
pub fn multi_level(config: &RedistributionConfig, m: usize) -> Result<MultiLevel> {
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    let q = config.q_for(m)?;
    let levels = level_list(m, q);
    let top = 2 * levels[q - 1] - 1;
    let centers = config.centers_through(top)?;
    let mut parts = Vec::with_capacity(q);
    let mut all = Vec::new();
    let mut all_idx = Vec::new();
    for &n in &levels {
        let (level, idx, ivs) = frozen_level(config, &centers, n)?;
        all.extend(ivs);
        all_idx.extend(idx);
        parts.push(level);
    }
    check_disjoint(&all, &all_idx)?;
    assemble(m, levels, parts, config.tol)
}

/// Outcome of one re-distribution step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepResult {
    /// Base level `n`; the measure averages levels `n, 2n, ..., 2^{q-1} n`.
    pub level: usize,
    pub q: usize,
    pub nu_prime: PiecewiseMeasure,
    pub energy_before: f64,
    pub energy_after: f64,
    pub budget: f64,
    pub discarded_straddlers: usize,
    /// Shorter member of each overlapping pair, removed before assembly.
    pub discarded_overlaps: usize,
    /// Smallest per-level fraction of intervals kept.
    pub occupancy: f64,
    pub contained: bool,
    pub attempts: Vec<usize>,
    /// One past the largest index used.
    pub next_index: usize,
}

impl StepResult {
    pub fn increment(&self) -> f64 {
        self.energy_after - self.energy_before
    }
}

struct SupportPiece {
    lo: f64,
    hi: f64,
    interval: Interval,
    atom: usize,
}

fn support_pieces(nu: &PiecewiseMeasure) -> Vec<SupportPiece> {
    let mut out: Vec<SupportPiece> = nu
        .atoms()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.mass() > 0.0)
        .filter_map(|(i, a)| {
            a.interval.materialize().map(|m| SupportPiece {
                lo: m.lo,
                hi: m.hi,
                interval: m.interval,
                atom: i,
            })
        })
        .collect();
    out.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    out
}

/// `ln` of the density of `nu` at `x`, given the support piece owning `x`.
fn ln_density_at(nu: &PiecewiseMeasure, piece: &SupportPiece, x: f64) -> f64 {
    let a = &nu.atoms()[piece.atom];
    let t = if piece.hi > piece.lo {
        ((x - piece.lo) / (piece.hi - piece.lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    a.weight.ln() + a.density.eval(t).ln() - piece.interval.loglen()
}

fn sampling_mass(table: Option<&DensityTable>, pieces: &[SupportPiece]) -> f64 {
    pieces
        .iter()
        .map(|p| match table {
            Some(t) => t.cdf(p.hi) - t.cdf(p.lo),
            None => p.interval.length(),
        })
        .sum::<f64>()
        .min(1.0)
}

/// Remove the later (shorter) interval of every overlapping pair.
fn drop_overlaps(levels: &mut [(crate::setgen::Restriction, Vec<usize>)]) -> usize {
    let mut flat = Vec::new();
    let mut at = Vec::new();
    for (s, (r, idx)) in levels.iter().enumerate() {
        for (j, iv) in r.kept.iter().enumerate() {
            flat.push(*iv);
            at.push((s, j, idx[j]));
        }
    }
    let mut doomed: Vec<(usize, usize)> = overlapping_pairs(&flat)
        .into_iter()
        .map(|(a, b)| {
            if at[a].2 > at[b].2 {
                (at[a].0, at[a].1)
            } else {
                (at[b].0, at[b].1)
            }
        })
        .collect();
    doomed.sort_unstable();
    doomed.dedup();
    for &(s, j) in doomed.iter().rev() {
        let (r, idx) = &mut levels[s];
        r.kept.remove(j);
        r.positions.remove(j);
        r.owners.remove(j);
        idx.remove(j);
    }
    doomed.len()
}

/// Whether every atom of `inner` lies inside an atom of `outer`.
pub fn support_contained(inner: &PiecewiseMeasure, outer: &PiecewiseMeasure) -> bool {
    let support = outer.support();
    let v = inner.support();
    restrict_support(&support, &v).kept.len() == v.len()
}

/// Occupancy below this fraction of the expected value skips a level.
const OCCUPANCY_FLOOR: f64 = 0.5;

/// Search base levels `n = m_min, 2 m_min, ...` for a multi-level measure on
/// `supp nu ∩ ⋃ V_{2^s n}` (containment rule) with `I(nu') < I(nu) + eps`.
pub fn redistribution_step(
    nu: &PiecewiseMeasure,
    config: &RedistributionConfig,
    eps: f64,
    m_min: usize,
) -> Result<StepResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps", format!("{eps} must be > 0")));
    }
    if m_min == 0 {
        return Err(Error::invalid("m_min", "must be >= 1"));
    }
    let mass = nu.total_mass();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("nu", format!("total mass {mass} is not 1")));
    }
    let pieces = support_pieces(nu);
    if pieces.is_empty() {
        return Err(Error::invalid("nu", "empty support"));
    }
    let support: Vec<Interval> = pieces.iter().map(|p| p.interval).collect();
    let phi = config.sampling_density();
    let expected = sampling_mass(phi, &pieces);
    let energy_before = measure_energy(nu, config.tol)?.total;

    let mut n = m_min;
    let mut best_occ: f64 = 0.0;
    let mut attempts = Vec::new();
    loop {
        let q = config.q_for(n)?;
        let levels = level_list(n, q);
        let top = 2 * levels[q - 1] - 1;
        let centers = match config.centers_through(top) {
            Ok(c) => c,
            Err(Error::InsufficientData { .. }) => {
                return Err(Error::LevelExhaustion {
                    last_level: n,
                    occupancy: best_occ,
                })
            }
            Err(e) => return Err(e),
        };
        attempts.push(n);

        let mut occ = f64::INFINITY;
        let mut straddlers = 0;
        let mut kept_levels = Vec::with_capacity(q);
        for &l in &levels {
            let range = LevelBlocks::block(l);
            let (ivs, _) = block_intervals(&config.schedule, &centers, range.clone())?;
            let r = restrict_support(&support, &ivs);
            straddlers += r.straddlers;
            occ = occ.min(r.kept.len() as f64 / l as f64);
            let idx: Vec<usize> = r.positions.iter().map(|&p| range.start + p).collect();
            kept_levels.push((r, idx));
        }
        best_occ = best_occ.max(occ);
        let overlaps = drop_overlaps(&mut kept_levels);
        let admissible = kept_levels.iter().all(|(r, _)| !r.kept.is_empty()) && occ >= OCCUPANCY_FLOOR * expected;
        if admissible {
            let mut parts = Vec::with_capacity(q);
            let mut all = Vec::new();
            let mut all_idx = Vec::new();
            for (r, idx) in &kept_levels {
                let lw = idx
                    .iter()
                    .zip(&r.owners)
                    .map(|(&k, &owner)| {
                        let c = centers.get(k)?;
                        let ln_phi = phi.map_or(0.0, |t| t.eval(c).ln());
                        Ok(ln_density_at(nu, &pieces[owner], c) - ln_phi)
                    })
                    .collect::<Result<Vec<_>>>()?;
                parts.push(level_from_log_weights(&r.kept, &lw)?);
                all.extend(r.kept.iter().copied());
                all_idx.extend(idx.iter().copied());
            }
            check_disjoint(&all, &all_idx)?;
            let ml = assemble(n, levels, parts, config.tol)?;
            log::info!("level {n}: I(nu') = {} against {} + {eps}", ml.energy(), energy_before);
            if ml.energy() < energy_before + eps {
                let nu_prime = ml.measure.into_probability()?;
                let contained = support_contained(&nu_prime, nu);
                return Ok(StepResult {
                    level: n,
                    q,
                    energy_before,
                    energy_after: ml.breakdown.total,
                    budget: eps,
                    discarded_straddlers: straddlers,
                    discarded_overlaps: overlaps,
                    occupancy: occ,
                    contained,
                    attempts,
                    next_index: top + 1,
                    nu_prime,
                });
            }
        } else {
            log::debug!("level {n}: occupancy {occ} below floor {}", OCCUPANCY_FLOOR * expected);
        }
        n *= 2;
    }
}

/// `min(f_{[0,1]}, f_{[0,1]}(delta))` renormalized, with `f_{[0,1]}` the
/// arcsine density.
pub fn clip_equilibrium(delta: f64) -> Result<DensitySpec> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid("delta_clip", format!("{delta} must lie in (0, 1/2)")));
    }
    let arcsine = |x: f64| 1.0 / (PI * (x * (1.0 - x)).sqrt());
    let cap = arcsine(delta);
    let t0 = (1.0 - 2.0 * delta).acos();
    let t1 = PI - t0;
    let inner = 160;
    let mut knots = vec![0.0, delta];
    for i in 1..inner {
        let t = t0 + (t1 - t0) * i as f64 / inner as f64;
        let x = 0.5 * (1.0 - t.cos());
        if x > *knots.last().unwrap() && x < 1.0 - delta {
            knots.push(x);
        }
    }
    if 1.0 - delta > *knots.last().unwrap() {
        knots.push(1.0 - delta);
    }
    knots.push(1.0);
    let values: Vec<f64> = knots
        .iter()
        .map(|&x| if x <= 0.0 || x >= 1.0 { cap } else { arcsine(x).min(cap) })
        .collect();
    let raw = DensitySpec::sampled(knots, values)?;
    let mean = raw.mean();
    Ok(raw.scaled(1.0 / mean))
}

/// Probability measure on `[0, 1]` with density `h`.
pub fn density_measure(h: &DensitySpec) -> Result<PiecewiseMeasure> {
    let mean = h.mean();
    if !(mean > 0.0) {
        return Err(Error::invalid("density", "integrates to zero"));
    }
    PiecewiseMeasure::single(Atom::new(Interval::unit(), h.clone(), 1.0 / mean)?).into_probability()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Substitution {
    pub f: DensitySpec,
    pub floor: f64,
    /// `∫ h` over the region where `phi < floor`.
    pub capped_mass: f64,
}

/// `f = h / phi`, with `phi` replaced by `floor = 1e-3 sup phi` where it is
/// smaller.
pub fn substitute_density(h: &DensitySpec, phi: &DensityTable) -> Result<Substitution> {
    h.validate()?;
    let floor = 1e-3 * phi.sup();
    for c in phi.as_piecewise().cells() {
        if c.a == 0.0 && c.b == 0.0 {
            let mass = crate::kernel::quadrature::gl20_integrate(|x| h.eval(x), c.p, c.p + c.w);
            if mass > 0.0 {
                return Err(Error::invalid(
                    "phi",
                    format!("vanishes on [{}, {}] where h has mass {mass}", c.p, c.p + c.w),
                ));
            }
        }
    }
    let mut knots: Vec<f64> = (0..=512).map(|i| i as f64 / 512.0).collect();
    knots.extend(h.breakpoints());
    knots.extend_from_slice(phi.knots());
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    *knots.last_mut().unwrap() = 1.0;
    let ratio = |x: f64| {
        let p = phi.eval(x);
        h.eval(x) / if p < floor { floor } else { p }
    };
    let values: Vec<f64> = knots.iter().map(|&x| ratio(x)).collect();
    let capped_mass = knots
        .windows(2)
        .map(|w| {
            crate::kernel::quadrature::gl20_integrate(|x| if phi.eval(x) < floor { h.eval(x) } else { 0.0 }, w[0], w[1])
        })
        .sum();
    if capped_mass > 0.0 {
        log::warn!("substitution capped h/phi on a region carrying h-mass {capped_mass}");
    }
    Ok(Substitution {
        f: DensitySpec::sampled(knots, values)?,
        floor,
        capped_mass,
    })
}

/// Stages of [`nested_driver`].
#[derive(Clone, Debug)]
pub struct NestedRun {
    pub eps: f64,
    pub delta_clip: f64,
    pub initial_energy: f64,
    pub steps: Vec<StepResult>,
    /// Error that ended the run early, if any.
    pub stopped: Option<Error>,
}

impl NestedRun {
    pub fn final_energy(&self) -> f64 {
        self.steps.last().map_or(self.initial_energy, |s| s.energy_after)
    }

    /// Budget of stage `i >= 1`.
    pub fn stage_budget(eps: f64, i: usize) -> f64 {
        eps / 2f64.powi(i as i32 + 1)
    }

    /// Every increment below its budget and the sum below `eps`.
    pub fn ledger_holds(&self) -> bool {
        let each = self
            .steps
            .iter()
            .enumerate()
            .all(|(i, s)| s.increment() < Self::stage_budget(self.eps, i + 1));
        let total: f64 = self.steps.iter().map(StepResult::increment).sum();
        each && total < self.eps
    }

    pub fn target(&self) -> f64 {
        4f64.ln() + 2.0 * self.eps
    }
}

/// Clip level for the starting measure: the largest of `1/4, 1/8, ...` whose
/// energy is below `log 4 + eps`.
pub fn choose_clip(eps: f64, tol: f64) -> Result<(f64, PiecewiseMeasure, f64)> {
    let mut delta = 0.25;
    while delta > 1e-6 {
        let nu = density_measure(&clip_equilibrium(delta)?)?;
        let e = measure_energy(&nu, tol)?.total;
        if e < 4f64.ln() + eps {
            return Ok((delta, nu, e));
        }
        delta *= 0.5;
    }
    Err(Error::invalid("eps", format!("{eps} too small for any clip level")))
}

/// Chain `stages` re-distribution steps from a clipped equilibrium measure;
/// stage `i` gets budget `eps / 2^{i+1}`. A failing stage ends the run and is
/// reported in `stopped`.
pub fn nested_driver(config: &RedistributionConfig, eps: f64, stages: usize) -> Result<NestedRun> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps", format!("{eps} must be > 0")));
    }
    if stages == 0 {
        return Err(Error::invalid("stages", "must be >= 1"));
    }
    let (delta_clip, nu0, initial_energy) = choose_clip(eps, config.tol)?;
    let mut run = NestedRun {
        eps,
        delta_clip,
        initial_energy,
        steps: Vec::new(),
        stopped: None,
    };
    let mut nu = nu0;
    let mut m_min = config.m_min;
    for i in 1..=stages {
        match redistribution_step(&nu, config, NestedRun::stage_budget(eps, i), m_min) {
            Ok(step) => {
                nu = step.nu_prime.clone();
                m_min = step.next_index.next_power_of_two().max(2 * m_min);
                run.steps.push(step);
            }
            Err(e) => {
                log::warn!("stage {i} stopped: {e}");
                run.stopped = Some(e);
                break;
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setgen::sample_centers_iid;
    use approx::assert_relative_eq;

    fn unit_config(lambda: f64, seed: u64) -> RedistributionConfig {
        RedistributionConfig::new(
            LengthSchedule::new(lambda, 1.0).unwrap(),
            sample_centers_iid(&DensityTable::uniform(), seed, 0),
            DensitySpec::Constant(1.0),
        )
        .unwrap()
    }

    #[test]
    fn component_masses() {
        let iv = Interval::from_bounds(0.2, 0.3).unwrap();
        let mu = component_measure(&DensitySpec::Constant(1.0), &iv).unwrap();
        assert_relative_eq!(mu.total_mass(), 1.0);
        let mu = component_measure(&DensitySpec::Constant(2.0), &iv).unwrap();
        assert_relative_eq!(mu.total_mass(), 2.0);
        let e = measure_energy(
            &component_measure(&DensitySpec::Constant(1.0), &Interval::unit()).unwrap(),
            1e-12,
        )
        .unwrap();
        assert_eq!(e.total, C0);
    }

    #[test]
    fn single_level_self_sum() {
        let cfg = unit_config(1.0, 3);
        let (mu, b) = single_level(&cfg, 10).unwrap();
        assert_relative_eq!(mu.total_mass(), 1.0, epsilon = 1e-12);
        assert_eq!(b.normalization, 1.0);
        assert_relative_eq!(b.self_sum, 1.45 + C0 / 10.0, max_relative = 1e-14);
        assert_relative_eq!(b.self_sum, self_sum_identity(1.0, 10), max_relative = 1e-14);
        assert_eq!(b.total, b.self_sum + b.outer_sum);
    }

    #[test]
    fn overlap_is_named() {
        let cfg = RedistributionConfig::new(
            LengthSchedule::new(0.01, 1.0).unwrap(),
            CenterSequence::explicit(
                vec![0.5; 7]
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c + 1e-4 * i as f64)
                    .collect(),
            )
            .unwrap(),
            DensitySpec::Constant(1.0),
        )
        .unwrap();
        match single_level(&cfg, 2) {
            Err(Error::NotDisjoint { first, second }) => assert!(first >= 2 && second <= 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_level_average() {
        let cfg = unit_config(1.0, 5).with_q(1).unwrap();
        let ml = multi_level(&cfg, 16).unwrap();
        let (_, b) = single_level(&cfg, 16).unwrap();
        assert_eq!(ml.levels, vec![16]);
        assert_relative_eq!(ml.energy(), b.total, max_relative = 1e-12);
    }

    #[test]
    fn cells_reassemble() {
        let cfg = unit_config(1.0, 9).with_q(3).unwrap();
        let ml = multi_level(&cfg, 8).unwrap();
        let sum: f64 = ml.cells.iter().flatten().sum();
        assert_relative_eq!(sum, ml.energy(), max_relative = 1e-12);
        assert_relative_eq!(ml.measure.total_mass(), 1.0, epsilon = 1e-12);
        let direct = measure_energy(&ml.measure, 1e-10).unwrap().total;
        assert_relative_eq!(direct, ml.energy(), max_relative = 1e-9);
        let max_self = ml.level_energies.iter().cloned().fold(f64::MIN, f64::max);
        assert!(ml.breakdown.self_sum <= max_self / 3.0 + 1e-12);
    }

    #[test]
    fn fixed_q_bias() {
        // level self sums stay near 1.5 lambda, so mu^m carries 1.5 lambda / q on top
        let lambda = 1.0;
        let q = 4.0;
        let n = 1 << 20;
        let self_part = self_sum_identity(lambda, n);
        assert_relative_eq!(self_part, 1.5 * lambda, epsilon = 1e-5);
        assert_relative_eq!(C0 + self_part / q, 1.875, epsilon = 1e-5);
    }

    #[test]
    fn clip_shape() {
        let d = clip_equilibrium(0.25).unwrap();
        assert_relative_eq!(d.mean(), 1.0, epsilon = 1e-14);
        for x in [0.05, 0.2, 0.4] {
            assert_relative_eq!(d.eval(x), d.eval(1.0 - x), max_relative = 1e-9);
        }
        let near_half = clip_equilibrium(0.4999).unwrap();
        assert_relative_eq!(near_half.eval(0.3), 1.0, epsilon = 1e-6);
        assert!(clip_equilibrium(0.0).is_err());
        assert!(clip_equilibrium(0.5).is_err());
    }

    #[test]
    fn substitution_identities() {
        let h = clip_equilibrium(0.1).unwrap();
        let s = substitute_density(&h, &DensityTable::uniform()).unwrap();
        for x in [0.0, 0.05, 0.3, 0.77] {
            assert_relative_eq!(s.f.eval(x), h.eval(x), max_relative = 1e-6);
        }
        assert_eq!(s.capped_mass, 0.0);
        let phi = DensityTable::new(vec![0.0, 1.0], vec![0.5, 1.5]).unwrap();
        let s = substitute_density(&DensitySpec::Sampled(phi.as_piecewise().clone()), &phi).unwrap();
        for x in [0.0, 0.1, 0.5, 0.9, 1.0] {
            assert_relative_eq!(s.f.eval(x), 1.0, epsilon = 1e-12);
        }
        let gap = DensityTable::new(vec![0.0, 0.4, 0.6, 1.0], vec![0.0, 0.0, 2.5, 2.5]).unwrap();
        assert!(substitute_density(&DensitySpec::Constant(1.0), &gap).is_err());
    }

    #[test]
    fn step_with_slack_budget() {
        let cfg = unit_config(0.5, 21).with_q(2).unwrap();
        let nu = density_measure(&DensitySpec::Constant(1.0)).unwrap();
        let r = redistribution_step(&nu, &cfg, 10.0, 16).unwrap();
        assert_eq!(r.level, 16);
        assert_eq!(r.attempts, vec![16]);
        assert!(r.contained);
        assert_relative_eq!(r.nu_prime.total_mass(), 1.0, epsilon = 1e-9);
        assert!(redistribution_step(&nu, &cfg, 0.0, 16).is_err());
    }

    #[test]
    fn missed_support_exhausts() {
        let centers = CenterSequence::explicit((1..=200).map(|k| 0.05 + 0.4 * k as f64 / 201.0).collect()).unwrap();
        let cfg = RedistributionConfig::new(
            LengthSchedule::new(1.0, 1.0).unwrap(),
            centers,
            DensitySpec::Constant(1.0),
        )
        .unwrap()
        .with_q(1)
        .unwrap();
        let nu = PiecewiseMeasure::single(Atom::uniform(Interval::from_bounds(0.6, 0.9).unwrap(), 1.0).unwrap());
        match redistribution_step(&nu, &cfg, 1.0, 4) {
            Err(Error::LevelExhaustion { occupancy, .. }) => assert_eq!(occupancy, 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_rejects_zero_budget() {
        let cfg = unit_config(0.25, 1);
        assert!(nested_driver(&cfg, 0.0, 1).is_err());
        assert!(nested_driver(&cfg, 0.5, 0).is_err());
    }
}

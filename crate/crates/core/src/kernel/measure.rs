use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::density::DensitySpec;
use crate::kernel::interval::{Interval, Relation};
use crate::kernel::pair::{farfield_interaction, uniform_interaction};
use crate::kernel::quadrature::interaction_quadrature;

/// `d mu = weight * rho(t) dt` on the reference interval of `interval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub interval: Interval,
    pub density: DensitySpec,
    pub weight: f64,
}

impl Atom {
    pub fn new(interval: Interval, density: DensitySpec, weight: f64) -> Result<Self> {
        density.validate()?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::invalid("weight", format!("{weight} must be finite and >= 0")));
        }
        Ok(Self {
            interval,
            density,
            weight,
        })
    }

    /// Uniform probability measure on `interval` times `weight`.
    pub fn uniform(interval: Interval, weight: f64) -> Result<Self> {
        Self::new(interval, DensitySpec::Constant(1.0), weight)
    }

    pub fn mass(&self) -> f64 {
        self.weight * self.density.mean()
    }

    /// Split at the absolute point `x` inside the clipped interval; the two
    /// pieces carry exactly the original measure.
    pub fn split(&self, x: f64) -> Result<(Atom, Atom)> {
        let m = self
            .interval
            .materialize()
            .ok_or_else(|| Error::invalid("atom", "interval has no positive length"))?;
        if !(x > m.lo && x < m.hi) {
            return Err(Error::invalid("x", format!("{x} not inside ({}, {})", m.lo, m.hi)));
        }
        let theta = (x - m.lo) / (m.hi - m.lo);
        let left = Atom::new(
            Interval::from_bounds(m.lo, x)?,
            self.density.restrict(0.0, theta)?,
            self.weight * theta,
        )?;
        let right = Atom::new(
            Interval::from_bounds(x, m.hi)?,
            self.density.restrict(theta, 1.0)?,
            self.weight * (1.0 - theta),
        )?;
        Ok((left, right))
    }
}

/// Finite weighted collection of interval atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseMeasure {
    atoms: Vec<Atom>,
    probability: bool,
    disjoint: bool,
}

impl PiecewiseMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            a.density.validate()?;
            if !a.weight.is_finite() || a.weight < 0.0 {
                return Err(Error::invalid(
                    "weight",
                    format!("{} must be finite and >= 0", a.weight),
                ));
            }
        }
        let m = Self {
            atoms,
            probability: false,
            disjoint: false,
        };
        if !m.total_mass().is_finite() {
            return Err(Error::invalid("atoms", "total mass is not finite"));
        }
        Ok(m)
    }

    pub fn single(atom: Atom) -> Self {
        Self {
            atoms: vec![atom],
            probability: false,
            disjoint: true,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(Atom::mass).sum()
    }

    pub fn is_probability(&self) -> bool {
        self.probability
    }

    pub fn is_disjoint(&self) -> bool {
        self.disjoint
    }

    /// Set the probability flag after checking the mass is 1 within 1e-9.
    pub fn into_probability(mut self) -> Result<Self> {
        let m = self.total_mass();
        if (m - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mass", format!("total mass {m} is not 1")));
        }
        self.probability = true;
        Ok(self)
    }

    /// Set the disjoint flag after checking materialized intervals pairwise.
    pub fn into_disjoint(mut self) -> Result<Self> {
        if let Some((i, j)) = first_overlap(self.atoms.iter().map(|a| a.interval)) {
            return Err(Error::NotDisjoint { first: i, second: j });
        }
        self.disjoint = true;
        Ok(self)
    }

    /// Multiply every weight by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    weight: a.weight * c,
                    ..a.clone()
                })
                .collect(),
            probability: false,
            disjoint: self.disjoint,
        }
    }

    /// Divide by the total mass and set the probability flag.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.total_mass();
        if !(m > 0.0) {
            return Err(Error::invalid("mass", "cannot normalize a zero measure"));
        }
        let mut out = self.scaled(1.0 / m);
        out.probability = (out.total_mass() - 1.0).abs() <= 1e-9;
        Ok(out)
    }

    /// Clipped supports of the atoms carrying positive mass.
    pub fn support(&self) -> Vec<Interval> {
        self.atoms
            .iter()
            .filter(|a| a.mass() > 0.0)
            .filter_map(|a| a.interval.materialize().map(|m| m.interval))
            .collect()
    }
}

/// Indices of some overlapping pair, in original order, if any.
pub(crate) fn first_overlap(intervals: impl Iterator<Item = Interval>) -> Option<(usize, usize)> {
    let mut spans: Vec<(f64, f64, usize, Interval)> = intervals
        .enumerate()
        .map(|(i, iv)| {
            let eff = iv.materialize().map(|m| m.interval).unwrap_or(iv);
            let (lo, hi) = eff.bounds();
            (lo, hi, i, eff)
        })
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut reach: Option<(f64, usize, Interval)> = None;
    for &(lo, hi, i, eff) in &spans {
        if let Some((max_hi, j, other)) = reach {
            if lo < max_hi && eff.relation(&other) != Relation::Disjoint {
                return Some((j.min(i), j.max(i)));
            }
        }
        if reach.is_none_or(|r| hi > r.0) {
            reach = Some((hi, i, eff));
        }
    }
    None
}

/// The two sums of the energy of a finite measure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub self_sum: f64,
    pub outer_sum: f64,
    pub normalization: f64,
    pub total: f64,
    pub farfield_pairs: u64,
    pub farfield_bound: f64,
}

struct Eff<'a> {
    iv: Interval,
    density: &'a DensitySpec,
    weight: f64,
    index: usize,
}

fn effective_atoms(mu: &PiecewiseMeasure) -> Vec<Eff<'_>> {
    mu.atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| a.weight > 0.0 && !a.density.is_zero())
        .filter_map(|(index, a)| {
            let iv = match a.interval.materialize() {
                Some(m) => m.interval,
                None if a.interval.loglen() == f64::NEG_INFINITY => a.interval,
                None => return None,
            };
            Some(Eff {
                iv,
                density: &a.density,
                weight: a.weight,
                index,
            })
        })
        .collect()
}

/// Per-unit-weight interaction of two effective atoms.
fn unit_pair(a: &Eff, b: &Eff, tol: f64) -> Result<f64> {
    match (a.density.as_constant(), b.density.as_constant()) {
        (Some(fa), Some(fb)) => uniform_interaction(&a.iv, &b.iv, a.index, b.index).map(|v| fa * fb * v),
        _ => {
            // canonical argument order keeps the value symmetric bit for bit
            let swap = (b.iv.loglen(), b.iv.center()) > (a.iv.loglen(), a.iv.center());
            let (x, y) = if swap { (b, a) } else { (a, b) };
            interaction_quadrature(&x.iv, x.density, &y.iv, y.density, tol).map_err(|e| match e {
                Error::PartialOverlap { .. } => Error::PartialOverlap {
                    first: a.index.min(b.index),
                    second: a.index.max(b.index),
                },
                other => other,
            })
        }
    }
}

struct Row {
    sum: f64,
    farfield: u64,
    bound: f64,
}

/// Weighted cross term for atoms `a`, `b`; `ff_budget` is the largest
/// weighted far-field bound accepted in place of the exact pair.
fn cross(a: &Eff, b: &Eff, tol: f64, ff_budget: f64, row: &mut Row) -> Result<()> {
    let ww = a.weight * b.weight;
    if let (Some(fa), Some(fb)) = (a.density.as_constant(), b.density.as_constant()) {
        if a.iv.center() != b.iv.center() && ff_budget > 0.0 {
            let d = (a.iv.center() - b.iv.center()).abs();
            let ratio_ok = a.iv.loglen().max(b.iv.loglen()) < d.ln() - 20.0;
            if ratio_ok {
                if let Ok(ff) = farfield_interaction(&a.iv, fa, &b.iv, fb) {
                    if ww * ff.bound <= ff_budget {
                        row.sum += ww * ff.value;
                        row.farfield += 1;
                        row.bound += ww * ff.bound;
                        return Ok(());
                    }
                }
            }
        }
    }
    let pair_tol = (tol / ww.max(1e-300)).max(1e-13);
    row.sum += ww * unit_pair(a, b, pair_tol)?;
    Ok(())
}

/// `I(mu)` split into self and outer sums, with deterministic summation
/// order independent of the thread count.
pub fn measure_energy(mu: &PiecewiseMeasure, tol: f64) -> Result<EnergyBreakdown> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("{tol} must be > 0")));
    }
    let eff = effective_atoms(mu);
    let n = eff.len();
    let npairs = (n * n.saturating_sub(1) / 2).max(1) as f64;
    let pair_tol = tol / npairs;
    let ff_budget = pair_tol * 0.5;

    let selfs: Vec<f64> = eff
        .par_iter()
        .map(|a| {
            unit_pair(
                a,
                a,
                (tol / n.max(1) as f64 / (a.weight * a.weight).max(1e-300)).max(1e-13),
            )
            .map(|v| a.weight * a.weight * v)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Row {
                sum: 0.0,
                farfield: 0,
                bound: 0.0,
            };
            for j in i + 1..n {
                cross(&eff[i], &eff[j], pair_tol, ff_budget, &mut row)?;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let self_sum: f64 = selfs.iter().sum();
    let mut half_outer = 0.0;
    let mut farfield_pairs = 0;
    let mut farfield_bound = 0.0;
    for r in &rows {
        half_outer += r.sum;
        farfield_pairs += r.farfield;
        farfield_bound += r.bound;
    }
    let outer_sum = 2.0 * half_outer;
    Ok(EnergyBreakdown {
        self_sum,
        outer_sum,
        normalization: mu.total_mass(),
        total: self_sum + outer_sum,
        farfield_pairs,
        farfield_bound: 2.0 * farfield_bound,
    })
}

fn measure_key(mu: &PiecewiseMeasure) -> Vec<(u64, u64, u64)> {
    mu.atoms
        .iter()
        .map(|a| {
            (
                a.interval.center().to_bits(),
                a.interval.loglen().to_bits(),
                a.weight.to_bits(),
            )
        })
        .collect()
}

/// `I(mu, nu)`; swapping the arguments gives the identical result.
pub fn mutual_energy(mu: &PiecewiseMeasure, nu: &PiecewiseMeasure, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("{tol} must be > 0")));
    }
    if mu == nu {
        return measure_energy(mu, tol).map(|b| b.total);
    }
    let (first, second) = if measure_key(mu) <= measure_key(nu) {
        (mu, nu)
    } else {
        (nu, mu)
    };
    let ea = effective_atoms(first);
    let eb = effective_atoms(second);
    let npairs = (ea.len() * eb.len()).max(1) as f64;
    let pair_tol = tol / npairs;
    let rows: Vec<Row> = ea
        .par_iter()
        .map(|a| {
            let mut row = Row {
                sum: 0.0,
                farfield: 0,
                bound: 0.0,
            };
            for b in &eb {
                cross(a, b, pair_tol, 0.5 * pair_tol, &mut row)?;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().map(|r| r.sum).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::C0;
    use approx::assert_relative_eq;

    fn unit() -> PiecewiseMeasure {
        PiecewiseMeasure::single(Atom::uniform(Interval::unit(), 1.0).unwrap())
    }

    #[test]
    fn single_unit_atom() {
        let b = measure_energy(&unit(), 1e-12).unwrap();
        assert_eq!(b.total, C0);
        assert_eq!(b.outer_sum, 0.0);
        assert_eq!(b.normalization, 1.0);
    }

    #[test]
    fn halves_reassemble() {
        let (l, r) = Atom::uniform(Interval::unit(), 1.0).unwrap().split(0.5).unwrap();
        let mu = PiecewiseMeasure::new(vec![l, r]).unwrap().into_disjoint().unwrap();
        let b = measure_energy(&mu, 1e-12).unwrap();
        assert_relative_eq!(b.total, 1.5, epsilon = 1e-13);
        assert_eq!(b.total, b.self_sum + b.outer_sum);
    }

    #[test]
    fn sampled_split_preserves_energy() {
        let d = DensitySpec::sampled(vec![0.0, 0.3, 1.0], vec![0.5, 2.0, 1.0]).unwrap();
        let atom = Atom::new(Interval::from_bounds(0.1, 0.9).unwrap(), d, 1.0).unwrap();
        let whole = PiecewiseMeasure::single(atom.clone());
        let (l, r) = atom.split(0.45).unwrap();
        let parts = PiecewiseMeasure::new(vec![l, r]).unwrap();
        assert_relative_eq!(whole.total_mass(), parts.total_mass(), epsilon = 1e-14);
        let e1 = measure_energy(&whole, 1e-11).unwrap().total;
        let e2 = measure_energy(&parts, 1e-11).unwrap().total;
        assert_relative_eq!(e1, e2, epsilon = 1e-9);
    }

    #[test]
    fn block_self_sum() {
        let atoms: Vec<Atom> = (10..20)
            .map(|k| {
                let c = (k - 10) as f64 / 10.0 + 0.05;
                Atom::uniform(Interval::new(c, -(k as f64)).unwrap(), 0.1).unwrap()
            })
            .collect();
        let mu = PiecewiseMeasure::new(atoms).unwrap();
        let b = measure_energy(&mu, 1e-12).unwrap();
        let expect: f64 = (10..20).map(|k| k as f64 + C0).sum::<f64>() / 100.0;
        assert_relative_eq!(b.self_sum, expect, epsilon = 1e-14);
    }

    #[test]
    fn point_masses_mutual() {
        let p = PiecewiseMeasure::single(Atom::uniform(Interval::new(0.25, f64::NEG_INFINITY).unwrap(), 1.0).unwrap());
        let q = PiecewiseMeasure::single(Atom::uniform(Interval::new(0.75, f64::NEG_INFINITY).unwrap(), 1.0).unwrap());
        let v = mutual_energy(&p, &q, 1e-12).unwrap();
        assert_relative_eq!(v, 2f64.ln(), epsilon = 1e-15);
        assert_eq!(v.to_bits(), mutual_energy(&q, &p, 1e-12).unwrap().to_bits());
    }

    #[test]
    fn mutual_with_self_is_energy() {
        let mu = unit();
        assert_eq!(
            mutual_energy(&mu, &mu, 1e-12).unwrap(),
            measure_energy(&mu, 1e-12).unwrap().total
        );
    }

    #[test]
    fn overlap_names_pair() {
        let atoms = vec![
            Atom::uniform(Interval::from_bounds(0.0, 0.1).unwrap(), 0.3).unwrap(),
            Atom::uniform(Interval::from_bounds(0.2, 0.6).unwrap(), 0.3).unwrap(),
            Atom::uniform(Interval::from_bounds(0.5, 0.9).unwrap(), 0.4).unwrap(),
        ];
        let mu = PiecewiseMeasure::new(atoms).unwrap();
        assert_eq!(
            measure_energy(&mu, 1e-9).unwrap_err(),
            Error::PartialOverlap { first: 1, second: 2 }
        );
        assert_eq!(
            mu.into_disjoint().unwrap_err(),
            Error::NotDisjoint { first: 1, second: 2 }
        );
    }

    #[test]
    fn farfield_used_for_tiny_atoms() {
        let atoms: Vec<Atom> = (0..20)
            .map(|i| Atom::uniform(Interval::new(0.025 + 0.05 * i as f64, -300.0).unwrap(), 0.05).unwrap())
            .collect();
        let mu = PiecewiseMeasure::new(atoms).unwrap();
        let b = measure_energy(&mu, 1e-9).unwrap();
        assert_eq!(b.farfield_pairs, 190);
        assert!(b.farfield_bound < 1e-100);
    }

    #[test]
    fn probability_flag() {
        assert!(unit().into_probability().unwrap().is_probability());
        assert!(unit().scaled(2.0).into_probability().is_err());
        assert!(unit().scaled(2.0).normalized().unwrap().is_probability());
    }
}

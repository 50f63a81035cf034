//! Equilibrium measures and logarithmic capacities of finite unions of
//! disjoint intervals.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::measure::first_overlap;
use crate::kernel::pair::uniform_pair;
use crate::kernel::{Interval, C0};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    /// Cosine spacing, refined toward both endpoints.
    #[default]
    Cosine,
    Uniform,
}

/// A panel `[t0, t1]` in the reference coordinates of its owner interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub owner: usize,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    /// Clipped source intervals that received panels.
    pub sources: Vec<Interval>,
    pub panels: Vec<Panel>,
    pub dropped: usize,
}

impl Discretization {
    /// Absolute midpoint and width of panel `i`.
    pub fn geometry(&self, i: usize) -> (f64, f64) {
        let p = &self.panels[i];
        let src = &self.sources[p.owner];
        let len = src.length();
        let lo = src.center() - 0.5 * len;
        (lo + len * 0.5 * (p.t0 + p.t1), len * (p.t1 - p.t0))
    }

    /// Natural log of the absolute width of panel `i`.
    pub fn ln_width(&self, i: usize) -> f64 {
        let p = &self.panels[i];
        self.sources[p.owner].loglen() + (p.t1 - p.t0).ln()
    }
}

fn grade(n: usize, grading: Grading) -> Vec<f64> {
    (0..=n)
        .map(|j| {
            if j == 0 {
                0.0
            } else if j == n {
                1.0
            } else {
                let r = j as f64 / n as f64;
                match grading {
                    Grading::Cosine => 0.5 * (1.0 - (PI * r).cos()),
                    Grading::Uniform => r,
                }
            }
        })
        .collect()
}

/// Panels proportional to length (at least one per interval), cosine graded.
pub fn discretize(set: &[Interval], budget: usize) -> Result<Discretization> {
    discretize_with(set, budget, Grading::Cosine)
}

pub fn discretize_with(set: &[Interval], budget: usize, grading: Grading) -> Result<Discretization> {
    let mut sources = Vec::with_capacity(set.len());
    let mut dropped = 0;
    for iv in set {
        match iv.materialize() {
            Some(m) => sources.push(m.interval),
            None => {
                log::warn!("dropping interval at {} with no length inside [0, 1]", iv.center());
                dropped += 1;
            }
        }
    }
    if sources.is_empty() {
        return Err(Error::invalid("set", "no interval of positive length"));
    }
    if budget < sources.len() {
        return Err(Error::invalid(
            "budget",
            format!("{budget} panels for {} intervals", sources.len()),
        ));
    }
    if let Some((i, j)) = first_overlap(sources.iter().copied()) {
        return Err(Error::NotDisjoint { first: i, second: j });
    }

    // largest-remainder allocation with a floor of one panel each
    let lmax = sources.iter().map(|s| s.loglen()).fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = sources.iter().map(|s| (s.loglen() - lmax).exp()).collect();
    let total: f64 = rel.iter().sum();
    let spare = (budget - sources.len()) as f64;
    let shares: Vec<f64> = rel.iter().map(|r| spare * r / total).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| 1 + s.floor() as usize).collect();
    let mut left = budget - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }

    let mut panels = Vec::with_capacity(budget);
    for (owner, &n) in counts.iter().enumerate() {
        let t = grade(n, grading);
        for w in t.windows(2) {
            panels.push(Panel {
                owner,
                t0: w[0],
                t1: w[1],
            });
        }
    }
    Ok(Discretization {
        sources,
        panels,
        dropped,
    })
}

/// Panel interaction matrix with unit-mass uniform densities on panels.
pub fn interaction_matrix(d: &Discretization) -> DMatrix<f64> {
    let n = d.panels.len();
    let ln_half: Vec<f64> = (0..n).map(|i| d.ln_width(i) - LN_2).collect();
    let ref_mid: Vec<f64> = d.panels.iter().map(|p| 0.5 * (p.t0 + p.t1)).collect();
    let ref_ln_half: Vec<f64> = d.panels.iter().map(|p| (p.t1 - p.t0).ln() - LN_2).collect();
    let abs_mid: Vec<f64> = (0..n).map(|i| d.geometry(i).0).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = &d.panels[i];
            (0..n)
                .map(|j| {
                    let pj = &d.panels[j];
                    if i == j {
                        -d.ln_width(i) + C0
                    } else if pi.owner == pj.owner {
                        -d.sources[pi.owner].loglen()
                            + uniform_pair(ref_mid[i], ref_ln_half[i], ref_mid[j], ref_ln_half[j])
                    } else {
                        uniform_pair(abs_mid[i], ln_half[i], abs_mid[j], ln_half[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            k[(i, j)] = v;
        }
    }
    // exact symmetry regardless of the branch taken for (i, j) vs (j, i)
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub energy: f64,
    pub capacity: f64,
    pub panel_count: usize,
    /// Set by [`refine_estimate`]; a single solve carries none.
    pub error_estimate: Option<f64>,
    pub weights: Vec<f64>,
    /// Discrete potential `(K w)_i`.
    pub potential: Vec<f64>,
    pub projected: bool,
    #[serde(skip)]
    pub discretization: Option<Discretization>,
}

impl CapacityEstimate {
    /// `max_i (K w)_i - min_i (K w)_i` over panels with positive weight.
    pub fn potential_spread(&self) -> f64 {
        let vals = self
            .potential
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, _)| *p);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    }
}

fn solve_ones(k: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = k.nrows();
    let ones = DVector::from_element(n, 1.0);
    if let Some(ch) = k.clone().cholesky() {
        return Some(ch.solve(&ones));
    }
    log::debug!("Cholesky failed on {n} panels; falling back to LU");
    k.clone().lu().solve(&ones)
}

/// Minimize `w^T K w` over the simplex: solve `K z = 1`, normalize, and
/// project onto `w >= 0` with an active set when needed.
pub fn solve_equilibrium(d: &Discretization) -> Result<CapacityEstimate> {
    let n = d.panels.len();
    if n == 0 {
        return Err(Error::invalid("discretization", "no panels"));
    }
    let k = interaction_matrix(d);
    let mut active: Vec<usize> = (0..n).collect();
    let mut projected = false;
    let weights = loop {
        let sub = k.select_rows(&active).select_columns(&active);
        let z = solve_ones(&sub).ok_or(Error::SingularSystem { panels: active.len() })?;
        let s: f64 = z.iter().sum();
        if !(s.is_finite() && s != 0.0) {
            return Err(Error::SingularSystem { panels: active.len() });
        }
        let w: Vec<f64> = z.iter().map(|v| v / s).collect();
        let negative: Vec<usize> = (0..active.len()).filter(|&i| w[i] < -1e-8).collect();
        if negative.is_empty() {
            let mut full = vec![0.0; n];
            for (pos, &i) in active.iter().enumerate() {
                full[i] = w[pos].max(0.0);
            }
            let t: f64 = full.iter().sum();
            full.iter_mut().for_each(|v| *v /= t);
            break full;
        }
        projected = true;
        let drop: std::collections::HashSet<usize> = negative.iter().map(|&p| active[p]).collect();
        active.retain(|i| !drop.contains(i));
        if active.is_empty() {
            return Err(Error::SingularSystem { panels: n });
        }
    };
    let wv = DVector::from_vec(weights.clone());
    let kw = &k * &wv;
    let energy = wv.dot(&kw);
    Ok(CapacityEstimate {
        energy,
        capacity: (-energy).exp(),
        panel_count: n,
        error_estimate: None,
        weights,
        potential: kw.iter().copied().collect(),
        projected,
        discretization: Some(d.clone()),
    })
}

/// Solves at increasing budgets with Richardson extrapolation of the energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub budgets: Vec<usize>,
    pub energies: Vec<f64>,
    /// `|E_i - E_{i-1}|` for consecutive budgets.
    pub differences: Vec<f64>,
    pub order: Option<f64>,
    pub extrapolated_energy: f64,
    pub monotone: bool,
    /// Extrapolated energy with the finest weights.
    pub best: CapacityEstimate,
}

pub fn refine_estimate(set: &[Interval], budgets: &[usize]) -> Result<Refinement> {
    if budgets.is_empty() {
        return Err(Error::invalid("budgets", "empty"));
    }
    if budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("budgets", "must be strictly increasing"));
    }
    let mut energies = Vec::with_capacity(budgets.len());
    let mut last = None;
    for &b in budgets {
        let est = solve_equilibrium(&discretize(set, b)?)?;
        energies.push(est.energy);
        last = Some(est);
    }
    let mut best = last.expect("nonempty budgets");
    let differences: Vec<f64> = energies.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let m = energies.len();
    let mut monotone = differences.windows(2).all(|w| w[1] < w[0]);
    let mut order = None;
    let mut extrapolated = energies[m - 1];
    let mut error = differences.last().copied();
    if m >= 3 {
        let (e1, e2, e3) = (energies[m - 3], energies[m - 2], energies[m - 1]);
        let r = budgets[m - 1] as f64 / budgets[m - 2] as f64;
        let q = (e1 - e2) / (e2 - e3);
        if q > 1.0 && q.is_finite() {
            let p = q.ln() / r.ln();
            let corr = (e2 - e3) / (r.powf(p) - 1.0);
            extrapolated = e3 - corr;
            order = Some(p);
            error = Some(corr.abs());
        } else {
            monotone = false;
        }
    } else if m == 2 {
        let r = budgets[1] as f64 / budgets[0] as f64;
        let corr = (energies[0] - energies[1]) / (r * r - 1.0);
        extrapolated = energies[1] - corr;
        error = Some(corr.abs());
    }
    if !monotone {
        log::warn!("energy refinement is not monotone: {energies:?}");
    }
    best.energy = extrapolated;
    best.capacity = (-extrapolated).exp();
    best.error_estimate = error;
    Ok(Refinement {
        budgets: budgets.to_vec(),
        energies,
        differences,
        order,
        extrapolated_energy: extrapolated,
        monotone,
        best,
    })
}

/// Panel midpoints and densities `weight / width`.
pub fn equilibrium_density_profile(estimate: &CapacityEstimate) -> Result<Vec<(f64, f64)>> {
    let d = estimate
        .discretization
        .as_ref()
        .ok_or_else(|| Error::invalid("estimate", "carries no discretization"))?;
    Ok((0..d.panels.len())
        .map(|i| {
            let (mid, width) = d.geometry(i);
            (mid, estimate.weights[i] / width)
        })
        .collect())
}

/// Density of the equilibrium measure of `[0, 1]`.
pub fn arcsine_density(x: f64) -> f64 {
    1.0 / (PI * (x * (1.0 - x)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_four_panels_tile() {
        let d = discretize_with(&[Interval::unit()], 4, Grading::Uniform).unwrap();
        assert_eq!(d.panels.len(), 4);
        let ends: Vec<f64> = d.panels.iter().map(|p| p.t1).collect();
        assert_eq!(ends, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn every_interval_gets_a_panel() {
        let set = [
            Interval::from_bounds(0.0, 0.9).unwrap(),
            Interval::new(0.95, -20.0).unwrap(),
        ];
        let d = discretize(&set, 10).unwrap();
        assert_eq!(d.panels.len(), 10);
        assert!(d.panels.iter().any(|p| p.owner == 1));
    }

    #[test]
    fn clipped_away_interval_dropped() {
        let set = [Interval::unit(), Interval::new(0.0, f64::NEG_INFINITY).unwrap()];
        let d = discretize(&set, 10).unwrap();
        assert_eq!(d.dropped, 1);
    }

    #[test]
    fn overlapping_set_rejected() {
        let set = [
            Interval::from_bounds(0.0, 0.6).unwrap(),
            Interval::from_bounds(0.5, 1.0).unwrap(),
        ];
        assert!(matches!(discretize(&set, 10), Err(Error::NotDisjoint { .. })));
    }

    #[test]
    fn unit_interval_capacity() {
        let est = solve_equilibrium(&discretize(&[Interval::unit()], 400).unwrap()).unwrap();
        assert_relative_eq!(est.energy, 4f64.ln(), epsilon = 1e-3);
        assert_relative_eq!(est.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(est.potential_spread() < 1e-2);
    }

    #[test]
    fn tiny_interval_scaling() {
        let set = [Interval::new(0.5, -30.0).unwrap()];
        let est = solve_equilibrium(&discretize(&set, 200).unwrap()).unwrap();
        assert_relative_eq!(est.energy, 30.0 + 4f64.ln(), epsilon = 1e-3);
    }

    #[test]
    fn refinement_extrapolates() {
        let r = refine_estimate(&[Interval::unit()], &[50, 100, 200]).unwrap();
        let target = 4f64.ln();
        assert!((r.extrapolated_energy - target).abs() < (r.energies[2] - target).abs());
        assert!(r.best.error_estimate.is_some());
        assert!(refine_estimate(&[Interval::unit()], &[100, 50]).is_err());
    }
}

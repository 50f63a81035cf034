use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::quadrature::gl20_integrate;
use crate::kernel::PiecewiseLinear;

/// Probability density on `[0, 1]` given by a piecewise-linear table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pw: PiecewiseLinear,
    cumulative: Vec<f64>,
    renormalized: bool,
    zero_region: bool,
}

impl DensityTable {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let raw = PiecewiseLinear::new(grid, values)?;
        let mass = raw.mean();
        if !(mass > 0.0) {
            return Err(Error::invalid("density table", "integrates to zero"));
        }
        let renormalized = (mass - 1.0).abs() > 1e-6;
        if renormalized {
            log::warn!("density table integrates to {mass}; renormalizing");
        }
        let values: Vec<f64> = raw.values().iter().map(|v| v / mass).collect();
        let pw = PiecewiseLinear::new(raw.knots().to_vec(), values)?;
        let zero_region = pw.cells().any(|c| c.a == 0.0 && c.b == 0.0);
        let mut cumulative = Vec::with_capacity(pw.knots().len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for c in pw.cells() {
            acc += c.w * (c.a + 0.5 * c.b * c.w);
            cumulative.push(acc);
        }
        Ok(Self {
            pw,
            cumulative,
            renormalized,
            zero_region,
        })
    }

    pub fn uniform() -> Self {
        Self::new(vec![0.0, 1.0], vec![1.0, 1.0]).expect("valid table")
    }

    /// Symmetric tent with peak 2 at 1/2.
    pub fn triangular() -> Self {
        Self::new(vec![0.0, 0.5, 1.0], vec![0.0, 2.0, 0.0]).expect("valid table")
    }

    /// Read a two-column text table: grid point and density value per line.
    /// Commas or whitespace separate columns; `#` starts a comment.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected two columns", lineno + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            grid.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        Self::new(grid, values)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        self.pw.eval(x)
    }

    pub fn sup(&self) -> f64 {
        self.pw.sup()
    }

    pub fn knots(&self) -> &[f64] {
        self.pw.knots()
    }

    pub fn as_piecewise(&self) -> &PiecewiseLinear {
        &self.pw
    }

    pub fn was_renormalized(&self) -> bool {
        self.renormalized
    }

    /// Whether the density vanishes on a set of positive length.
    pub fn has_zero_region(&self) -> bool {
        self.zero_region
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let knots = self.pw.knots();
        let i = knots.partition_point(|&k| k <= x) - 1;
        let c = self.pw.cells().nth(i).expect("cell");
        let s = x - c.p;
        self.cumulative[i] + s * (c.a + 0.5 * c.b * s)
    }

    /// Inverse of [`cdf`](Self::cdf) on `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self
            .cumulative
            .partition_point(|&m| m <= u)
            .clamp(1, self.cumulative.len() - 1)
            - 1;
        let c = self.pw.cells().nth(i).expect("cell");
        let r = (u - self.cumulative[i]).max(0.0);
        let disc = c.a * c.a + 2.0 * c.b * r;
        let s = if disc <= 0.0 {
            c.w
        } else {
            let den = c.a + disc.sqrt();
            if den > 0.0 {
                2.0 * r / den
            } else {
                c.w
            }
        };
        (c.p + s.min(c.w)).clamp(0.0, 1.0)
    }

    /// `∫ f(x) phi(x) dx` cell by cell.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let knots = self.pw.knots();
        knots
            .windows(2)
            .map(|w| gl20_integrate(|x| f(x) * self.pw.eval(x), w[0], w[1]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_and_renormalize() {
        let t = DensityTable::parse("# x phi\n0 2\n0.5, 2\n1 2\n").unwrap();
        assert!(t.was_renormalized());
        assert_relative_eq!(t.eval(0.3), 1.0, epsilon = 1e-15);
        assert!(DensityTable::parse("0 1\n1").is_err());
        assert!(DensityTable::parse("0 1\n1 -1\n").is_err());
        assert!(DensityTable::parse("0 1\n0.5 1\n").is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for t in [DensityTable::uniform(), DensityTable::triangular()] {
            for k in 1..100 {
                let u = k as f64 / 100.0;
                assert_relative_eq!(t.cdf(t.quantile(u)), u, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_region_flag() {
        let t = DensityTable::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.0, 4.0]).unwrap();
        assert!(t.has_zero_region());
        assert!(!DensityTable::triangular().has_zero_region());
    }

    #[test]
    fn integrate_moments() {
        let t = DensityTable::triangular();
        assert_relative_eq!(t.integrate(|_| 1.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(t.integrate(|x| x), 0.5, epsilon = 1e-14);
    }
}

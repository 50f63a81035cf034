use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear function on the reference interval `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

/// One linear piece: `value(s) = a + b (s - p)` for `s in [p, p + w]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub p: f64,
    pub w: f64,
    pub a: f64,
    pub b: f64,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::invalid(
                "density",
                format!(
                    "need at least two knots with matching ordinates (got {} knots, {} values)",
                    knots.len(),
                    values.len()
                ),
            ));
        }
        if knots[0] != 0.0 || knots[knots.len() - 1] != 1.0 {
            return Err(Error::invalid("density", "knots must start at 0 and end at 1"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("density", "knots must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(
                "density",
                format!("ordinate {v} is negative or not finite"),
            ));
        }
        Ok(Self { knots, values })
    }

    /// Ordinates on a uniform grid over `[0, 1]`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let m = values.len();
        if m < 2 {
            return Err(Error::invalid("density", "need at least two ordinates"));
        }
        let knots = (0..m)
            .map(|i| if i + 1 == m { 1.0 } else { i as f64 / (m - 1) as f64 })
            .collect();
        Self::new(knots, values)
    }

    pub fn from_fn(knots: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = knots.iter().map(|&x| f(x)).collect();
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let i = self.knots.partition_point(|&k| k <= s);
        if i == 0 {
            return self.values[0];
        }
        if i >= self.knots.len() {
            return self.values[self.values.len() - 1];
        }
        let (x0, x1) = (self.knots[i - 1], self.knots[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (y1 - y0) * (s - x0) / (x1 - x0)
    }

    pub fn mean(&self) -> f64 {
        self.cells().map(|c| c.w * (c.a + 0.5 * c.b * c.w)).sum()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.knots.windows(2).zip(self.values.windows(2)).map(|(k, v)| {
            let w = k[1] - k[0];
            Cell {
                p: k[0],
                w,
                a: v[0],
                b: (v[1] - v[0]) / w,
            }
        })
    }

    /// The function on `[lo, hi]` rescaled to `[0, 1]`.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid("restrict", format!("[{lo}, {hi}] not inside [0, 1]")));
        }
        let span = hi - lo;
        let mut knots = vec![0.0];
        let mut values = vec![self.eval(lo)];
        for (&k, &v) in self.knots.iter().zip(&self.values) {
            if k > lo && k < hi {
                let r = (k - lo) / span;
                if r > *knots.last().unwrap() && r < 1.0 {
                    knots.push(r);
                    values.push(v);
                }
            }
        }
        knots.push(1.0);
        values.push(self.eval(hi));
        Self::new(knots, values)
    }
}

/// Density description carried by an atom, on the reference interval `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DensitySpec {
    Constant(f64),
    Sampled(PiecewiseLinear),
}

impl DensitySpec {
    pub fn constant(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(
                "density",
                format!("constant {value} must be finite and >= 0"),
            ));
        }
        Ok(Self::Constant(value))
    }

    pub fn sampled(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        PiecewiseLinear::new(knots, values).map(Self::Sampled)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant(v) => Self::constant(*v).map(|_| ()),
            Self::Sampled(p) => PiecewiseLinear::new(p.knots.clone(), p.values.clone()).map(|_| ()),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sampled(p) => p.eval(s),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sampled(p) => p.mean(),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sampled(p) => p.sup(),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant(v) => Some(*v),
            Self::Sampled(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Constant(v) => *v == 0.0,
            Self::Sampled(p) => p.values.iter().all(|&v| v == 0.0),
        }
    }

    /// Interior breakpoints in reference coordinates (always includes 0 and 1).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Constant(_) => vec![0.0, 1.0],
            Self::Sampled(p) => p.knots.clone(),
        }
    }

    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self> {
        match self {
            Self::Constant(v) => Ok(Self::Constant(*v)),
            Self::Sampled(p) => p.restrict(lo, hi).map(Self::Sampled),
        }
    }

    /// Multiply every ordinate by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Constant(v) => Self::Constant(v * c),
            Self::Sampled(p) => Self::Sampled(PiecewiseLinear {
                knots: p.knots.clone(),
                values: p.values.iter().map(|v| v * c).collect(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn validation() {
        assert!(DensitySpec::constant(-1.0).is_err());
        assert!(DensitySpec::constant(f64::INFINITY).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 0.5, 0.5, 1.0], vec![1.0; 4]).is_err());
        assert!(PiecewiseLinear::uniform(vec![1.0, -0.1, 1.0]).is_err());
    }

    #[test]
    fn eval_and_mean() {
        let p = PiecewiseLinear::uniform(vec![0.0, 2.0, 0.0]).unwrap();
        assert_relative_eq!(p.eval(0.25), 1.0);
        assert_relative_eq!(p.eval(0.5), 2.0);
        assert_relative_eq!(p.eval(-1.0), 0.0);
        assert_relative_eq!(p.mean(), 1.0);
        assert_relative_eq!(p.sup(), 2.0);
    }

    #[test]
    fn restrict_rescales() {
        let p = PiecewiseLinear::uniform(vec![0.0, 2.0, 0.0]).unwrap();
        let r = p.restrict(0.25, 0.75).unwrap();
        assert_eq!(r.knots(), &[0.0, 0.5, 1.0]);
        assert_relative_eq!(r.eval(0.0), 1.0);
        assert_relative_eq!(r.eval(0.5), 2.0);
        assert_relative_eq!(r.mean(), 1.5);
    }

    #[test]
    fn cells_reproduce_function() {
        let p = PiecewiseLinear::new(vec![0.0, 0.1, 1.0], vec![1.0, 3.0, 2.0]).unwrap();
        for c in p.cells() {
            let mid = c.p + 0.5 * c.w;
            assert_relative_eq!(c.a + c.b * 0.5 * c.w, p.eval(mid), epsilon = 1e-14);
        }
    }
}

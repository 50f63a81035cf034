use std::path::Path;

use logcap::assumptions::DEFAULT_DELTAS;
use logcap::setgen::DensityTable;
use serde::{Deserialize, Serialize};

/// Flat experiment configuration. Every key is optional in the input file;
/// the resolved copy written next to the outputs lists all of them.
///
/// `q = 0` selects the default level count and `threads = 0` the rayon
/// default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: String,
    pub out: String,
    pub seed: u64,
    pub threads: usize,
    pub density: String,
    pub lambda: f64,
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub intervals: Vec<[f64; 2]>,
    pub panels: Vec<usize>,
    pub n: usize,
    pub q: usize,
    pub m_grid: Vec<usize>,
    pub a1_scale: f64,
    pub a2_epsilon: f64,
    pub a3_epsilon: f64,
    pub deltas: Vec<f64>,
    pub eps: f64,
    pub delta_clip: f64,
    pub stages: usize,
    pub m_min: usize,
    pub max_centers: usize,
    pub tol: f64,
    pub capacity_max_m: usize,
    pub mc_n: usize,
    pub mc_epsilon: f64,
    pub trials: usize,
    pub kernel_delta: f64,
    pub kernel_points: Vec<f64>,
    pub kernel_trials: usize,
    pub fourth_ns: Vec<usize>,
    pub fourth_q: usize,
    pub fourth_epsilon: f64,
    pub fourth_trials: usize,
    pub criteria: Vec<u32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            out: "out".into(),
            seed: 1,
            threads: 0,
            density: "uniform".into(),
            lambda: 1.0,
            alpha: 1.0,
            alphas: vec![0.8, 1.0, 1.25, 1.5],
            intervals: vec![[0.0, 1.0]],
            panels: vec![2000],
            n: 4096,
            q: 0,
            m_grid: vec![64, 256, 1024],
            a1_scale: 5.0,
            a2_epsilon: 0.05,
            a3_epsilon: 0.1,
            deltas: DEFAULT_DELTAS.to_vec(),
            eps: 0.3,
            delta_clip: 0.05,
            stages: 0,
            m_min: 32,
            max_centers: 1 << 20,
            tol: 1e-9,
            capacity_max_m: 256,
            mc_n: 20,
            mc_epsilon: 0.1,
            trials: 10_000,
            kernel_delta: 0.1,
            kernel_points: vec![0.01, 0.2, 0.5, 0.75, 0.97],
            kernel_trials: 20_000,
            fourth_ns: vec![8, 16, 32],
            fourth_q: 1,
            fourth_epsilon: 0.2,
            fourth_trials: 2000,
            criteria: logcap::selftest::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("{v} must be a positive finite number")))
    }
}

fn nonzero(field: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        Err(bad(field, "must be >= 1"))
    } else {
        Ok(())
    }
}

fn increasing<T: PartialOrd + std::fmt::Debug>(field: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        return Err(bad(field, "must not be empty"));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad(field, format!("{v:?} must be strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("config")
                .to_string();
            bad(&field, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("lambda", self.lambda)?;
        positive("alpha", self.alpha)?;
        if self.alphas.is_empty() {
            return Err(bad("alphas", "must not be empty"));
        }
        for &a in &self.alphas {
            positive("alphas", a)?;
        }
        if self.density.is_empty() {
            return Err(bad("density", "must be `uniform`, `triangular`, or a table path"));
        }
        if self.intervals.is_empty() {
            return Err(bad("intervals", "must not be empty"));
        }
        for [lo, hi] in &self.intervals {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(bad("intervals", format!("[{lo}, {hi}] must satisfy lo < hi")));
            }
        }
        increasing("panels", &self.panels)?;
        nonzero("panels", self.panels[0])?;
        nonzero("n", self.n)?;
        increasing("m_grid", &self.m_grid)?;
        nonzero("m_grid", self.m_grid[0])?;
        positive("a1_scale", self.a1_scale)?;
        positive("a2_epsilon", self.a2_epsilon)?;
        positive("a3_epsilon", self.a3_epsilon)?;
        increasing("deltas", &self.deltas)?;
        for &d in &self.deltas {
            positive("deltas", d)?;
        }
        positive("eps", self.eps)?;
        if !(self.delta_clip > 0.0 && self.delta_clip < 0.5) {
            return Err(bad("delta_clip", format!("{} must lie in (0, 1/2)", self.delta_clip)));
        }
        nonzero("m_min", self.m_min)?;
        nonzero("max_centers", self.max_centers)?;
        positive("tol", self.tol)?;
        if self.mc_n < 2 {
            return Err(bad("mc_n", "must be >= 2"));
        }
        positive("mc_epsilon", self.mc_epsilon)?;
        nonzero("trials", self.trials)?;
        positive("kernel_delta", self.kernel_delta)?;
        for &x in &self.kernel_points {
            if !(0.0..=1.0).contains(&x) {
                return Err(bad("kernel_points", format!("{x} must lie in [0, 1]")));
            }
        }
        nonzero("kernel_trials", self.kernel_trials)?;
        increasing("fourth_ns", &self.fourth_ns)?;
        nonzero("fourth_ns", self.fourth_ns[0])?;
        positive("fourth_epsilon", self.fourth_epsilon)?;
        nonzero("fourth_trials", self.fourth_trials)?;
        if self.criteria.is_empty() {
            return Err(bad("criteria", "must not be empty"));
        }
        if let Some(c) = self.criteria.iter().find(|c| !logcap::selftest::ALL.contains(c)) {
            return Err(bad("criteria", format!("unknown criterion {c}")));
        }
        Ok(())
    }

    pub fn q_override(&self) -> Option<usize> {
        (self.q > 0).then_some(self.q)
    }

    pub fn table(&self) -> Result<DensityTable, ConfigError> {
        match self.density.as_str() {
            "uniform" => Ok(DensityTable::uniform()),
            "triangular" => Ok(DensityTable::triangular()),
            path => DensityTable::from_path(path).map_err(|e| bad("density", e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::parse("lambda = 1.0\nlamda = 2.0\n").unwrap_err();
        assert_eq!(e.field, "lamda");
    }

    #[test]
    fn negative_alpha_is_named() {
        let c = ExperimentConfig::parse("alpha = -1.0").unwrap();
        assert_eq!(c.validate().unwrap_err().field, "alpha");
    }

    #[test]
    fn unordered_grid_rejected() {
        let c = ExperimentConfig::parse("m_grid = [64, 32]").unwrap();
        assert_eq!(c.validate().unwrap_err().field, "m_grid");
    }
}

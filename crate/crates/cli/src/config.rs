//! TOML experiment configuration. Every field defaults to the published
//! simulation constants; angles in the file are in units of pi.

use std::f64::consts::PI;
use std::path::Path;

use robust_phase::policy::GridSpec;
use serde::{Deserialize, Serialize};

/// Invalid or incomplete configuration (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Outcomes drawn from the empirical kernel.
    Kernel,
    /// Fresh syndromes, decoded, with exact channels.
    Live,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub d: usize,
    pub p: f64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Action angles span `[-theta_max, theta_max]`.
    pub theta_max_pi: f64,
    pub n_actions: usize,
    /// Syndromes per tabulated angle (N_s).
    pub n_samples: usize,
    /// Bootstrap resamples for every interval.
    pub resamples: usize,
    pub sample: SampleConfig,
    pub policy: PolicyConfig,
    pub simulate: SimulateConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Sample this single angle instead of every action angle.
    pub theta_pi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub targets_pi: Vec<f64>,
    /// Absolute acceptance threshold on the final dephasing.
    pub q_acc: Option<f64>,
    /// Threshold as a multiple of `|Phi_T|`; used when `q_acc` is unset.
    pub q_acc_relative: Option<f64>,
    pub n_phi: usize,
    pub n_q: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub floor_ratio: f64,
    pub gamma: f64,
    pub delta: f64,
    pub max_sweeps: usize,
    pub sub_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_trials: usize,
    pub round_cap: usize,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub distances: Vec<usize>,
    pub ps: Vec<f64>,
    pub thetas_pi: Vec<f64>,
    /// Also locate each code's half-success angle and fit the suppression.
    pub half_success: bool,
    pub half_tol: f64,
    pub half_max_iter: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            d: 3,
            p: 0.001,
            workers: 0,
            theta_max_pi: 0.16,
            n_actions: 200,
            n_samples: 5000,
            resamples: 1000,
            sample: SampleConfig::default(),
            policy: PolicyConfig::default(),
            simulate: SimulateConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let grid = GridSpec::new(0.0, 0.0, Vec::new());
        PolicyConfig {
            targets_pi: vec![1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0],
            q_acc: None,
            q_acc_relative: None,
            n_phi: grid.n_phi,
            n_q: grid.n_q,
            q_min: grid.q_min,
            q_max: grid.q_max,
            floor_ratio: grid.floor_ratio,
            gamma: grid.gamma,
            delta: grid.delta,
            max_sweeps: grid.max_sweeps,
            sub_points: grid.sub_points,
        }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_trials: 10_000,
            round_cap: robust_phase::protocol::DEFAULT_ROUND_CAP,
            mode: Mode::Kernel,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            distances: vec![3, 5],
            ps: vec![0.001],
            thetas_pi: (1..=14).map(|k| k as f64 / 100.0).collect(),
            half_success: true,
            half_tol: 0.02,
            half_max_iter: 20,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::from(e).context(format!("reading config {}", path.display())))?;
        toml::from_str(&text).map_err(|e| bad(format!("config {}: {e}", path.display())))
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max_pi * PI
    }

    pub fn actions(&self) -> Vec<f64> {
        GridSpec::symmetric_actions(self.theta_max(), self.n_actions)
    }

    pub fn targets(&self) -> Vec<f64> {
        self.policy.targets_pi.iter().map(|t| t * PI).collect()
    }

    pub fn q_acc(&self, target: f64) -> anyhow::Result<f64> {
        match (self.policy.q_acc, self.policy.q_acc_relative) {
            (Some(q), _) => Ok(q),
            (None, Some(r)) => Ok(r * target.abs()),
            (None, None) => Err(bad(
                "policy.q_acc or policy.q_acc_relative must be set: the acceptance threshold on the \
                 final dephasing has no published value (0.01 x |Phi_T| is a reasonable start)",
            )),
        }
    }

    pub fn grid_spec(&self, target: f64) -> anyhow::Result<GridSpec> {
        let p = &self.policy;
        Ok(GridSpec {
            n_phi: p.n_phi,
            n_q: p.n_q,
            q_min: p.q_min,
            q_max: p.q_max,
            floor_ratio: p.floor_ratio,
            gamma: p.gamma,
            delta: p.delta,
            max_sweeps: p.max_sweeps,
            sub_points: p.sub_points,
            ..GridSpec::new(target, self.q_acc(target)?, self.actions())
        })
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.d < 3 || self.d % 2 == 0 {
            return Err(bad(format!("d = {} must be odd and at least 3", self.d)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(bad(format!("p = {} must lie in [0, 1)", self.p)));
        }
        if !(self.theta_max_pi > 0.0 && self.theta_max_pi < 0.5) {
            return Err(bad("theta_max_pi must lie in (0, 0.5)"));
        }
        if self.n_actions == 0 || self.n_samples == 0 {
            return Err(bad("n_actions and n_samples must be positive"));
        }
        if let Some(t) = self.sample.theta_pi {
            if !(t > -0.5 && t <= 0.5) {
                return Err(bad(format!("sample.theta_pi = {t} must lie in (-0.5, 0.5]")));
            }
        }
        if self.policy.targets_pi.is_empty() {
            return Err(bad("policy.targets_pi is empty"));
        }
        for &t in &self.policy.targets_pi {
            if t == 0.0 || t.abs() >= 0.5 {
                return Err(bad(format!("target {t} pi must be nonzero with |target| < pi/2")));
            }
        }
        if self.simulate.n_trials == 0 {
            return Err(bad("simulate.n_trials must be positive"));
        }
        if self.sweep.distances.is_empty() || self.sweep.ps.is_empty() || self.sweep.thetas_pi.is_empty() {
            return Err(bad("sweep.distances, sweep.ps and sweep.thetas_pi must be non-empty"));
        }
        Ok(())
    }
}

/// Parses an angle in radians, or in units of pi with a `pi` suffix
/// (`0.08pi`).
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let (num, scale) = match t.strip_suffix("pi") {
        Some(rest) => (rest.trim().trim_end_matches('*'), PI),
        None => (t, 1.0),
    };
    let num = if num.is_empty() { "1" } else { num };
    num.parse::<f64>()
        .map(|v| v * scale)
        .map_err(|_| format!("`{s}` is not an angle (radians, or e.g. 0.08pi)"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<Config>(&text).unwrap(), c);
        assert_eq!(c.policy.n_phi, 201);
        assert_eq!(c.policy.n_q, 21);
        assert_eq!(c.actions().len() + 1, 201);
    }

    #[test]
    fn angles_parse() {
        assert_eq!(parse_angle("0.5").unwrap(), 0.5);
        assert!((parse_angle("0.08pi").unwrap() - 0.08 * PI).abs() < 1e-15);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert!(parse_angle("abc").is_err());
    }

    #[test]
    fn q_acc_is_required() {
        let mut c = Config::default();
        assert!(c.q_acc(0.1).is_err());
        c.policy.q_acc_relative = Some(0.01);
        assert!((c.q_acc(-0.2).unwrap() - 0.002).abs() < 1e-15);
        c.policy.q_acc = Some(1e-3);
        assert_eq!(c.q_acc(0.2).unwrap(), 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("sed = 3").is_err());
        let c: Config = toml::from_str("d = 5\n[policy]\nq_acc = 0.001").unwrap();
        assert_eq!(c.d, 5);
        assert_eq!(c.policy.q_acc, Some(0.001));
        assert_eq!(c.n_samples, 5000);
    }
}

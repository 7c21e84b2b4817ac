//! Run configuration: one TOML file with flat sections mirroring the
//! library types, strict about unknown keys so typos fail loudly instead of
//! silently running defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::StateCodec;
use crate::learning::TrainConfig;
use crate::powerflow::ScenarioParams;
use crate::studies::WelfareParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Seven probabilities logarithmically spaced over [0.01, 1].
pub fn log_spaced_ps() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-2.0 + i as f64 / 3.0)).collect()
}

fn arange(start: f64, stop_inclusive: f64, step: f64) -> Vec<f64> {
    let n = ((stop_inclusive - start) / step).round() as usize + 1;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// Grids and sizes for the sweep commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Attacker presence probabilities to train defenders at.
    pub train_ps: Vec<f64>,
    /// Presence probabilities each trained defender is evaluated at.
    pub sim_ps: Vec<f64>,
    /// Load ceilings for the design sweep.
    pub p2_grid: Vec<f64>,
    /// Reactive capability bounds for the design sweep.
    pub p3_grid: Vec<f64>,
    /// Presence probability design-cell defenders train at.
    pub design_train_p: f64,
    /// Whether the design sweep also moves the generator's fixed real
    /// output to p3_max. Off by default: the swept quantity is reactive
    /// capability, and moving real output with it would fold the load-flow
    /// shift of a bigger generator into the attack-cost signal.
    pub couple_p3: bool,
    /// Episodes per matchup evaluation.
    pub eval_episodes: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            train_ps: log_spaced_ps(),
            sim_ps: log_spaced_ps(),
            p2_grid: arange(0.2, 2.45, 0.25),
            p3_grid: arange(0.25, 2.5, 0.25),
            design_train_p: 0.2,
            couple_p3: false,
            eval_episodes: 2000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        if self.train_ps.is_empty() || self.sim_ps.is_empty() || self.p2_grid.is_empty() || self.p3_grid.is_empty() {
            return err("sweep grids must be nonempty".to_string());
        }
        for &p in self.train_ps.iter().chain(&self.sim_ps).chain(std::iter::once(&self.design_train_p)) {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("sweep probability {p} is outside [0, 1]"));
            }
        }
        for &v in self.p2_grid.iter().chain(&self.p3_grid) {
            if v < 0.0 || !v.is_finite() {
                return err(format!("sweep grid value {v} must be finite and non-negative"));
            }
        }
        if self.eval_episodes == 0 {
            return err("eval_episodes must be positive".to_string());
        }
        Ok(())
    }
}

/// Defaults for the simulate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Attacker presence probability.
    pub p: f64,
    pub episodes: usize,
    pub steps: usize,
    /// When set, the attacker enters at this step in every episode instead
    /// of being drawn with probability `p`.
    pub attack_at_step: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            episodes: 100,
            steps: 100,
            attack_at_step: None,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ConfigError::Invalid(format!("simulate.p must be in [0, 1], got {}", self.p)));
        }
        if self.episodes == 0 || self.steps == 0 {
            return Err(ConfigError::Invalid("simulate episodes and steps must be positive".to_string()));
        }
        Ok(())
    }
}

/// Everything a run needs, loadable from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub scenario: ScenarioParams,
    pub training: TrainConfig,
    pub codec: StateCodec,
    pub welfare: WelfareParams,
    pub sweep: SweepConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioParams::default(),
            training: TrainConfig::default(),
            codec: StateCodec::default(),
            welfare: WelfareParams::default(),
            sweep: SweepConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.training.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.codec.validate(&self.scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.welfare.validate()?;
        self.sweep.validate()?;
        self.simulate.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let text = config.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn default_grids_have_documented_shapes() {
        let sweep = SweepConfig::default();
        assert_eq!(sweep.train_ps.len(), 7);
        assert_eq!(sweep.sim_ps.len(), 7);
        assert_eq!(sweep.train_ps[0], 0.01);
        assert_eq!(sweep.train_ps[6], 1.0);
        assert!((sweep.train_ps[3] - 0.1).abs() < 1e-12);
        // Each step multiplies by the same ratio.
        for w in sweep.train_ps.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(1.0 / 3.0)).abs() < 1e-9);
        }
        assert_eq!(sweep.p2_grid.len(), 10);
        assert_eq!(sweep.p3_grid.len(), 10);
        assert!((sweep.p2_grid[0] - 0.2).abs() < 1e-12 && (sweep.p2_grid[9] - 2.45).abs() < 1e-12);
        assert!((sweep.p3_grid[0] - 0.25).abs() < 1e-12 && (sweep.p3_grid[9] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn partial_files_fill_from_defaults() {
        let config = RunConfig::from_toml(
            r#"
            master_seed = 7

            [scenario]
            p3_max = 2.0

            [training]
            max_rounds = 12
            "#,
        )
        .unwrap();
        assert_eq!(config.master_seed, 7);
        assert_eq!(config.scenario.p3_max, 2.0);
        assert_eq!(config.scenario.p2_max, ScenarioParams::default().p2_max);
        assert_eq!(config.training.max_rounds, 12);
        assert_eq!(config.simulate, SimulateConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("masterseed = 7"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml("[scenario]\nepsilonn = 0.05"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[simulate]\nattack_on_step = 3"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn component_invariants_are_enforced_at_load() {
        // theta_a at or below epsilon breaks the strike logic.
        assert!(matches!(
            RunConfig::from_toml("[scenario]\ntheta_a = 0.04"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[simulate]\np = 1.5"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[sweep]\ntrain_ps = []"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[training]\nimprovement_step = 0.0"),
            Err(ConfigError::Invalid(_))
        ));
        // Codec must re-bin observations by an integer factor.
        assert!(matches!(
            RunConfig::from_toml("[codec]\nvoltage_key_bin = 0.015"),
            Err(ConfigError::Invalid(_))
        ));
    }
}

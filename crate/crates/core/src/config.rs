//! Single-file JSON configuration covering every module's parameters.
//! Unknown keys are rejected; all fields default to the values shipped here.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::planner::CostConfig;
use crate::simctrl::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorParams {
    /// Number of drive-path prototypes (N_d).
    pub path_count: usize,
    pub kmeans_iters: usize,
    /// Longitudinal anchor look-aheads in meters at one second of travel.
    pub look_aheads: Vec<f64>,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self {
            path_count: 6,
            kmeans_iters: 50,
            look_aheads: vec![0.25, 1.7, 4.0, 6.0, 8.5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub lr: f64,
    pub epochs: usize,
    pub hidden_dim: usize,
    /// Anchor file; when absent, anchors are clustered from the frames.
    pub anchors_file: Option<String>,
    /// Augmentation reports accompanying the frames, if any.
    pub reports_file: Option<String>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lr: 0.005,
            epochs: 40,
            hidden_dim: 24,
            anchors_file: None,
            reports_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    /// Scenario list to run (required by the simulate subcommand).
    pub scenario_file: Option<String>,
    /// Trained regressor to plan with; cost descent when absent.
    pub params_file: Option<String>,
    pub anchors_file: Option<String>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            scenario_file: None,
            params_file: None,
            anchors_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchParams {
    /// Eval episodes per scenario family.
    pub episodes_per_family: usize,
    /// Scripted training episodes per family used to fit the regressors.
    pub train_episodes_per_family: usize,
    /// Keep every n-th training frame.
    pub train_frame_stride: usize,
    /// Augmentation rates to train and evaluate; 0.0 doubles as the
    /// no-augmentation baseline.
    pub alphas: Vec<f64>,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            episodes_per_family: 50,
            train_episodes_per_family: 12,
            train_frame_stride: 2,
            alphas: vec![0.0, 0.1, 0.3],
        }
    }
}

/// Full configuration tree. Defaults reproduce the shipped setup; any subset
/// of keys may be overridden from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Future displacement steps per plan (T).
    pub horizon_t: usize,
    /// Drive-path waypoints per plan (P).
    pub path_points: usize,
    /// Frame log consumed by the anchors, augment, and train subcommands.
    pub frames_file: Option<String>,
    pub augment: AugmentConfig,
    pub anchors: AnchorParams,
    pub cost: CostConfig,
    pub sim: SimConfig,
    pub train: TrainParams,
    pub simulate: SimulateParams,
    pub bench: BenchParams,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon_t: 15,
            path_points: 15,
            frames_file: None,
            augment: AugmentConfig::default(),
            anchors: AnchorParams::default(),
            cost: CostConfig::default(),
            sim: SimConfig::default(),
            train: TrainParams::default(),
            simulate: SimulateParams::default(),
            bench: BenchParams::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("config.json");
        let cfg = Config::default();
        cfg.save(&file).unwrap();
        let loaded = Config::load(&file).unwrap();
        assert_eq!(loaded.seed, cfg.seed);
        assert_eq!(loaded.anchors.look_aheads, cfg.anchors.look_aheads);
        assert_eq!(loaded.bench.alphas, cfg.bench.alphas);
    }

    #[test]
    fn partial_override_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("config.json");
        std::fs::write(&file, r#"{"seed": 42, "augment": {"alpha": 0.3}}"#).unwrap();
        let cfg = Config::load(&file).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.augment.alpha, 0.3);
        assert_eq!(cfg.augment.d_safe, 1.0);
        assert_eq!(cfg.horizon_t, 15);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("config.json");
        std::fs::write(&file, r#"{"sedd": 42}"#).unwrap();
        assert!(matches!(Config::load(&file), Err(ConfigError::Parse(_))));
        std::fs::write(&file, r#"{"augment": {"alpah": 0.3}}"#).unwrap();
        assert!(Config::load(&file).is_err());
    }
}

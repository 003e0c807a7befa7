//! Run configuration: one TOML file, every key optional, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{CbfParams, Interval};
use crate::env::WorldConfig;
use crate::integration::{Mode, ModeConfig};
use crate::kinematics::Point2;
use crate::sac::SacConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Floating-point width of the learner's networks. The world and the
/// safety filter always run in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreAction {
    Executed,
    Proposed,
}

/// Barrier and QP settings; `v_des` and the action bound come from the
/// world and learner sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub alpha_gain: f64,
    pub kappa: f64,
    pub slack_weight: f64,
}

impl Default for CbfConfig {
    fn default() -> Self {
        let p = CbfParams::<f64>::with_obstacle([0.0, 0.0]);
        Self {
            delta: p.delta,
            epsilon: p.epsilon,
            alpha_gain: p.alpha_gain,
            kappa: p.kappa,
            slack_weight: p.slack_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub store_action: StoreAction,
    pub reward_penalty_scale: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sac,
            seed: 0,
            total_steps: 300_000,
            eval_interval: 10_000,
            eval_episodes: 15,
            store_action: StoreAction::Executed,
            reward_penalty_scale: 1.0,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    pub bins: usize,
    pub obstacle: Point2<f64>,
    pub goal: Point2<f64>,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            bins: 15,
            obstacle: [0.0, 0.0],
            goal: [0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub host: std::net::IpAddr,
    pub port: u16,
    pub watchdog_ms: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            host: std::net::Ipv4Addr::LOCALHOST.into(),
            port: 7777,
            watchdog_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub world: WorldConfig,
    pub cbf: CbfConfig,
    pub sac: SacConfig,
    pub heatmap: HeatmapConfig,
    pub bridge: BridgeConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The resolved configuration with every default filled in.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sac.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cbf_params([0.0, 0.0])
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let t = &self.train;
        if t.total_steps == 0 || t.eval_interval == 0 {
            return bad("train.total_steps and train.eval_interval must be positive".into());
        }
        if t.eval_episodes == 0 {
            return bad("train.eval_episodes must be positive".into());
        }
        if !(t.reward_penalty_scale.is_finite() && t.reward_penalty_scale >= 0.0) {
            return bad("train.reward_penalty_scale must be finite and non-negative".into());
        }
        if self.heatmap.bins == 0 {
            return bad("heatmap.bins must be positive".into());
        }
        if !(self.world.in_arena(self.heatmap.obstacle) && self.world.in_arena(self.heatmap.goal)) {
            return bad("heatmap layout must lie inside the arena".into());
        }
        if self.bridge.watchdog_ms == 0 {
            return bad("bridge.watchdog_ms must be positive".into());
        }
        Ok(())
    }

    pub fn cbf_params(&self, obstacle: Point2<f64>) -> CbfParams<f64> {
        CbfParams {
            obstacle_center: obstacle,
            delta: self.cbf.delta,
            epsilon: self.cbf.epsilon,
            alpha_gain: self.cbf.alpha_gain,
            kappa: self.cbf.kappa,
            v_bounds: Interval::new(0.0, self.world.v_des),
            omega_bounds: Interval::symmetric(self.sac.omega_max),
            v_des: self.world.v_des,
            slack_weight: self.cbf.slack_weight,
        }
    }

    pub fn mode_config(&self) -> ModeConfig {
        ModeConfig {
            mode: self.train.mode,
            total_steps: self.train.total_steps,
            reward_penalty_scale: self.train.reward_penalty_scale,
        }
    }

    /// `(epsilon, delta + epsilon)`, the reset keep-out for the shifted point.
    pub fn keep_out(&self) -> (f64, f64) {
        (self.cbf.epsilon, self.cbf.delta + self.cbf.epsilon)
    }
}

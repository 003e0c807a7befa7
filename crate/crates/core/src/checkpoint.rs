//! Self-describing JSON checkpoints of a learner plus its run configuration.
//!
//! Parameters are written as `f64` with round-trip float formatting, so a
//! reload reproduces every weight bit for bit (also for `f32` learners,
//! whose values widen exactly).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Precision, RunConfig};
use crate::env::Observation;
use crate::eval::FrozenPolicy;
use crate::nn::{Activation, Mlp};
use crate::sac::Sac;
use crate::scalar::Real;

pub const FORMAT: &str = "saferl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl NetRecord {
    fn from_mlp<T: Real>(m: &Mlp<T>) -> Self {
        Self {
            sizes: m.sizes().to_vec(),
            activation: m.activation(),
            params: m.params().iter().map(|p| p.to_f64().expect("real widens to f64")).collect(),
        }
    }

    fn to_mlp<T: Real>(&self, name: &str) -> Result<Mlp<T>, CheckpointError> {
        let params = self.params.iter().map(|&p| T::lit(p)).collect();
        Mlp::from_params(&self.sizes, self.activation, params).ok_or_else(|| {
            CheckpointError::Mismatch(format!(
                "{name}: {} parameters do not fit sizes {:?}",
                self.params.len(),
                self.sizes
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Environment steps taken when the snapshot was written.
    pub step: u64,
    pub config: RunConfig,
    pub log_alpha: f64,
    pub actor: NetRecord,
    pub critics: [NetRecord; 2],
    pub targets: [NetRecord; 2],
}

impl Checkpoint {
    pub fn capture<T: Real>(sac: &Sac<T>, config: &RunConfig, step: u64) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            step,
            config: config.clone(),
            log_alpha: sac.log_alpha.to_f64().expect("real widens to f64"),
            actor: NetRecord::from_mlp(&sac.actor),
            critics: [NetRecord::from_mlp(&sac.critics[0]), NetRecord::from_mlp(&sac.critics[1])],
            targets: [NetRecord::from_mlp(&sac.targets[0]), NetRecord::from_mlp(&sac.targets[1])],
        }
    }

    /// Rebuilds the learner; optimiser moments start fresh.
    pub fn restore<T: Real>(&self) -> Result<Sac<T>, CheckpointError> {
        let cfg = self.config.sac.clone();
        let actor = self.actor.to_mlp("actor")?;
        if actor.input_dim() != crate::sac::OBS_DIM || actor.output_dim() != 2 {
            return Err(CheckpointError::Mismatch(format!("actor sizes {:?}", actor.sizes())));
        }
        let critics = [self.critics[0].to_mlp("critic 0")?, self.critics[1].to_mlp("critic 1")?];
        let targets = [self.targets[0].to_mlp("target 0")?, self.targets[1].to_mlp("target 1")?];
        for c in critics.iter().chain(&targets) {
            if c.input_dim() != crate::sac::OBS_DIM + 1 || c.output_dim() != 1 {
                return Err(CheckpointError::Mismatch(format!("critic sizes {:?}", c.sizes())));
            }
        }
        Ok(Sac::from_networks(cfg, actor, critics, targets, T::lit(self.log_alpha)))
    }

    /// Restores at the precision the run was trained with.
    pub fn restore_learner(&self) -> Result<Learner, CheckpointError> {
        Ok(match self.config.train.precision {
            Precision::F32 => Learner::F32(self.restore()?),
            Precision::F64 => Learner::F64(self.restore()?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint always serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let format = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
        if format != FORMAT {
            return Err(CheckpointError::Format(format.to_string()));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let ck: Self = serde_json::from_value(value)?;
        ck.config
            .validate()
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// A restored learner at its training precision.
#[derive(Debug, Clone)]
pub enum Learner {
    F32(Sac<f32>),
    F64(Sac<f64>),
}

impl FrozenPolicy for Learner {
    fn mean_omega(&self, obs: &Observation) -> f64 {
        match self {
            Learner::F32(s) => s.mean_omega(obs),
            Learner::F64(s) => s.mean_omega(obs),
        }
    }

    fn state_value(&self, obs: &Observation) -> f64 {
        match self {
            Learner::F32(s) => s.state_value(obs),
            Learner::F64(s) => s.state_value(obs),
        }
    }
}

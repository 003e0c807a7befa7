//! The training loop: environment interaction routed through the mode rule,
//! replay, SAC updates, periodic evaluation, logging and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, Precision, RunConfig, StoreAction};
use crate::env::{EnvError, World};
use crate::eval::{eval_seed, evaluate_policy, obs_array, FrozenPolicy};
use crate::integration::{resolve_action, shaped_reward, Mode};
use crate::sac::{ReplayBuffer, Sac, SacError, Transition};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("non-finite state at step {step}: {dump}")]
    NonFiniteState { step: u64, dump: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One row of `log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub seed: u64,
    pub mode: Mode,
    pub avg_reward_with_cbf: f64,
    pub avg_reward_without_cbf: f64,
    pub activation_pct: f64,
    pub episode_length_mean: f64,
}

pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const RESOLVED_CONFIG: &str = "config.resolved";

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:09}.json")
}

/// Independent random streams derived from the run seed.
struct Streams {
    init: ChaCha8Rng,
    env: ChaCha8Rng,
    act: ChaCha8Rng,
    replay: ChaCha8Rng,
    update: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            init: stream(0),
            env: stream(1),
            act: stream(2),
            replay: stream(3),
            update: stream(4),
        }
    }
}

pub struct TrainOutput<T> {
    pub learner: Sac<T>,
    pub log: Vec<LogRow>,
}

struct Artifacts {
    dir: PathBuf,
    log: csv::Writer<fs::File>,
}

impl Artifacts {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self, TrainError> {
        fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(io_err(dir))?;
        let resolved = dir.join(RESOLVED_CONFIG);
        fs::write(&resolved, cfg.to_toml_string()).map_err(io_err(&resolved))?;
        let log_path = dir.join(LOG_FILE);
        let log = csv::Writer::from_path(&log_path).map_err(|e| TrainError::Io {
            path: log_path.display().to_string(),
            source: e.into(),
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn record<T: Real>(&mut self, row: &LogRow, sac: &Sac<T>, cfg: &RunConfig) -> Result<(), TrainError> {
        let log_path = self.dir.join(LOG_FILE);
        self.log.serialize(row).map_err(|e| TrainError::Io {
            path: log_path.display().to_string(),
            source: e.into(),
        })?;
        self.log.flush().map_err(io_err(&log_path))?;
        let path = self.dir.join(CHECKPOINT_DIR).join(checkpoint_name(row.step));
        Checkpoint::capture(sac, cfg, row.step).save(&path)?;
        Ok(())
    }
}

/// Evaluates with and without the filter on the run's fixed evaluation seed.
pub fn evaluation_row<P: FrozenPolicy + ?Sized>(sac: &P, cfg: &RunConfig, step: u64) -> Result<LogRow, EnvError> {
    let seed = eval_seed(cfg.train.seed);
    let with = evaluate_policy(sac, cfg, cfg.train.eval_episodes, true, seed)?;
    let without = evaluate_policy(sac, cfg, cfg.train.eval_episodes, false, seed)?;
    Ok(LogRow {
        step,
        seed: cfg.train.seed,
        mode: cfg.train.mode,
        avg_reward_with_cbf: with.mean_reward,
        avg_reward_without_cbf: without.mean_reward,
        activation_pct: with.activation_pct,
        episode_length_mean: with.mean_length,
    })
}

/// Runs one training job. With `out`, writes the resolved config, the
/// metrics log and a checkpoint at every evaluation point; `progress` sees
/// each log row as it is produced.
pub fn train<T: Real>(
    cfg: &RunConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutput<T>, TrainError> {
    cfg.validate()?;
    let width = match cfg.train.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    if std::mem::size_of::<T>() != width {
        return Err(ConfigError::Invalid(format!(
            "train.precision is {:?} but the learner scalar is {} bytes wide",
            cfg.train.precision,
            std::mem::size_of::<T>()
        ))
        .into());
    }
    let mut artifacts = out.map(|d| Artifacts::create(d, cfg)).transpose()?;
    let mut rng = Streams::new(cfg.train.seed);
    let mut sac = Sac::<T>::new(cfg.sac.clone(), &mut rng.init)?;
    let mut buffer = ReplayBuffer::<T>::new(cfg.sac.buffer_capacity);
    let mode = cfg.mode_config();
    let w_max = cfg.sac.omega_max;
    let keep_out = Some(cfg.keep_out());

    let (mut world, _) = World::reset(&cfg.world, keep_out, &mut rng.env)?;
    let mut params = cfg.cbf_params(world.obstacle);
    let mut log = Vec::new();

    for t in 0..cfg.train.total_steps {
        let obs = world.observe();
        let obs_t = obs_array::<T>(&obs);
        let (omega, pre_squash) = if t < cfg.sac.warmup_steps as u64 {
            let w: f64 = rng.act.random_range(-w_max..=w_max);
            (w, T::lit((w / w_max).clamp(-1.0 + 1e-6, 1.0 - 1e-6).atanh()))
        } else {
            let (w, _, g) = sac.sample_action(&obs_t, &mut rng.act);
            (w.to_f64().unwrap_or(f64::NAN).clamp(-w_max, w_max), g)
        };

        let state = world.agent;
        let res = resolve_action(&mode, &state, omega, &params, t);
        let step = world.step(res.executed, &cfg.world);
        if !(world.agent.is_finite() && step.observation.is_finite() && step.reward.is_finite()) {
            return Err(TrainError::NonFiniteState {
                step: t,
                dump: format!("state {state:?} -> {:?}, action {res:?}, obs {obs:?}", world.agent),
            });
        }
        let reward = shaped_reward(&mode, step.reward, &res, params.v_des);
        let stored = match cfg.train.store_action {
            StoreAction::Executed => res.executed.omega,
            StoreAction::Proposed => res.proposed.omega,
        };
        buffer.push(Transition {
            obs: obs_t,
            action: T::lit(stored),
            pre_squash,
            reward: T::lit(reward),
            next_obs: obs_array(&step.observation),
            terminated: step.terminated,
        });

        if t >= cfg.sac.warmup_steps as u64 {
            if let Some(batch) = buffer.sample(cfg.sac.batch_size, &mut rng.replay) {
                sac.update(&batch, &mut rng.update)?;
            }
        }

        if step.terminated || step.truncated {
            world = World::reset(&cfg.world, keep_out, &mut rng.env)?.0;
            params = cfg.cbf_params(world.obstacle);
        }

        let done = t + 1;
        if done % cfg.train.eval_interval == 0 || done == cfg.train.total_steps {
            let row = evaluation_row(&sac, cfg, done)?;
            if let Some(a) = artifacts.as_mut() {
                a.record(&row, &sac, cfg)?;
            }
            progress(&row);
            log.push(row);
        }
    }
    if let Some(a) = artifacts.as_mut() {
        a.log.flush().map_err(io_err(&a.dir))?;
    }
    Ok(TrainOutput { learner: sac, log })
}

/// [`train`] at the precision selected in the config; returns the log.
pub fn train_run(cfg: &RunConfig, out: Option<&Path>, progress: impl FnMut(&LogRow)) -> Result<Vec<LogRow>, TrainError> {
    Ok(match cfg.train.precision {
        Precision::F32 => train::<f32>(cfg, out, progress)?.log,
        Precision::F64 => train::<f64>(cfg, out, progress)?.log,
    })
}

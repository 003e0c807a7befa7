//! Frozen-policy rollouts, activation statistics, critic heatmaps and
//! trajectory capture.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{HeatmapConfig, RunConfig};
use crate::env::{EnvError, Observation, World};
use crate::integration::{resolve_action, Mode, ModeConfig};
use crate::kinematics::Point2;
use crate::sac::{Sac, OBS_DIM};
use crate::scalar::Real;
use crate::{Control, UnicycleState};

/// Offset mixed into the run seed for evaluation resets, so evaluation
/// never shares a stream with training.
pub const EVAL_SEED_SALT: u64 = 0x5eed_e7a1_0000_0001;

pub fn eval_seed(run_seed: u64) -> u64 {
    run_seed ^ EVAL_SEED_SALT
}

pub fn obs_array<T: Real>(obs: &Observation) -> [T; OBS_DIM] {
    obs.to_array().map(T::lit)
}

/// Read-only view of a trained learner, independent of its precision.
pub trait FrozenPolicy {
    /// Deterministic (mean) angular velocity.
    fn mean_omega(&self, obs: &Observation) -> f64;
    /// `min_k Q_k(obs, mean action)`.
    fn state_value(&self, obs: &Observation) -> f64;
}

impl<T: Real> FrozenPolicy for Sac<T> {
    fn mean_omega(&self, obs: &Observation) -> f64 {
        self.mean_action(&obs_array(obs)).to_f64().unwrap_or(f64::NAN)
    }

    fn state_value(&self, obs: &Observation) -> f64 {
        self.estimate_state_value(&obs_array(obs)).to_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Goal,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStep {
    /// Pose before the command was applied.
    pub state: UnicycleState,
    pub observation: Observation,
    pub proposed_omega: f64,
    pub executed: Control,
    pub reward: f64,
    pub h: f64,
    pub cbf_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<EpisodeStep>,
    pub outcome: Outcome,
    pub collision_steps: usize,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// `100 * (steps with h <= 0) / steps`.
pub fn activation_percentage(log: &EpisodeLog) -> f64 {
    assert!(!log.steps.is_empty(), "activation of an empty episode");
    let active = log.steps.iter().filter(|s| s.cbf_active).count();
    100.0 * active as f64 / log.steps.len() as f64
}

/// Deterministic rollout from `world` until the goal or the step limit.
pub fn run_episode<P: FrozenPolicy + ?Sized>(sac: &P, mut world: World, cfg: &RunConfig, cbf_on: bool) -> EpisodeLog {
    let mode = ModeConfig::new(if cbf_on { Mode::Filter } else { Mode::Sac }, 1);
    let params = cfg.cbf_params(world.obstacle);
    let mut steps = Vec::new();
    let mut collision_steps = 0;
    loop {
        let state = world.agent;
        let observation = world.observe();
        let omega = sac
            .mean_omega(&observation)
            .clamp(-cfg.sac.omega_max, cfg.sac.omega_max);
        let res = resolve_action(&mode, &state, omega, &params, 0);
        let r = world.step(res.executed, &cfg.world);
        collision_steps += usize::from(r.info.collision);
        steps.push(EpisodeStep {
            state,
            observation,
            proposed_omega: omega,
            executed: res.executed,
            reward: r.reward,
            h: res.h,
            cbf_active: res.cbf_active,
        });
        if r.terminated || r.truncated {
            let outcome = if r.terminated { Outcome::Goal } else { Outcome::Timeout };
            return EpisodeLog {
                steps,
                outcome,
                collision_steps,
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub mean_length: f64,
    pub activation_pct: f64,
    pub collision_steps: usize,
    pub goals: usize,
}

pub fn evaluate_policy<P: FrozenPolicy + ?Sized>(
    sac: &P,
    cfg: &RunConfig,
    episodes: usize,
    cbf_on: bool,
    seed: u64,
) -> Result<EvalSummary, EnvError> {
    assert!(episodes >= 1, "need at least one evaluation episode");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut reward, mut length, mut act) = (0.0, 0.0, 0.0);
    let (mut collision_steps, mut goals) = (0, 0);
    for _ in 0..episodes {
        let (world, _) = World::reset(&cfg.world, Some(cfg.keep_out()), &mut rng)?;
        let log = run_episode(sac, world, cfg, cbf_on);
        reward += log.total_reward();
        length += log.steps.len() as f64;
        act += activation_percentage(&log);
        collision_steps += log.collision_steps;
        goals += usize::from(log.outcome == Outcome::Goal);
    }
    let n = episodes as f64;
    Ok(EvalSummary {
        mean_reward: reward / n,
        mean_length: length / n,
        activation_pct: act / n,
        collision_steps,
        goals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    /// `bins + 1` edges, shared by both axes.
    pub edges: Vec<f64>,
    /// `values[row][col]`: row indexes y, column indexes x, both ascending.
    pub values: Vec<Vec<f64>>,
}

impl HeatmapGrid {
    pub fn centroid(&self, row: usize, col: usize) -> Point2<f64> {
        [
            0.5 * (self.edges[col] + self.edges[col + 1]),
            0.5 * (self.edges[row] + self.edges[row + 1]),
        ]
    }

    /// First row: the bin edges. Then one row of values per y bin.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.serialize(&self.edges).expect("in-memory csv");
        for row in &self.values {
            w.serialize(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Heading from `p` toward `target`; `0` when they coincide.
pub fn facing(p: Point2<f64>, target: Point2<f64>) -> f64 {
    let (dx, dy) = (target[0] - p[0], target[1] - p[1]);
    if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        dy.atan2(dx)
    }
}

/// Seed-averaged `V(s)` at every bin centroid, the agent facing the obstacle.
///
/// Per-bin values are summed in sorted order, so the grid does not depend on
/// the order of `learners`.
pub fn value_heatmap<P: FrozenPolicy>(learners: &[P], layout: &HeatmapConfig, arena_half_extent: f64) -> HeatmapGrid {
    assert!(!learners.is_empty(), "heatmap needs at least one learner");
    let b = layout.bins;
    let lo = -arena_half_extent;
    let width = 2.0 * arena_half_extent / b as f64;
    let mut edges: Vec<f64> = (0..=b).map(|i| lo + width * i as f64).collect();
    edges[b] = arena_half_extent;
    let mut grid = HeatmapGrid {
        edges,
        values: vec![vec![0.0; b]; b],
    };
    for row in 0..b {
        for col in 0..b {
            let c = grid.centroid(row, col);
            let agent = UnicycleState::new(c[0], c[1], facing(c, layout.obstacle));
            let obs = Observation::new(&agent, layout.goal, layout.obstacle);
            let mut vals: Vec<f64> = learners.iter().map(|l| l.state_value(&obs)).collect();
            vals.sort_by(f64::total_cmp);
            grid.values[row][col] = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    /// Defaults to facing the obstacle.
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub traj: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub h: f64,
    pub cbf_active: bool,
    pub reward: f64,
}

/// Rolls out from each start in the heatmap layout and returns the logs.
pub fn record_trajectories<P: FrozenPolicy + ?Sized>(
    sac: &P,
    cfg: &RunConfig,
    starts: &[StartPose],
    cbf_on: bool,
) -> Vec<EpisodeLog> {
    let layout = cfg.heatmap;
    starts
        .iter()
        .map(|s| {
            let theta = s.theta.unwrap_or_else(|| facing([s.x, s.y], layout.obstacle));
            let world = World::with_layout(UnicycleState::new(s.x, s.y, theta), layout.goal, layout.obstacle);
            run_episode(sac, world, cfg, cbf_on)
        })
        .collect()
}

/// One JSON object per step, `traj` indexing the start pose.
pub fn write_trajectories_jsonl<W: Write>(logs: &[EpisodeLog], mut out: W) -> std::io::Result<()> {
    for (traj, log) in logs.iter().enumerate() {
        for (t, s) in log.steps.iter().enumerate() {
            let rec = TrajectoryRecord {
                traj,
                t,
                x: s.state.x,
                y: s.state.y,
                theta: s.state.theta,
                v: s.executed.v,
                omega: s.executed.omega,
                h: s.h,
                cbf_active: s.cbf_active,
                reward: s.reward,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

//! Goal-reaching task with one obstacle: sparse +10 on reaching the goal,
//! -10 for every step spent in contact with the obstacle, and no
//! termination on contact or on leaving the arena.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{distance, Point2};
use crate::{Control, UnicycleState};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("world config: {0}")]
    InvalidConfig(String),
    #[error("reset sampling exhausted after {0} rejections; separation constraints cannot be met")]
    SamplingExhausted(usize),
}

/// Maximum rejected draws before `reset` gives up.
pub const MAX_RESET_REJECTIONS: usize = 10_000;

/// Minimum centre-to-centre distances enforced at reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Separation {
    pub agent_obstacle: f64,
    pub goal_obstacle: f64,
    pub agent_goal: f64,
}

impl Default for Separation {
    fn default() -> Self {
        Self {
            agent_obstacle: 0.55,
            goal_obstacle: 0.5,
            agent_goal: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Half the side of the square arena centred on the origin.
    pub arena_half_extent: f64,
    pub obstacle_radius: f64,
    pub goal_radius: f64,
    pub agent_radius: f64,
    pub v_des: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub goal_reward: f64,
    pub collision_reward: f64,
    pub min_separation: Separation,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena_half_extent: 0.75,
            obstacle_radius: 0.2,
            goal_radius: 0.05,
            agent_radius: 0.2,
            v_des: 0.2,
            dt: 0.1,
            max_steps: 1000,
            goal_reward: 10.0,
            collision_reward: -10.0,
            min_separation: Separation::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        let positive = [
            ("arena_half_extent", self.arena_half_extent),
            ("obstacle_radius", self.obstacle_radius),
            ("goal_radius", self.goal_radius),
            ("agent_radius", self.agent_radius),
            ("v_des", self.v_des),
            ("dt", self.dt),
        ];
        for (name, x) in positive {
            if !(x.is_finite() && x > 0.0) {
                return bad(&format!("{name} must be positive and finite"));
            }
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.collision_reward < 0.0 && self.goal_reward > 0.0) {
            return bad("need collision_reward < 0 < goal_reward");
        }
        let s = self.min_separation;
        if [s.agent_obstacle, s.goal_obstacle, s.agent_goal].iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("separations must be finite and non-negative");
        }
        Ok(())
    }

    /// Centre distance at which the goal counts as reached.
    pub fn goal_threshold(&self) -> f64 {
        self.goal_radius + self.agent_radius
    }

    /// Centre distance below which agent and obstacle are in contact.
    pub fn collision_threshold(&self) -> f64 {
        self.obstacle_radius + self.agent_radius
    }

    pub fn in_arena(&self, p: Point2<f64>) -> bool {
        p[0].abs() <= self.arena_half_extent && p[1].abs() <= self.arena_half_extent
    }
}

/// Goal and obstacle positions in the agent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub goal_rel: Point2<f64>,
    pub obstacle_rel: Point2<f64>,
}

impl Observation {
    pub const DIM: usize = 4;

    pub fn new(agent: &UnicycleState, goal: Point2<f64>, obstacle: Point2<f64>) -> Self {
        Self {
            goal_rel: agent.to_agent_frame(goal),
            obstacle_rel: agent.to_agent_frame(obstacle),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.goal_rel[0], self.goal_rel[1], self.obstacle_rel[0], self.obstacle_rel[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub collision: bool,
    pub goal_reached: bool,
    pub executed: Control,
    pub obstacle_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub agent: UnicycleState,
    pub goal: Point2<f64>,
    pub obstacle: Point2<f64>,
    pub step_count: usize,
}

impl World {
    /// A world with a fixed layout, e.g. for heatmaps or scripted starts.
    pub fn with_layout(agent: UnicycleState, goal: Point2<f64>, obstacle: Point2<f64>) -> Self {
        Self {
            agent,
            goal,
            obstacle,
            step_count: 0,
        }
    }

    /// Rejection-samples a fresh episode layout.
    ///
    /// Besides the centre separations, the agent must start with its shifted
    /// barrier point strictly outside `keep_out_radius` of the obstacle, so
    /// every episode begins outside the guardrail band.
    pub fn reset<R: Rng + ?Sized>(
        cfg: &WorldConfig,
        keep_out: Option<(f64, f64)>,
        rng: &mut R,
    ) -> Result<(Self, Observation), EnvError> {
        cfg.validate()?;
        let e = cfg.arena_half_extent;
        let sep = cfg.min_separation;
        for _ in 0..MAX_RESET_REJECTIONS {
            let agent_pos = [rng.random_range(-e..=e), rng.random_range(-e..=e)];
            // (-pi, pi]
            let theta = std::f64::consts::PI - rng.random_range(0.0..std::f64::consts::TAU);
            let goal = [rng.random_range(-e..=e), rng.random_range(-e..=e)];
            let obstacle = [rng.random_range(-e..=e), rng.random_range(-e..=e)];
            if distance(agent_pos, obstacle) < sep.agent_obstacle
                || distance(goal, obstacle) < sep.goal_obstacle
                || distance(agent_pos, goal) < sep.agent_goal
            {
                continue;
            }
            let agent = UnicycleState::new(agent_pos[0], agent_pos[1], theta);
            if let Some((epsilon, radius)) = keep_out {
                if distance(agent.shifted_point(epsilon), obstacle) <= radius {
                    continue;
                }
            }
            let world = Self::with_layout(agent, goal, obstacle);
            let obs = world.observe();
            return Ok((world, obs));
        }
        Err(EnvError::SamplingExhausted(MAX_RESET_REJECTIONS))
    }

    pub fn observe(&self) -> Observation {
        Observation::new(&self.agent, self.goal, self.obstacle)
    }

    /// Advances one step under `executed` and scores the new pose.
    pub fn step(&mut self, executed: Control, cfg: &WorldConfig) -> StepResult {
        self.agent = self.agent.step(executed, cfg.dt);
        self.step_count += 1;
        let pos = self.agent.position();
        let obstacle_distance = distance(pos, self.obstacle);
        let goal_reached = distance(pos, self.goal) <= cfg.goal_threshold();
        let collision = obstacle_distance < cfg.collision_threshold();
        let reward = if goal_reached {
            cfg.goal_reward
        } else if collision {
            cfg.collision_reward
        } else {
            0.0
        };
        let terminated = goal_reached;
        let truncated = !terminated && self.step_count >= cfg.max_steps;
        StepResult {
            observation: self.observe(),
            reward,
            terminated,
            truncated,
            info: StepInfo {
                collision,
                goal_reached,
                executed,
                obstacle_distance,
            },
        }
    }
}

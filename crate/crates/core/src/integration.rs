//! How the safety filter meets the learner: the four training modes.

use serde::{Deserialize, Serialize};

use crate::cbf::{barrier_value, solve_safe_control, CbfParams};
use crate::kinematics::{Control, UnicycleState};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain SAC; the filter never touches the command.
    Sac,
    /// The QP output replaces the proposal whenever the guardrail is active.
    Filter,
    /// The proposal is executed; deviation from the QP output is penalised.
    Reward,
    /// Blend of QP output and proposal, weighted by a decaying `beta`.
    Decay,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Sac, Mode::Filter, Mode::Reward, Mode::Decay];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Sac => "sac",
            Mode::Filter => "filter",
            Mode::Reward => "reward",
            Mode::Decay => "decay",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected sac, filter, reward or decay)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeConfig {
    pub mode: Mode,
    pub total_steps: u64,
    pub reward_penalty_scale: f64,
}

impl ModeConfig {
    pub fn new(mode: Mode, total_steps: u64) -> Self {
        Self {
            mode,
            total_steps,
            reward_penalty_scale: 1.0,
        }
    }
}

/// Linear decay `1 - t / T`, clamped to `[0, 1]`.
pub fn decay_beta(t: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (1.0 - t as f64 / total as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionResolution<T> {
    /// RL command: `(v_des, omega_pi)`.
    pub proposed: Control<T>,
    /// QP output, computed only when the guardrail is active and the mode uses it.
    pub cbf: Option<Control<T>>,
    pub executed: Control<T>,
    /// `h <= 0` at the queried state.
    pub cbf_active: bool,
    pub h: T,
    pub beta: T,
}

/// Routes the policy's `omega_pi` through the mode rule at training step `t`.
pub fn resolve_action<T: Real>(
    mode: &ModeConfig,
    s: &UnicycleState<T>,
    omega_pi: T,
    params: &CbfParams<T>,
    t: u64,
) -> ActionResolution<T> {
    let proposed = Control::new(params.v_des, omega_pi);
    let beta = match mode.mode {
        Mode::Decay => T::lit(decay_beta(t, mode.total_steps)),
        Mode::Filter => T::one(),
        Mode::Sac | Mode::Reward => T::zero(),
    };
    let h = barrier_value(s, params);
    let cbf_active = h <= T::zero();
    let mut res = ActionResolution {
        proposed,
        cbf: None,
        executed: proposed,
        cbf_active,
        h,
        beta,
    };
    if !cbf_active || mode.mode == Mode::Sac {
        return res;
    }
    let safe = solve_safe_control(s, proposed, params).control;
    res.cbf = Some(safe);
    res.executed = match mode.mode {
        Mode::Filter => safe,
        Mode::Decay => Control::new(
            beta * safe.v + (T::one() - beta) * proposed.v,
            beta * safe.omega + (T::one() - beta) * proposed.omega,
        ),
        Mode::Reward | Mode::Sac => proposed,
    };
    res
}

/// Environment reward, minus the imitation penalty in reward mode.
pub fn shaped_reward<T: Real>(mode: &ModeConfig, env_reward: T, res: &ActionResolution<T>, v_des: T) -> T {
    match (mode.mode, res.cbf) {
        (Mode::Reward, Some(c)) if res.cbf_active => {
            let dev = (c.v - v_des).abs() + (c.omega - res.proposed.omega).abs();
            env_reward - T::lit(mode.reward_penalty_scale) * dev
        }
        _ => env_reward,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CbfParams<f64> {
        CbfParams::with_obstacle([0.0, 0.0])
    }

    fn hand_state() -> UnicycleState<f64> {
        UnicycleState::new(0.0, 0.46, 0.0)
    }

    #[test]
    fn beta_schedule() {
        assert_eq!(decay_beta(0, 100), 1.0);
        assert_eq!(decay_beta(100, 100), 0.0);
        assert_eq!(decay_beta(50, 100), 0.5);
        assert_eq!(decay_beta(150, 100), 0.0);
    }

    #[test]
    fn inactive_guardrail_passes_through_in_every_mode() {
        let s = UnicycleState::new(0.6, 0.6, 1.0);
        for m in Mode::ALL {
            let r = resolve_action(&ModeConfig::new(m, 10), &s, 0.25, &params(), 3);
            assert!(!r.cbf_active);
            assert_eq!(r.executed, Control::new(0.2, 0.25));
        }
    }

    #[test]
    fn filter_reproduces_hand_solution() {
        let r = resolve_action(&ModeConfig::new(Mode::Filter, 10), &hand_state(), 0.0, &params(), 0);
        assert!(r.cbf_active);
        assert!((r.executed.v - 0.2).abs() < 1e-3);
        assert!((r.executed.omega - 0.3457).abs() < 1e-3);
        assert_eq!(Some(r.executed), r.cbf);
    }

    #[test]
    fn decay_blends_at_half() {
        let r = resolve_action(&ModeConfig::new(Mode::Decay, 100), &hand_state(), 0.0, &params(), 50);
        assert_eq!(r.beta, 0.5);
        assert!((r.executed.omega - 0.1728).abs() < 1e-3);
        assert_eq!(r.executed.omega, 0.5 * r.cbf.unwrap().omega);
    }

    #[test]
    fn reward_mode_executes_proposal_and_penalises() {
        let mc = ModeConfig::new(Mode::Reward, 10);
        let r = resolve_action(&mc, &hand_state(), 0.0, &params(), 0);
        assert_eq!(r.executed, r.proposed);
        let shaped = shaped_reward(&mc, 0.0, &r, 0.2);
        assert!((shaped + 0.3457).abs() < 1e-3);
    }

    #[test]
    fn filter_mode_never_shapes() {
        let mc = ModeConfig::new(Mode::Filter, 10);
        let r = resolve_action(&mc, &hand_state(), 0.0, &params(), 0);
        assert_eq!(shaped_reward(&mc, -10.0, &r, 0.2), -10.0);
    }

    #[test]
    fn mode_round_trips_through_strings() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("shield".parse::<Mode>().is_err());
    }
}

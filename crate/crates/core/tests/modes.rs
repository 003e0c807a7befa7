use proptest::prelude::*;
use saferl_core::cbf::solve_safe_control;
use saferl_core::integration::{decay_beta, resolve_action, shaped_reward, Mode, ModeConfig};
use saferl_core::{CbfParams, Control, UnicycleState};

const T: u64 = 300_000;

fn near_obstacle() -> impl Strategy<Value = (UnicycleState, [f64; 2], f64)> {
    (0.0..0.7f64, -3.2..3.2f64, -3.2..3.2f64, -0.5..0.5f64, -0.5..0.5f64, -0.7..0.7f64).prop_map(
        |(r, phi, theta, ox, oy, w)| {
            let s = UnicycleState::new(ox + r * phi.cos(), oy + r * phi.sin(), theta);
            (s, [ox, oy], w)
        },
    )
}

proptest! {
    #[test]
    fn beta_stays_in_unit_interval_and_decreases(t in 0u64..2 * T, dt in 0u64..1000) {
        let b = decay_beta(t, T);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(decay_beta(t + dt, T) <= b);
    }

    #[test]
    fn inactive_states_pass_the_proposal_through((s, obs, w) in near_obstacle(), t in 0u64..T) {
        let params = CbfParams::with_obstacle(obs);
        for mode in Mode::ALL {
            let res = resolve_action(&ModeConfig::new(mode, T), &s, w, &params, t);
            if !res.cbf_active {
                prop_assert_eq!(res.executed, Control::new(params.v_des, w));
                prop_assert!(res.cbf.is_none());
            }
        }
    }

    #[test]
    fn filter_executes_the_qp_and_reward_never_overrides((s, obs, w) in near_obstacle(), t in 0u64..T) {
        let params = CbfParams::with_obstacle(obs);
        let filter = resolve_action(&ModeConfig::new(Mode::Filter, T), &s, w, &params, t);
        if filter.cbf_active {
            let qp = solve_safe_control(&s, Control::new(params.v_des, w), &params).control;
            prop_assert_eq!(filter.executed, qp);
        }
        let reward = resolve_action(&ModeConfig::new(Mode::Reward, T), &s, w, &params, t);
        prop_assert_eq!(reward.executed, reward.proposed);
        let shaped = shaped_reward(&ModeConfig::new(Mode::Reward, T), 0.0, &reward, params.v_des);
        prop_assert!(shaped <= 0.0);
        if !reward.cbf_active {
            prop_assert_eq!(shaped, 0.0);
        }
    }

    #[test]
    fn decay_lies_between_proposal_and_qp((s, obs, w) in near_obstacle(), t in 0u64..T) {
        let params = CbfParams::with_obstacle(obs);
        let res = resolve_action(&ModeConfig::new(Mode::Decay, T), &s, w, &params, t);
        if let Some(c) = res.cbf {
            let (p, e) = (res.proposed, res.executed);
            prop_assert!(e.omega >= c.omega.min(p.omega) - 1e-12 && e.omega <= c.omega.max(p.omega) + 1e-12);
            prop_assert!(e.v >= c.v.min(p.v) - 1e-12 && e.v <= c.v.max(p.v) + 1e-12);
        }
    }
}

//! Obstacle barrier on the shifted reference point and the safety QP built
//! from it.
//!
//! The barrier is `h = |x' - x0|^2 - (delta + epsilon)^2` where `x'` is the
//! point `epsilon` ahead of the agent. Along unicycle motion
//! `dh/dt = a_v * v + a_omega * omega` with
//! `(a_v, a_omega) = 2 (x' - x0)^T R(theta) diag(1, epsilon)`, so both inputs
//! appear after a single differentiation.

mod check;
mod oracle;
mod qp;

pub use check::{activated_instance, qp_check, QpCheckReport, ORACLE_RESOLUTION};
pub use oracle::{oracle_solve, oracle_solve_qp, DEFAULT_COARSE_RESOLUTION};
pub use qp::{QpSolution, SafetyQp};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{rotation_matrix, Control, Point2, UnicycleState};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum CbfError {
    #[error("cbf parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("empty {name} interval [{lo}, {hi}]")]
    EmptyInterval { name: &'static str, lo: f64, hi: f64 },
    #[error("desired velocity {v_des} outside velocity bounds [{lo}, {hi}]")]
    DesiredVelocityOutOfBounds { v_des: f64, lo: f64, hi: f64 },
    #[error("non-finite cbf parameter `{0}`")]
    NonFinite(&'static str),
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(half_width: T) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: T) -> T {
        x.max(self.lo).min(self.hi)
    }
}

/// Barrier and QP configuration for a single obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfParams<T> {
    pub obstacle_center: Point2<T>,
    /// Safe distance from the obstacle centre.
    pub delta: T,
    /// Forward shift of the barrier reference point.
    pub epsilon: T,
    /// Gain of the linear class-K function `alpha(h) = gain * h`.
    pub alpha_gain: T,
    /// Weight on linear-velocity deviation; large values steer instead of braking.
    pub kappa: T,
    pub v_bounds: Interval<T>,
    pub omega_bounds: Interval<T>,
    pub v_des: T,
    /// Quadratic penalty on constraint relaxation, used only when the hard
    /// constraint cannot be met inside the control box.
    pub slack_weight: T,
}

impl<T: Real> CbfParams<T> {
    /// Defaults for the 1.5 m arena task with the obstacle at `obstacle_center`.
    pub fn with_obstacle(obstacle_center: Point2<T>) -> Self {
        let v_des = T::lit(0.2);
        Self {
            obstacle_center,
            delta: T::lit(0.45),
            epsilon: T::lit(0.05),
            alpha_gain: T::one(),
            kappa: T::lit(500.0),
            v_bounds: Interval::new(T::zero(), v_des),
            omega_bounds: Interval::symmetric(T::lit(0.7)),
            v_des,
            slack_weight: T::lit(1e4),
        }
    }

    pub fn validate(&self) -> Result<(), CbfError> {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        let finite = [
            ("obstacle_center.x", self.obstacle_center[0]),
            ("obstacle_center.y", self.obstacle_center[1]),
            ("v_bounds.lo", self.v_bounds.lo),
            ("v_bounds.hi", self.v_bounds.hi),
            ("omega_bounds.lo", self.omega_bounds.lo),
            ("omega_bounds.hi", self.omega_bounds.hi),
            ("v_des", self.v_des),
        ];
        for (name, x) in finite {
            if !x.is_finite() {
                return Err(CbfError::NonFinite(name));
            }
        }
        let positive = [
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("alpha_gain", self.alpha_gain),
            ("kappa", self.kappa),
            ("slack_weight", self.slack_weight),
        ];
        for (name, x) in positive {
            if !x.is_finite() {
                return Err(CbfError::NonFinite(name));
            }
            if x <= T::zero() {
                return Err(CbfError::NonPositive { name, value: f(x) });
            }
        }
        for (name, iv) in [("v_bounds", self.v_bounds), ("omega_bounds", self.omega_bounds)] {
            if iv.lo > iv.hi {
                return Err(CbfError::EmptyInterval { name, lo: f(iv.lo), hi: f(iv.hi) });
            }
        }
        if !self.v_bounds.contains(self.v_des) {
            return Err(CbfError::DesiredVelocityOutOfBounds {
                v_des: f(self.v_des),
                lo: f(self.v_bounds.lo),
                hi: f(self.v_bounds.hi),
            });
        }
        Ok(())
    }

    /// Class-K function applied to the barrier value.
    pub fn alpha(&self, h: T) -> T {
        self.alpha_gain * h
    }

    /// Radius of the ball the shifted point must stay out of.
    pub fn keep_out_radius(&self) -> T {
        self.delta + self.epsilon
    }
}

/// Output of the safety filter for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeControl<T> {
    pub control: Control<T>,
    /// Barrier value at the queried state.
    pub h: T,
    /// Guardrail engaged (`h <= 0`).
    pub active: bool,
    /// Constraint relaxation used; zero whenever the hard QP is feasible.
    pub slack: T,
    /// The barrier gradient vanished, so no first-order safe direction exists.
    pub degenerate: bool,
}

pub fn barrier_value<T: Real>(s: &UnicycleState<T>, params: &CbfParams<T>) -> T {
    let p = s.shifted_point(params.epsilon);
    let dx = p[0] - params.obstacle_center[0];
    let dy = p[1] - params.obstacle_center[1];
    let r = params.keep_out_radius();
    dx * dx + dy * dy - r * r
}

/// Coefficients `(a_v, a_omega)` of `dh/dt = a_v * v + a_omega * omega`.
pub fn constraint_coefficients<T: Real>(s: &UnicycleState<T>, params: &CbfParams<T>) -> (T, T) {
    let p = s.shifted_point(params.epsilon);
    let two = T::lit(2.0);
    let d = [two * (p[0] - params.obstacle_center[0]), two * (p[1] - params.obstacle_center[1])];
    let r = rotation_matrix(s.theta);
    let a_v = d[0] * r[0][0] + d[1] * r[1][0];
    let a_omega = (d[0] * r[0][1] + d[1] * r[1][1]) * params.epsilon;
    (a_v, a_omega)
}

/// Builds the safety QP for state `s` and RL proposal `omega_pi`.
pub fn safety_qp<T: Real>(s: &UnicycleState<T>, omega_pi: T, params: &CbfParams<T>) -> SafetyQp<T> {
    let h = barrier_value(s, params);
    let (a_v, a_omega) = constraint_coefficients(s, params);
    SafetyQp {
        kappa: params.kappa,
        v_des: params.v_des,
        omega_pi,
        a_v,
        a_omega,
        rhs: -params.alpha(h),
        v_bounds: params.v_bounds,
        omega_bounds: params.omega_bounds,
        slack_weight: params.slack_weight,
    }
}

/// Minimally invasive safety filter.
///
/// With `h > 0` the command `(v_des, proposal.omega)` passes through
/// untouched. Otherwise the priority-weighted QP is solved exactly; see
/// [`SafetyQp::solve`] for the treatment of infeasible instances.
pub fn solve_safe_control<T: Real>(
    s: &UnicycleState<T>,
    proposal: Control<T>,
    params: &CbfParams<T>,
) -> SafeControl<T> {
    debug_assert!(
        params.omega_bounds.contains(proposal.omega),
        "proposal omega must be clamped to the bounds before filtering"
    );
    let h = barrier_value(s, params);
    if h > T::zero() {
        return SafeControl {
            control: Control::new(params.v_des, proposal.omega),
            h,
            active: false,
            slack: T::zero(),
            degenerate: false,
        };
    }
    let qp = safety_qp(s, proposal.omega, params);
    if qp.a_v == T::zero() && qp.a_omega == T::zero() {
        return SafeControl {
            control: Control::new(params.v_des, proposal.omega),
            h,
            active: true,
            slack: qp.rhs.max(T::zero()),
            degenerate: true,
        };
    }
    let sol = qp.solve();
    SafeControl {
        control: sol.control,
        h,
        active: true,
        slack: sol.slack,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> CbfParams<f64> {
        CbfParams::with_obstacle([0.0, 0.0])
    }

    #[test]
    fn barrier_examples() {
        let p = params();
        let h = barrier_value(&UnicycleState::new(1.0, 0.0, PI), &p);
        assert!((h - 0.6525).abs() < 1e-12);
        let h = barrier_value(&UnicycleState::new(0.55, 0.0, PI), &p);
        assert!(h.abs() < 1e-12);
        let h = barrier_value(&UnicycleState::new(0.0, 0.46, 0.0), &p);
        assert!((h + 0.0359).abs() < 1e-12);
    }

    #[test]
    fn coefficient_examples() {
        let p = params();
        let (av, aw) = constraint_coefficients(&UnicycleState::new(0.0, 0.46, 0.0), &p);
        assert!((av - 0.1).abs() < 1e-12 && (aw - 0.046).abs() < 1e-12);
        let (av, aw) = constraint_coefficients(&UnicycleState::new(0.55, 0.0, PI), &p);
        assert!((av + 1.0).abs() < 1e-12 && aw.abs() < 1e-12);
        // shifted point on the obstacle centre
        let (av, aw) = constraint_coefficients(&UnicycleState::new(-0.05, 0.0, 0.0), &p);
        assert_eq!((av, aw), (0.0, 0.0));
    }

    #[test]
    fn coefficients_match_numeric_time_derivative() {
        let p = CbfParams { obstacle_center: [0.1, -0.2], ..params() };
        let s = UnicycleState::new(0.3, 0.1, 2.0);
        let (av, aw) = constraint_coefficients(&s, &p);
        let (v, w, dt) = (0.13, -0.4, 1e-6);
        let fwd = |sgn: f64| {
            let th = s.theta + sgn * w * dt;
            let st = UnicycleState {
                x: s.x + sgn * v * s.theta.cos() * dt,
                y: s.y + sgn * v * s.theta.sin() * dt,
                theta: th,
            };
            barrier_value(&st, &p)
        };
        let hdot = (fwd(1.0) - fwd(-1.0)) / (2.0 * dt);
        assert!((hdot - (av * v + aw * w)).abs() < 1e-8);
    }

    #[test]
    fn barrier_sign_matches_distance() {
        let p = params();
        for i in 0..200 {
            let t = i as f64 * 0.1;
            let s = UnicycleState::new(0.5 * t.cos(), 0.5 * (1.3 * t).sin(), t);
            let q = s.shifted_point(p.epsilon);
            let far = q[0].hypot(q[1]) >= p.keep_out_radius();
            assert_eq!(barrier_value(&s, &p) >= 0.0, far);
        }
    }

    #[test]
    fn pass_through_when_safe() {
        let p = params();
        let s = UnicycleState::new(0.7, 0.7, 0.3);
        let out = solve_safe_control(&s, Control::new(0.2, -0.31), &p);
        assert!(!out.active);
        assert_eq!(out.control, Control::new(0.2, -0.31));
        assert_eq!(out.slack, 0.0);
    }

    #[test]
    fn hand_solved_instance() {
        let p = params();
        let out = solve_safe_control(&UnicycleState::new(0.0, 0.46, 0.0), Control::new(0.2, 0.0), &p);
        assert!(out.active && !out.degenerate);
        assert_eq!(out.control.v, 0.2);
        // 0.1 * 0.2 + 0.046 * w = 0.0359
        assert!((out.control.omega - 0.0159 / 0.046).abs() < 1e-12);
        assert!((out.control.omega - 0.3457).abs() < 1e-3);
        assert_eq!(out.slack, 0.0);
    }

    #[test]
    fn head_on_uses_slack_and_stops() {
        let p = params();
        let out = solve_safe_control(&UnicycleState::new(0.45, 0.0, PI), Control::new(0.2, 0.0), &p);
        assert!(out.active);
        assert_eq!(out.control.v, 0.0);
        assert!(out.slack > 0.0);
        // v = 0 gives dh/dt = 0, so slack equals -alpha(h)
        assert!((out.slack - 0.09).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gradient_is_flagged() {
        let p = params();
        let out = solve_safe_control(&UnicycleState::new(-0.05, 0.0, 0.0), Control::new(0.2, 0.1), &p);
        assert!(out.degenerate && out.active);
        assert_eq!(out.control, Control::new(0.2, 0.1));
        assert!((out.slack - 0.25).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut p = params();
        assert!(p.validate().is_ok());
        p.kappa = 0.0;
        assert!(matches!(p.validate(), Err(CbfError::NonPositive { name: "kappa", .. })));
        let mut p = params();
        p.v_des = 0.3;
        assert!(matches!(p.validate(), Err(CbfError::DesiredVelocityOutOfBounds { .. })));
        let mut p = params();
        p.omega_bounds = Interval::new(0.5, -0.5);
        assert!(matches!(p.validate(), Err(CbfError::EmptyInterval { .. })));
        let mut p = params();
        p.delta = f64::NAN;
        assert_eq!(p.validate(), Err(CbfError::NonFinite("delta")));
    }

    #[test]
    fn works_in_single_precision() {
        let p = CbfParams::<f32>::with_obstacle([0.0, 0.0]);
        let out = solve_safe_control(&UnicycleState::new(0.0f32, 0.46, 0.0), Control::new(0.2, 0.0), &p);
        assert!((out.control.omega - 0.3457).abs() < 1e-3);
    }
}

//! Randomised comparison of the active-set solver against the grid oracle.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kinematics::{Control, UnicycleState};

use super::{barrier_value, oracle_solve, safety_qp, solve_safe_control, CbfParams};

/// Finest grid spacing used by the check.
pub const ORACLE_RESOLUTION: f64 = 1e-5;

/// A state whose shifted point lies inside the keep-out ball, with a random
/// admissible proposal. With `vary_params` the gains and radii are drawn
/// too; otherwise the task defaults are kept.
pub fn activated_instance<R: Rng + ?Sized>(
    rng: &mut R,
    vary_params: bool,
) -> (UnicycleState<f64>, Control<f64>, CbfParams<f64>) {
    use std::f64::consts::PI;
    loop {
        let mut p = CbfParams::with_obstacle([rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
        if vary_params {
            p.kappa = 10f64.powf(rng.random_range(0.0..3.0));
            p.delta = rng.random_range(0.3..0.6);
            p.epsilon = rng.random_range(0.02..0.1);
            p.alpha_gain = rng.random_range(0.5..2.0);
        }
        let theta = rng.random_range(-PI..PI);
        let r = p.keep_out_radius() * rng.random_range(0.0f64..1.0).sqrt();
        let phi: f64 = rng.random_range(-PI..PI);
        // place the shifted point, then back the agent off along its heading
        let q = [p.obstacle_center[0] + r * phi.cos(), p.obstacle_center[1] + r * phi.sin()];
        let s = UnicycleState::new(q[0] - p.epsilon * theta.cos(), q[1] - p.epsilon * theta.sin(), theta);
        let omega = rng.random_range(p.omega_bounds.lo..=p.omega_bounds.hi);
        if barrier_value(&s, &p) <= 0.0 {
            return (s, Control::new(p.v_des, omega), p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QpCheckReport {
    pub instances: usize,
    /// Largest `|objective(analytic) - objective(oracle)|`.
    pub max_gap: f64,
    /// Largest `objective(analytic) - objective(oracle)`; positive only if
    /// the oracle found a cheaper point.
    pub max_excess: f64,
    /// Smallest `a_v v + a_omega omega + slack - rhs`.
    pub min_residual: f64,
    pub seconds: f64,
}

pub fn qp_check(instances: usize, seed: u64, vary_params: bool) -> QpCheckReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap = 0.0f64;
    let mut max_excess = f64::NEG_INFINITY;
    let mut min_residual = f64::INFINITY;
    for _ in 0..instances {
        let (s, u, p) = activated_instance(&mut rng, vary_params);
        let qp = safety_qp(&s, u.omega, &p);
        let a = solve_safe_control(&s, u, &p);
        let o = oracle_solve(&s, u, &p, ORACLE_RESOLUTION);
        let diff = qp.penalized_objective(a.control) - qp.penalized_objective(o);
        max_gap = max_gap.max(diff.abs());
        max_excess = max_excess.max(diff);
        min_residual = min_residual.min(qp.lhs(a.control) + a.slack - qp.rhs);
    }
    QpCheckReport {
        instances,
        max_gap,
        max_excess,
        min_residual,
        seconds: start.elapsed().as_secs_f64(),
    }
}

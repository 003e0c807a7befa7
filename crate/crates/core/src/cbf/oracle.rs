//! Brute-force reference solver for the safety QP.
//!
//! Shares nothing with the active-set code except the problem data. The
//! search is nested: an outer grid over one input and, for each outer value,
//! an inner grid over the other input restricted to the interval where the
//! hard constraint holds (computed directly from the half-plane). Both levels
//! minimise convex functions of one variable, so the best grid point of a
//! stage brackets the true minimiser and the next, finer stage searches only
//! that bracket.

use crate::kinematics::{Control, UnicycleState};
use crate::scalar::Real;

use super::{barrier_value, safety_qp, CbfParams, Interval, SafetyQp};

/// Resolution of the first, full-range grid stage.
pub const DEFAULT_COARSE_RESOLUTION: f64 = 1e-3;

/// Grid-search the filter output for `s`. Mirrors `solve_safe_control`:
/// with a positive barrier the unconstrained optimum is returned.
pub fn oracle_solve<T: Real>(
    s: &UnicycleState<T>,
    proposal: Control<T>,
    params: &CbfParams<T>,
    resolution: T,
) -> Control<T> {
    let h = barrier_value(s, params);
    let qp = safety_qp(s, proposal.omega, params);
    if h > T::zero() {
        // no constraint: the grid search degenerates to a clamp of the target,
        // which lies in the box by precondition
        return Control::new(params.v_des, proposal.omega);
    }
    oracle_solve_qp(&qp, T::lit(DEFAULT_COARSE_RESOLUTION).max(resolution), resolution)
}

/// Nested grid search over the QP box. Stages shrink by a factor of ten
/// from `coarse` until the spacing is at most `fine`.
pub fn oracle_solve_qp<T: Real>(qp: &SafetyQp<T>, coarse: T, fine: T) -> Control<T> {
    assert!(fine > T::zero() && coarse >= fine, "invalid grid resolutions");

    // Max of a linear function over the box is attained at a corner, and the
    // corners are grid points of every stage.
    let corners = [
        (qp.v_bounds.lo, qp.omega_bounds.lo),
        (qp.v_bounds.lo, qp.omega_bounds.hi),
        (qp.v_bounds.hi, qp.omega_bounds.lo),
        (qp.v_bounds.hi, qp.omega_bounds.hi),
    ];
    let feasible = corners
        .iter()
        .any(|&(v, w)| qp.a_v * v + qp.a_omega * w >= qp.rhs);

    // Pick the nesting that keeps the outer function's curvature bounded:
    // with the inner input pinned on the constraint line the outer function
    // picks up weight_inner * (a_outer / a_inner)^2.
    let outer_is_v = {
        let by_v = if qp.a_omega == T::zero() {
            T::infinity()
        } else {
            (qp.a_v / qp.a_omega).powi(2)
        };
        let by_omega = if qp.a_v == T::zero() {
            T::infinity()
        } else {
            qp.kappa * (qp.a_omega / qp.a_v).powi(2)
        };
        by_v <= by_omega
    };

    let problem = Nested {
        qp,
        feasible,
        outer_is_v,
    };
    let (outer_lo, outer_hi) = match problem.outer_domain() {
        Some(d) => d,
        None => unreachable!("feasibility was established on a corner"),
    };
    let (x, _) = grid_minimize(outer_lo, outer_hi, coarse, fine, |x| problem.inner_min(x, coarse, fine).1);
    let (y, _) = problem.inner_min(x, coarse, fine);
    if outer_is_v {
        Control::new(x, y)
    } else {
        Control::new(y, x)
    }
}

struct Nested<'a, T> {
    qp: &'a SafetyQp<T>,
    feasible: bool,
    outer_is_v: bool,
}

impl<T: Real> Nested<'_, T> {
    fn split(&self) -> (Interval<T>, T, Interval<T>, T) {
        if self.outer_is_v {
            (self.qp.v_bounds, self.qp.a_v, self.qp.omega_bounds, self.qp.a_omega)
        } else {
            (self.qp.omega_bounds, self.qp.a_omega, self.qp.v_bounds, self.qp.a_v)
        }
    }

    fn control(&self, x: T, y: T) -> Control<T> {
        if self.outer_is_v {
            Control::new(x, y)
        } else {
            Control::new(y, x)
        }
    }

    /// Objective: tracking cost plus the slack penalty at the implied slack.
    /// In the feasible case only constraint-satisfying points are visited,
    /// so the penalty vanishes there.
    fn objective(&self, x: T, y: T) -> T {
        let u = self.control(x, y);
        let dv = u.v - self.qp.v_des;
        let dw = u.omega - self.qp.omega_pi;
        let short = self.qp.rhs - (self.qp.a_v * u.v + self.qp.a_omega * u.omega);
        let slack = if short > T::zero() { short } else { T::zero() };
        self.qp.kappa * dv * dv + dw * dw + self.qp.slack_weight * slack * slack
    }

    /// Outer values for which some inner value satisfies the constraint.
    fn outer_domain(&self) -> Option<(T, T)> {
        let (ox, ax, oy, ay) = self.split();
        if !self.feasible {
            return Some((ox.lo, ox.hi));
        }
        let best_inner = if ay >= T::zero() { ay * oy.hi } else { ay * oy.lo };
        // need ax * x >= rhs - best_inner
        let need = self.qp.rhs - best_inner;
        let (mut lo, mut hi) = (ox.lo, ox.hi);
        if ax > T::zero() {
            lo = lo.max(need / ax);
        } else if ax < T::zero() {
            hi = hi.min(need / ax);
        } else if need > T::zero() {
            return None;
        }
        // guard against rounding pushing a corner-touching domain empty
        if lo > hi {
            let mid = if ax > T::zero() { ox.hi } else { ox.lo };
            return Some((mid, mid));
        }
        Some((lo, hi))
    }

    /// Inner values satisfying the constraint for outer value `x`.
    fn inner_domain(&self, x: T) -> Option<(T, T)> {
        let (_, ax, oy, ay) = self.split();
        if !self.feasible {
            return Some((oy.lo, oy.hi));
        }
        let need = self.qp.rhs - ax * x;
        let (mut lo, mut hi) = (oy.lo, oy.hi);
        if ay > T::zero() {
            lo = lo.max(need / ay);
        } else if ay < T::zero() {
            hi = hi.min(need / ay);
        } else if need > T::zero() {
            return None;
        }
        if lo > hi {
            // only reachable through rounding at the domain edge
            let edge = if ay > T::zero() { oy.hi } else { oy.lo };
            return Some((edge, edge));
        }
        Some((lo, hi))
    }

    fn inner_min(&self, x: T, coarse: T, fine: T) -> (T, T) {
        match self.inner_domain(x) {
            Some((lo, hi)) => grid_minimize(lo, hi, coarse, fine, |y| self.objective(x, y)),
            None => (T::nan(), T::infinity()),
        }
    }
}

/// Staged grid minimisation of a convex function on `[lo, hi]`. Every stage
/// samples a uniform grid that includes both endpoints; the next stage
/// searches two cells either side of the best sample at a tenth of the
/// spacing.
fn grid_minimize<T: Real>(lo: T, hi: T, coarse: T, fine: T, mut f: impl FnMut(T) -> T) -> (T, T) {
    let ten = T::lit(10.0);
    let two = T::lit(2.0);
    let (mut a, mut b) = (lo, hi);
    let mut res = coarse;
    loop {
        let width = b - a;
        let cells = (width / res).ceil().to_usize().unwrap_or(0).max(1);
        let step = width / T::from_usize(cells).expect("cell count fits");
        let mut best = (a, f(a));
        for i in 1..=cells {
            let x = if i == cells { b } else { a + step * T::from_usize(i).expect("index fits") };
            let fx = f(x);
            if fx < best.1 {
                best = (x, fx);
            }
        }
        if res <= fine || width == T::zero() {
            return best;
        }
        a = (best.0 - two * step).max(lo);
        b = (best.0 + two * step).min(hi);
        res = (res / ten).max(fine);
    }
}

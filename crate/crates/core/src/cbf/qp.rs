//! Exact solution of the two-variable safety QP by active-set enumeration.

use crate::kinematics::Control;
use crate::scalar::Real;

use super::Interval;

/// `min kappa (v - v_des)^2 + (omega - omega_pi)^2`
/// s.t. `a_v v + a_omega omega >= rhs`, `v`, `omega` in their boxes.
///
/// When the half-plane misses the box entirely, the constraint is relaxed
/// with a slack `s >= 0` and `slack_weight * s^2` is added to the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyQp<T> {
    pub kappa: T,
    pub v_des: T,
    pub omega_pi: T,
    pub a_v: T,
    pub a_omega: T,
    /// `-alpha(h)`.
    pub rhs: T,
    pub v_bounds: Interval<T>,
    pub omega_bounds: Interval<T>,
    pub slack_weight: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSolution<T> {
    pub control: Control<T>,
    pub slack: T,
    pub objective: T,
    /// Whether the hard constraint was attainable inside the box.
    pub feasible: bool,
}

#[derive(Clone, Copy)]
enum Pin {
    Free,
    Lo,
    Hi,
}

const PINS: [Pin; 3] = [Pin::Free, Pin::Lo, Pin::Hi];

impl<T: Real> SafetyQp<T> {
    /// Left-hand side `a_v v + a_omega omega`.
    pub fn lhs(&self, u: Control<T>) -> T {
        self.a_v * u.v + self.a_omega * u.omega
    }

    /// Largest attainable left-hand side over the control box.
    pub fn max_lhs(&self) -> T {
        let best = |a: T, iv: Interval<T>| if a >= T::zero() { a * iv.hi } else { a * iv.lo };
        best(self.a_v, self.v_bounds) + best(self.a_omega, self.omega_bounds)
    }

    pub fn hard_feasible(&self) -> bool {
        self.max_lhs() >= self.rhs
    }

    /// Smallest slack making `u` satisfy the relaxed constraint.
    pub fn implied_slack(&self, u: Control<T>) -> T {
        (self.rhs - self.lhs(u)).max(T::zero())
    }

    pub fn tracking_cost(&self, u: Control<T>) -> T {
        let dv = u.v - self.v_des;
        let dw = u.omega - self.omega_pi;
        self.kappa * dv * dv + dw * dw
    }

    /// Tracking cost plus the slack penalty at the implied slack.
    pub fn penalized_objective(&self, u: Control<T>) -> T {
        let s = self.implied_slack(u);
        self.tracking_cost(u) + self.slack_weight * s * s
    }

    fn in_box(&self, u: Control<T>) -> bool {
        self.v_bounds.contains(u.v) && self.omega_bounds.contains(u.omega)
    }

    fn pinned(pin: Pin, iv: Interval<T>) -> Option<T> {
        match pin {
            Pin::Free => None,
            Pin::Lo => Some(iv.lo),
            Pin::Hi => Some(iv.hi),
        }
    }

    /// Exact minimiser.
    ///
    /// Every candidate below minimises the objective on the affine hull of
    /// one face of the feasible polygon; the optimum of a strictly convex QP
    /// lies in the relative interior of some face, so the cheapest feasible
    /// candidate is the optimum.
    pub fn solve(&self) -> QpSolution<T> {
        if self.hard_feasible() {
            self.solve_hard()
        } else {
            self.solve_relaxed()
        }
    }

    fn solve_hard(&self) -> QpSolution<T> {
        let tol = T::epsilon() * T::lit(64.0) * (T::one() + self.rhs.abs());
        let mut best: Option<(Control<T>, T)> = None;
        let mut consider = |u: Control<T>| {
            if !self.in_box(u) || self.lhs(u) < self.rhs - tol {
                return;
            }
            let cost = self.tracking_cost(u);
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((u, cost));
            }
        };

        // constraint inactive: the objective is separable
        for pv in PINS {
            for pw in PINS {
                let v = Self::pinned(pv, self.v_bounds).unwrap_or(self.v_des);
                let w = Self::pinned(pw, self.omega_bounds).unwrap_or(self.omega_pi);
                consider(Control::new(v, w));
            }
        }

        // constraint active, both inputs free: weighted projection onto the line
        let two = T::lit(2.0);
        let denom = self.a_v * self.a_v / (two * self.kappa) + self.a_omega * self.a_omega / two;
        if denom > T::zero() {
            let gap = self.rhs - (self.a_v * self.v_des + self.a_omega * self.omega_pi);
            let lambda = gap / denom;
            consider(Control::new(
                self.v_des + lambda * self.a_v / (two * self.kappa),
                self.omega_pi + lambda * self.a_omega / two,
            ));
        }

        // constraint active with one input on a bound
        if self.a_omega != T::zero() {
            for v in [self.v_bounds.lo, self.v_bounds.hi] {
                consider(Control::new(v, (self.rhs - self.a_v * v) / self.a_omega));
            }
        }
        if self.a_v != T::zero() {
            for w in [self.omega_bounds.lo, self.omega_bounds.hi] {
                consider(Control::new((self.rhs - self.a_omega * w) / self.a_v, w));
            }
        }

        let (u, cost) = best.expect("a feasible box always yields a feasible vertex candidate");
        QpSolution {
            control: u,
            slack: T::zero(),
            objective: cost,
            feasible: true,
        }
    }

    /// Box-constrained minimisation of the slack-penalised objective. Inside
    /// the box the slack is strictly positive, so the penalty is a smooth
    /// quadratic and the active set only involves the bounds.
    fn solve_relaxed(&self) -> QpSolution<T> {
        let m = self.slack_weight;
        let (av, aw, c) = (self.a_v, self.a_omega, self.rhs);
        let mut best: Option<(Control<T>, T)> = None;
        let mut consider = |u: Control<T>| {
            if !(u.v.is_finite() && u.omega.is_finite()) || !self.in_box(u) {
                return;
            }
            let cost = self.penalized_objective(u);
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((u, cost));
            }
        };

        for pv in PINS {
            for pw in PINS {
                let u = match (Self::pinned(pv, self.v_bounds), Self::pinned(pw, self.omega_bounds)) {
                    (Some(v), Some(w)) => Control::new(v, w),
                    (Some(v), None) => {
                        let w = (self.omega_pi + m * aw * (c - av * v)) / (T::one() + m * aw * aw);
                        Control::new(v, w)
                    }
                    (None, Some(w)) => {
                        let v = (self.kappa * self.v_des + m * av * (c - aw * w))
                            / (self.kappa + m * av * av);
                        Control::new(v, w)
                    }
                    (None, None) => {
                        // [[k + m av^2, m av aw], [m av aw, 1 + m aw^2]] u = rhs
                        let h11 = self.kappa + m * av * av;
                        let h12 = m * av * aw;
                        let h22 = T::one() + m * aw * aw;
                        let r1 = self.kappa * self.v_des + m * av * c;
                        let r2 = self.omega_pi + m * aw * c;
                        let det = h11 * h22 - h12 * h12;
                        Control::new((r1 * h22 - h12 * r2) / det, (h11 * r2 - h12 * r1) / det)
                    }
                };
                consider(u);
            }
        }

        let (u, cost) = best.expect("box corners are always candidates");
        QpSolution {
            control: u,
            slack: self.implied_slack(u),
            objective: cost,
            feasible: false,
        }
    }
}

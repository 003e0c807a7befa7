//! First-order unicycle kinematics and planar frame helpers.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A point or vector in the plane, `[x, y]`.
pub type Point2<T> = [T; 2];

/// Planar pose of the agent. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

/// Linear and angular velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control<T> {
    pub v: T,
    pub omega: T,
}

impl<T: Real> Control<T> {
    pub fn new(v: T, omega: T) -> Self {
        Self { v, omega }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let two_pi = T::TAU();
    if theta > -T::PI() && theta <= T::PI() {
        return theta;
    }
    let wrapped = theta - two_pi * ((theta - T::PI()) / two_pi).ceil();
    // ceil can land one period off at the representable edges
    if wrapped <= -T::PI() {
        wrapped + two_pi
    } else if wrapped > T::PI() {
        wrapped - two_pi
    } else {
        wrapped
    }
}

/// Local-to-global rotation `[[cos, -sin], [sin, cos]]`.
pub fn rotation_matrix<T: Real>(theta: T) -> [[T; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

impl<T: Real> UnicycleState<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2<T> {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// One explicit Euler step of `x' = v cos(theta)`, `y' = v sin(theta)`,
    /// `theta' = omega`.
    pub fn step(&self, u: Control<T>, dt: T) -> Self {
        debug_assert!(dt > T::zero());
        let (s, c) = self.theta.sin_cos();
        Self::new(
            self.x + u.v * c * dt,
            self.y + u.v * s * dt,
            self.theta + u.omega * dt,
        )
    }

    /// The reference point `epsilon` ahead of the agent along its heading.
    pub fn shifted_point(&self, epsilon: T) -> Point2<T> {
        let (s, c) = self.theta.sin_cos();
        [self.x + epsilon * c, self.y + epsilon * s]
    }

    /// Expresses a world point in the agent frame: `R(theta)^T (p - x)`.
    pub fn to_agent_frame(&self, p_world: Point2<T>) -> Point2<T> {
        let dx = p_world[0] - self.x;
        let dy = p_world[1] - self.y;
        let (s, c) = self.theta.sin_cos();
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

pub fn distance<T: Real>(a: Point2<T>, b: Point2<T>) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

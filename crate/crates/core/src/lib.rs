//! Control-barrier-function guardrails for off-policy reinforcement learning.
//!
//! The numeric building blocks (kinematics, barrier, safety QP, networks) are
//! generic over [`Real`]; the aliases below fix the precision used by the
//! environment, trainer and tools.

pub mod cbf;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod integration;
pub mod kinematics;
pub mod nn;
pub mod sac;
pub mod scalar;
pub mod train;

pub use scalar::Real;

pub type UnicycleState = kinematics::UnicycleState<f64>;
pub type Control = kinematics::Control<f64>;
pub type CbfParams = cbf::CbfParams<f64>;
pub type SafeControl = cbf::SafeControl<f64>;
pub type Sac = sac::Sac<f64>;

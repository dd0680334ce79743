//! Perception-aware nonlinear model predictive control for generically
//! tilted multi-rotors (GTMR).
//!
//! The crate is organised bottom-up:
//!
//! * [`quat`]: quaternion algebra and the geodesic attitude error.
//! * [`model`]: rigid-body dynamics with propeller speeds in the state, RK4
//!   integration and its sensitivities.
//! * [`perception`]: pinhole projection, field-of-view residuals and the
//!   bearing-cosine outputs.
//! * [`ocp`]: the optimal control problem: outputs, cost, hard and soft constraints.
//! * [`solver`]: condensing, the dense QP backends and the real-time
//!   iteration loop.
//! * [`sim`]: closed-loop multi-rate simulation of the tracking scenario.
//! * [`verify`]: oracle suites that cross-check the solver and the derivatives.
//!
//! Interchangeable pieces (thrust models, QP backends, oracle suites) are
//! trait objects looked up by name in a [`registry::Registry`].

pub mod model;
pub mod ocp;
pub mod perception;
pub mod quat;
pub mod registry;
pub mod sim;
pub mod solver;
pub mod verify;

#[cfg(test)]
pub(crate) mod testing;

pub use quat::{Quaternion, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate quaternion (norm below 1e-12)")]
    DegenerateQuaternion,
    #[error("target behind camera (optical-axis coordinate {0})")]
    TargetBehindCamera(f64),
    #[error("zero-norm camera point")]
    ZeroNormPoint,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("QP error: {0}")]
    Qp(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

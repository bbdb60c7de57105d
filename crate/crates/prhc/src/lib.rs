//! Certified reduced-order receding horizon control of linear time-varying parabolic
//! equations on the unit square.
//!
//! Layers, bottom-up: [`fem`] (mesh, assembly, actuators), [`dynamics`] (time stepping),
//! [`ocp`] (finite-horizon optimal control with a squared-l1 control cost), [`rom`]
//! (POD reduced models and residual norms), [`certify`] (a posteriori bounds) and [`rhc`]
//! (the closed loop, with or without a certified reduced model).

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod dynamics;
pub mod fem;
pub mod linalg;
pub mod ocp;
pub mod rhc;
pub mod rom;
pub mod setup;
pub mod study;
pub mod validate;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid actuator layout: {0}")]
    InvalidLayout(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("snapshot set carries no energy")]
    EmptySnapshots,
    #[error("reduced model rejected {updates} times at closed-loop step {step}")]
    UpdateBudgetExhausted { step: usize, updates: usize },
    #[error("time step too large for the estimators: 2*tau*eta_H = {0} must stay below 1")]
    StepTooLarge(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

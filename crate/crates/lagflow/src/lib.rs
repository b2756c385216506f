//! # lagflow
//!
//! Solvers for equality-constrained optimization problems
//!
//! ```text
//! minimize f(x)   subject to   h(x) = 0,
//! ```
//!
//! with `f: R^n -> R` and `h: R^n -> R^m`, built on a control-theoretic view:
//! the primal variables evolve as the plant
//!
//! ```text
//! xdot = -grad f(x) - J_h(x)^T lambda,      y = h(x),
//! ```
//!
//! whose input is the multiplier vector `lambda` and whose output is the
//! constraint violation. Regulating `y` to zero while the plant settles yields
//! a stationary point. Three interchangeable controllers are provided:
//!
//! * **PDGD** — pure integral action `lambdadot = Ki * h(x)`, the classical
//!   primal-dual gradient dynamics;
//! * **PI** — adds a proportional term, `lambdadot = -Kp * J_h * grad_x L + Ki * h(x)`,
//!   which provably speeds up convergence on strongly convex problems and can
//!   stabilize non-convex ones where PDGD diverges;
//! * **FL** — feedback linearization: `lambda` is computed algebraically from a
//!   Gram-matrix solve so that each output channel becomes a decoupled
//!   first-order lag `y_i(t) = y_i(0) exp(-K_i t)`.
//!
//! The crate is organized as:
//!
//! * [`problem`] — problem definitions, derivative oracles with finite-difference
//!   fallbacks, squared-slack lifting of bound constraints;
//! * [`controllers`] — the three closed-loop vector fields;
//! * [`integrate`] — fixed-step Euler/RK4 flows with convergence and divergence
//!   detection;
//! * [`analysis`] — gain tuning with guaranteed decay rates, Lyapunov
//!   monitoring, LTI eigenvalue analysis, zero-dynamics/second-order checks,
//!   and a KKT oracle for quadratic programs;
//! * [`bench`] — four reproducible benchmark experiments (quadratic sweep,
//!   Shidoku puzzle, gray-box system identification, chemical separation).

pub mod analysis;
pub mod bench;
pub mod controllers;
pub mod integrate;
mod linalg;
pub mod problem;

pub use analysis::{
    kkt_oracle, kp_from_ki, lti_closed_loop, lyapunov_monitor, tune_pi_gains, zero_dynamics_check,
    KiBranch, LtiStabilityReport, LyapunovReport, TuningParams, ZeroDynamicsReport,
};
pub use controllers::{fl_control, fl_rhs, pi_rhs, plant_rhs, Controller, Derivatives, GainConfig};
pub use integrate::{integrate, stable_step_size, IntegratorConfig, Method, SolveReport, SolveStatus};
pub use problem::{
    eval_gradient_fd, eval_jacobian_fd, lift_with_slacks, validate_problem, JointState, ProblemDef,
    QuadraticProblem, SlackTransform, ValidationReport, VarBound,
};

/// Errors surfaced by solver operations.
///
/// Dimension mismatches between a state and its owning problem are programmer
/// errors and panic instead.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("non-finite value encountered while evaluating {what}")]
    NonFiniteEvaluation { what: &'static str },
    #[error("invalid bound on variable {index}: lower {lower} must be below upper {upper}")]
    InvalidBound { index: usize, lower: f64, upper: f64 },
    #[error("constraint Gram matrix J_h J_h^T is numerically singular (rank-deficient Jacobian)")]
    SingularGram,
    #[error("matrix is not Hurwitz: spectral abscissa {abscissa}")]
    NotHurwitz { abscissa: f64 },
    #[error("invalid curvature/gain bounds: {0}")]
    InvalidBounds(String),
    #[error("point is not stationary: |grad_x L|_inf = {residual}")]
    NotStationary { residual: f64 },
    #[error("constraint Jacobian has rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("KKT matrix is singular")]
    SingularKkt,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Executable forms of the convergence theory: PI gain tuning with a
//! guaranteed exponential rate, Lyapunov-envelope monitoring, closed-loop LTI
//! eigenvalue analysis, the zero-dynamics/second-order-sufficiency test, and a
//! direct KKT solve used as ground truth on quadratic programs.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::GainConfig;
use crate::integrate::stable_step_size;
use crate::linalg::{null_space_basis, symmetric_eigen_range, symmetrize};
use crate::problem::{JointState, ProblemDef, QuadraticProblem};
use crate::{Error, Result};

/// Which of the two admissible integral gains is selected:
/// `Ki = rho + Kp * beta2` or `Ki = rho + Kp * beta1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KiBranch {
    RhoPlusKpBeta2,
    RhoPlusKpBeta1,
}

/// PI gains together with the curvature/constraint bounds they were derived
/// from and the guaranteed exponential decay rate `mu` of the Lyapunov
/// function `V(z) = rho |x - x*|^2 + |lambda - lambda*|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    /// Lower curvature bound of the cost Hessian surrogate `B(x)`.
    pub beta1: f64,
    pub beta2: f64,
    /// Smallest eigenvalue of `C C^T`.
    pub alpha1: f64,
    /// Largest eigenvalue of `C C^T`, when known (only needed to compare
    /// against the PDGD rate ceiling).
    pub alpha2: Option<f64>,
    pub kp: f64,
    pub rho: f64,
    pub ki: f64,
    pub mu: f64,
    pub branch: KiBranch,
}

impl TuningParams {
    pub fn gains(&self) -> GainConfig {
        GainConfig::pi(self.kp, self.ki)
    }

    pub fn with_alpha2(mut self, alpha2: f64) -> Self {
        self.alpha2 = Some(alpha2);
        self
    }
}

fn check_bounds(beta1: f64, beta2: f64) -> Result<()> {
    if !(beta1 > 0.0 && beta2 > 0.0 && beta1 <= beta2) {
        return Err(Error::InvalidBounds(format!(
            "need 0 < beta1 <= beta2, got beta1 = {beta1}, beta2 = {beta2}"
        )));
    }
    Ok(())
}

/// Decay rate `mu = min{ Kp alpha1, 2 beta1 - Kp (beta2 - beta1)^2 / rho }`.
pub fn decay_rate(kp: f64, rho: f64, beta1: f64, beta2: f64, alpha1: f64) -> f64 {
    let spread = kp * (beta2 - beta1).powi(2);
    let second = if spread == 0.0 {
        2.0 * beta1
    } else if rho > 0.0 {
        2.0 * beta1 - spread / rho
    } else {
        f64::NEG_INFINITY
    };
    (kp * alpha1).min(second)
}

/// Upper bound `alpha1 beta1 / (4 alpha2)` on the PDGD exponential rate; the
/// PI rate exceeds it for large enough `Kp` and `rho`.
pub fn pdgd_rate_ceiling(alpha1: f64, alpha2: f64, beta1: f64) -> f64 {
    alpha1 * beta1 / (4.0 * alpha2)
}

/// Chooses PI gains with a strictly positive guaranteed rate.
///
/// The admissible region requires `rho >= Kp (beta2 - beta1)^2 / (2 beta1)`;
/// taking that bound with equality drives the second term of the rate to
/// zero, so `rho` is set to twice it, which yields
/// `mu = min{ Kp alpha1, beta1 } > 0`. When `beta1 = beta2` the bound
/// degenerates to zero and `rho = Kp beta1` keeps `Ki` strictly positive.
pub fn tune_pi_gains(
    beta1: f64,
    beta2: f64,
    alpha1: f64,
    kp: f64,
    branch: KiBranch,
) -> Result<TuningParams> {
    check_bounds(beta1, beta2)?;
    if !(alpha1 > 0.0 && kp > 0.0) {
        return Err(Error::InvalidBounds(format!(
            "need alpha1 > 0 and kp > 0, got alpha1 = {alpha1}, kp = {kp}"
        )));
    }

    let rho = if beta2 > beta1 {
        kp * (beta2 - beta1).powi(2) / beta1
    } else {
        kp * beta1
    };
    let beta = match branch {
        KiBranch::RhoPlusKpBeta2 => beta2,
        KiBranch::RhoPlusKpBeta1 => beta1,
    };
    let ki = rho + kp * beta;
    let mu = decay_rate(kp, rho, beta1, beta2, alpha1);
    debug_assert!(mu > 0.0);

    Ok(TuningParams { beta1, beta2, alpha1, alpha2: None, kp, rho, ki, mu, branch })
}

/// Solves the pair `{ rho = Kp (beta2 - beta1)^2 / (2 beta1),
/// Ki = rho + Kp beta }` for `(Kp, rho)` at a prescribed `Ki`:
/// `Kp = Ki / (beta + (beta2 - beta1)^2 / (2 beta1))`. With `beta1 = beta2`
/// the pair degenerates to `Kp = Ki / beta`, `rho = 0`.
pub fn kp_from_ki(beta1: f64, beta2: f64, ki: f64, branch: KiBranch) -> Result<(f64, f64)> {
    check_bounds(beta1, beta2)?;
    if ki <= 0.0 {
        return Err(Error::InvalidBounds(format!("need ki > 0, got {ki}")));
    }
    let beta = match branch {
        KiBranch::RhoPlusKpBeta2 => beta2,
        KiBranch::RhoPlusKpBeta1 => beta1,
    };
    let half_spread = (beta2 - beta1).powi(2) / (2.0 * beta1);
    let kp = ki / (beta + half_spread);
    let rho = kp * half_spread;
    Ok((kp, rho))
}

/// Result of checking a trajectory against the exponential Lyapunov envelope
/// `V(z(t)) <= V(z(0)) e^{-mu t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub v0: f64,
    pub mu: f64,
    pub samples: usize,
    /// Worst excess `V(t_k) - V(0) e^{-mu t_k}` over all samples.
    pub max_violation: f64,
    /// Envelope satisfied at every sample within the slack.
    pub holds: bool,
    /// Least-squares slope of `log V` against `t` (NaN with fewer than two
    /// positive samples).
    pub empirical_exponent: f64,
}

/// Evaluates `V(z) = rho |x - x*|^2 + |lambda - lambda*|^2` along a sampled
/// trajectory and tests the decay envelope with the given absolute slack.
pub fn lyapunov_monitor(
    traj: &[JointState],
    z_star: &JointState,
    rho: f64,
    mu: f64,
    slack: f64,
) -> LyapunovReport {
    assert!(!traj.is_empty(), "need at least one sample");
    assert!(rho > 0.0 && mu > 0.0);

    let v = |z: &JointState| -> f64 {
        rho * (&z.x - &z_star.x).norm_squared() + (&z.lambda - &z_star.lambda).norm_squared()
    };
    let t0 = traj[0].t;
    let v0 = v(&traj[0]);

    let mut max_violation = f64::NEG_INFINITY;
    let mut logs: Vec<(f64, f64)> = Vec::new();
    for z in traj {
        let vk = v(z);
        let envelope = v0 * (-mu * (z.t - t0)).exp();
        max_violation = max_violation.max(vk - envelope);
        if vk > 1e-300 {
            logs.push((z.t - t0, vk.ln()));
        }
    }

    let empirical_exponent = if logs.len() >= 2 {
        let n = logs.len() as f64;
        let (st, sl) = logs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mt, ml) = (st / n, sl / n);
        let num: f64 = logs.iter().map(|(t, l)| (t - mt) * (l - ml)).sum();
        let den: f64 = logs.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
        if den > 0.0 {
            num / den
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };

    LyapunovReport {
        v0,
        mu,
        samples: traj.len(),
        max_violation,
        holds: max_violation <= slack,
        empirical_exponent,
    }
}

/// Eigenvalue analysis of the PI closed loop on a quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiStabilityReport {
    pub eigenvalues: Vec<Complex<f64>>,
    pub hurwitz: bool,
    /// Largest real part over all eigenvalues.
    pub spectral_abscissa: f64,
    /// Safe forward-Euler step (safety 0.9) when the matrix is Hurwitz.
    pub suggested_dt: Option<f64>,
}

/// Assembles the affine closed-loop system `zdot = A z + b` of the PI
/// controller on `min (1/2) x^T W x  s.t.  C x + d = 0`:
///
/// ```text
/// A = [ -W                -C^T       ]        b = [ 0    ]
///     [ Ki C - Kp C W     -Kp C C^T  ]            [ Ki d ]
/// ```
pub fn closed_loop_system(q: &QuadraticProblem, g: &GainConfig) -> (DMatrix<f64>, DVector<f64>) {
    let (n, m) = (q.n(), q.m());
    let (w, c) = (q.w(), q.c());
    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&(-w));
    a.view_mut((0, n), (n, m)).copy_from(&(-c.transpose()));
    let lower_left = c * g.ki - (c * w) * g.kp;
    a.view_mut((n, 0), (m, n)).copy_from(&lower_left);
    let lower_right = (c * c.transpose()) * (-g.kp);
    a.view_mut((n, n), (m, m)).copy_from(&lower_right);

    let mut b = DVector::zeros(n + m);
    b.rows_mut(n, m).copy_from(&(q.d() * g.ki));
    (a, b)
}

/// Spectral abscissa below which a matrix is declared Hurwitz.
pub const HURWITZ_TOL: f64 = -1e-12;

/// Computes the closed-loop eigenvalues, the Hurwitz verdict and a suggested
/// Euler step for the PI controller on a quadratic program.
pub fn lti_closed_loop(q: &QuadraticProblem, g: &GainConfig) -> LtiStabilityReport {
    let (a, _) = closed_loop_system(q, g);
    let eig = a.clone().complex_eigenvalues();
    let eigenvalues: Vec<Complex<f64>> = eig.iter().copied().collect();
    let spectral_abscissa = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let hurwitz = spectral_abscissa < HURWITZ_TOL;
    let suggested_dt = if hurwitz { stable_step_size(&a, 0.9).ok() } else { None };
    LtiStabilityReport { eigenvalues, hurwitz, spectral_abscissa, suggested_dt }
}

/// Zero-dynamics linearization at a stationary point: the reduced Hessian
/// `Jperp H_xx L Jperp^T` on the constraint tangent space, whose positive
/// definiteness is the second-order sufficient condition and certifies local
/// asymptotic stability of the feedback-linearized flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroDynamicsReport {
    /// (n - m) x n matrix with orthonormal rows spanning `null(J_h(x*))`.
    pub jh_perp: DMatrix<f64>,
    pub reduced_hessian: DMatrix<f64>,
    pub min_eig: f64,
    pub second_order_sufficient: bool,
}

const STATIONARITY_TOL: f64 = 1e-5;

pub fn zero_dynamics_check(
    p: &ProblemDef,
    x_star: &DVector<f64>,
    lambda_star: &DVector<f64>,
) -> Result<ZeroDynamicsReport> {
    let residual = p.grad_lagrangian(x_star, lambda_star)?.amax();
    if residual > STATIONARITY_TOL {
        return Err(Error::NotStationary { residual });
    }
    if p.m() > p.n() {
        return Err(Error::RankDeficient { rank: p.n(), expected: p.m() });
    }

    let j = p.jacobian(x_star)?;
    let jh_perp = null_space_basis(&j)?;
    let h = p.lagrangian_hessian(x_star, lambda_star)?;
    let reduced_hessian = symmetrize(&(&jh_perp * h * jh_perp.transpose()));
    let (min_eig, _) = symmetric_eigen_range(&reduced_hessian);

    Ok(ZeroDynamicsReport {
        jh_perp,
        reduced_hessian,
        min_eig,
        second_order_sufficient: min_eig > 0.0,
    })
}

/// Direct stationary-point solve for a quadratic program: the linear system
///
/// ```text
/// [ W   C^T ] [ x*      ]   [  0 ]
/// [ C   0   ] [ lambda* ] = [ -d ]
/// ```
///
/// Serves as independent ground truth for convergence and Lyapunov checks.
pub fn kkt_oracle(q: &QuadraticProblem) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (q.n(), q.m());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(q.w());
    k.view_mut((0, n), (n, m)).copy_from(&q.c().transpose());
    k.view_mut((n, 0), (m, n)).copy_from(q.c());

    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(&(-q.d()));

    let sol = k.lu().solve(&rhs).ok_or(Error::SingularKkt)?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

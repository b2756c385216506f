//! Fixed-step time integration of the closed-loop dynamics.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::{fl_rhs, pi_rhs, Controller, Derivatives, DualSignal, GainConfig};
use crate::problem::{JointState, ProblemDef};
use crate::{Error, Result};

/// Explicit integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Euler,
    Rk4,
}

/// Terminal condition of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Both stopping tolerances held at the final state.
    Converged,
    /// The time horizon elapsed first.
    MaxTimeReached,
    /// A state left the divergence bound or became non-finite.
    Diverged,
    /// Feedback linearization hit a rank-deficient constraint Jacobian.
    SingularGram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step size in seconds of flow time.
    pub dt: f64,
    pub t_max: f64,
    /// Convergence tolerance on `|h(x)|_inf`.
    pub stop_constraint_tol: f64,
    /// Convergence tolerance on `|xdot|_inf`.
    pub stop_stationarity_tol: f64,
    /// Histories are sampled every this many iterations.
    pub record_stride: usize,
    /// Also keep the sampled joint states (needed for Lyapunov monitoring and
    /// full trajectory export).
    pub record_states: bool,
    /// Declare divergence when `|z|_inf` exceeds this.
    pub divergence_bound: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: 1e-3,
            t_max: 100.0,
            stop_constraint_tol: 1e-7,
            stop_stationarity_tol: 1e-6,
            record_stride: 1,
            record_states: false,
            divergence_bound: 1e9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_max > 0.0 && self.dt < self.t_max) {
            return Err(Error::InvalidInput(format!(
                "need 0 < dt < t_max, got dt = {}, t_max = {}",
                self.dt, self.t_max
            )));
        }
        if self.stop_constraint_tol <= 0.0
            || self.stop_stationarity_tol <= 0.0
            || self.divergence_bound <= 0.0
        {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidInput("record_stride must be positive".into()));
        }
        Ok(())
    }
}

/// Trajectory summary returned by [`integrate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub final_state: JointState,
    /// Number of right-hand-side evaluations at base points (a run that starts
    /// on a stationary point converges with `iterations = 1`).
    pub iterations: usize,
    pub t_history: Vec<f64>,
    pub f_history: Vec<f64>,
    pub hinf_history: Vec<f64>,
    pub xdot_inf_history: Vec<f64>,
    pub state_history: Vec<JointState>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_hinf(&self) -> f64 {
        self.hinf_history.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Equality on everything except wall time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.status == other.status
            && self.final_state == other.final_state
            && self.iterations == other.iterations
            && self.t_history == other.t_history
            && self.f_history == other.f_history
            && self.hinf_history == other.hinf_history
            && self.xdot_inf_history == other.xdot_inf_history
    }
}

/// Advances the closed loop from `z0` until convergence, the time horizon, or
/// divergence. For PI/PDGD the integrated state is `(x, lambda)`; for FL only
/// `x` is integrated and `lambda` tracks the latest algebraic multiplier.
pub fn integrate(
    p: &ProblemDef,
    controller: Controller,
    gains: &GainConfig,
    z0: &JointState,
    cfg: &IntegratorConfig,
) -> SolveReport {
    cfg.validate().expect("invalid integrator configuration");
    assert_eq!(z0.x.len(), p.n());
    if controller == Controller::Fl {
        assert!(p.m() <= p.n(), "feedback linearization requires m <= n");
    } else {
        assert_eq!(z0.lambda.len(), p.m());
    }

    let started = Instant::now();
    let pdgd_gains;
    let gains = match controller {
        Controller::Pdgd => {
            pdgd_gains = GainConfig { kp: 0.0, ..gains.clone() };
            &pdgd_gains
        }
        _ => gains,
    };

    let eval = |x: &DVector<f64>, lam: &DVector<f64>| -> Result<Derivatives> {
        match controller {
            Controller::Fl => fl_rhs(p, x, gains),
            Controller::Pi | Controller::Pdgd => {
                let z = JointState { x: x.clone(), lambda: lam.clone(), t: 0.0 };
                pi_rhs(p, &z, gains)
            }
        }
    };

    let mut x = z0.x.clone();
    let mut lam = z0.lambda.clone();
    let t0 = z0.t;
    let dt = cfg.dt;
    let max_steps = ((cfg.t_max - t0) / dt - 1e-9).ceil().max(0.0) as usize;

    let mut report = SolveReport {
        status: SolveStatus::MaxTimeReached,
        final_state: z0.clone(),
        iterations: 0,
        t_history: Vec::new(),
        f_history: Vec::new(),
        hinf_history: Vec::new(),
        xdot_inf_history: Vec::new(),
        state_history: Vec::new(),
        wall_time: 0.0,
    };

    let mut step = 0usize;
    let mut last_recorded = usize::MAX;
    loop {
        let t = t0 + step as f64 * dt;
        let state_ok = x.iter().chain(lam.iter()).all(|v| v.is_finite())
            && x.amax().max(if lam.is_empty() { 0.0 } else { lam.amax() }) <= cfg.divergence_bound;
        if !state_ok {
            report.status = SolveStatus::Diverged;
            break;
        }

        let d = match eval(&x, &lam) {
            Ok(d) => d,
            Err(Error::SingularGram) => {
                report.status = SolveStatus::SingularGram;
                break;
            }
            Err(_) => {
                report.status = SolveStatus::Diverged;
                break;
            }
        };
        report.iterations += 1;
        if let DualSignal::Value(v) = &d.dual {
            lam = v.clone();
        }

        let hinf = if d.constraint.is_empty() { 0.0 } else { d.constraint.amax() };
        let xdot_inf = if d.xdot.is_empty() { 0.0 } else { d.xdot.amax() };
        let converged =
            hinf <= cfg.stop_constraint_tol && xdot_inf <= cfg.stop_stationarity_tol;
        let out_of_time = step >= max_steps;

        if step % cfg.record_stride == 0 || converged || out_of_time {
            record(&mut report, p, &x, &lam, t, hinf, xdot_inf, cfg);
            last_recorded = step;
        }

        if converged {
            report.status = SolveStatus::Converged;
            break;
        }
        if out_of_time {
            report.status = SolveStatus::MaxTimeReached;
            break;
        }

        match cfg.method {
            Method::Euler => {
                x.axpy(dt, &d.xdot, 1.0);
                if let DualSignal::Rate(r) = &d.dual {
                    lam.axpy(dt, r, 1.0);
                }
            }
            Method::Rk4 => {
                if let Err(status) = rk4_step(&eval, &mut x, &mut lam, &d, dt) {
                    report.status = status;
                    break;
                }
            }
        }
        step += 1;
    }

    let t = t0 + step as f64 * dt;
    if last_recorded != step && report.status == SolveStatus::Diverged {
        // Keep the last finite sample out; the diverged state is still
        // reported as final_state below.
    }
    report.final_state = JointState { x, lambda: lam, t };
    report.wall_time = started.elapsed().as_secs_f64();
    report
}

#[allow(clippy::too_many_arguments)]
fn record(
    report: &mut SolveReport,
    p: &ProblemDef,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    t: f64,
    hinf: f64,
    xdot_inf: f64,
    cfg: &IntegratorConfig,
) {
    report.t_history.push(t);
    report.f_history.push(p.cost(x).unwrap_or(f64::NAN));
    report.hinf_history.push(hinf);
    report.xdot_inf_history.push(xdot_inf);
    if cfg.record_states {
        report.state_history.push(JointState { x: x.clone(), lambda: lam.clone(), t });
    }
}

type EvalFn<'a> = dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<Derivatives> + 'a;

/// Classical RK4 step; `k1` is the already-evaluated derivative at the base
/// point. For FL the dual block is algebraic and only `x` is advanced.
fn rk4_step(
    eval: &EvalFn<'_>,
    x: &mut DVector<f64>,
    lam: &mut DVector<f64>,
    k1: &Derivatives,
    dt: f64,
) -> std::result::Result<(), SolveStatus> {
    let stage = |d: &Derivatives, w: f64| -> (DVector<f64>, DVector<f64>) {
        let xs = &*x + &d.xdot * (dt * w);
        let ls = match &d.dual {
            DualSignal::Rate(r) => &*lam + r * (dt * w),
            DualSignal::Value(_) => lam.clone(),
        };
        (xs, ls)
    };
    let map_err = |e: Error| match e {
        Error::SingularGram => SolveStatus::SingularGram,
        _ => SolveStatus::Diverged,
    };

    let (x2, l2) = stage(k1, 0.5);
    let k2 = eval(&x2, &l2).map_err(map_err)?;
    let (x3, l3) = stage(&k2, 0.5);
    let k3 = eval(&x3, &l3).map_err(map_err)?;
    let (x4, l4) = stage(&k3, 1.0);
    let k4 = eval(&x4, &l4).map_err(map_err)?;

    let w = dt / 6.0;
    x.axpy(w, &k1.xdot, 1.0);
    x.axpy(2.0 * w, &k2.xdot, 1.0);
    x.axpy(2.0 * w, &k3.xdot, 1.0);
    x.axpy(w, &k4.xdot, 1.0);
    if let (
        DualSignal::Rate(r1),
        DualSignal::Rate(r2),
        DualSignal::Rate(r3),
        DualSignal::Rate(r4),
    ) = (&k1.dual, &k2.dual, &k3.dual, &k4.dual)
    {
        lam.axpy(w, r1, 1.0);
        lam.axpy(2.0 * w, r2, 1.0);
        lam.axpy(2.0 * w, r3, 1.0);
        lam.axpy(w, r4, 1.0);
    }
    Ok(())
}

/// Largest forward-Euler step that keeps every mode of the linear system
/// `zdot = A z` inside the unit disk, scaled by `safety`:
/// `safety * min_i 2 |Re mu_i| / |mu_i|^2` over the eigenvalues of `A`.
pub fn stable_step_size(a: &DMatrix<f64>, safety: f64) -> Result<f64> {
    assert!(a.is_square());
    assert!(safety > 0.0 && safety <= 1.0, "safety must lie in (0, 1]");
    let eigs = a.clone().complex_eigenvalues();
    let mut dt = f64::INFINITY;
    for mu in eigs.iter() {
        if mu.re >= 0.0 {
            return Err(Error::NotHurwitz { abscissa: mu.re });
        }
        dt = dt.min(2.0 * mu.re.abs() / mu.norm_sqr());
    }
    Ok(safety * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::QuadraticProblem;
    use approx::assert_abs_diff_eq;

    fn scalar_pi_problem() -> ProblemDef {
        QuadraticProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        )
        .unwrap()
        .to_problem()
    }

    /// Closed form of exp(A t) for A = [[-1, -1], [1/4, 0]], which has the
    /// defective double eigenvalue -1/2: exp(A t) = e^{-t/2} (I + t (A + I/2)).
    fn expm_defective(t: f64) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.25, 0.0]);
        let n = &a + DMatrix::identity(2, 2) * 0.5;
        (DMatrix::identity(2, 2) + n * t) * (-0.5 * t).exp()
    }

    fn euler_endpoint(dt: f64) -> DVector<f64> {
        let p = scalar_pi_problem();
        let cfg = IntegratorConfig {
            method: Method::Euler,
            dt,
            t_max: 1.0,
            stop_constraint_tol: 1e-30,
            stop_stationarity_tol: 1e-30,
            record_stride: usize::MAX - 1,
            ..Default::default()
        };
        let z0 = JointState::new(DVector::from_element(1, 1.0), DVector::zeros(1));
        let r = integrate(&p, Controller::Pi, &GainConfig::pi(0.0, 0.25), &z0, &cfg);
        assert_eq!(r.status, SolveStatus::MaxTimeReached);
        assert_abs_diff_eq!(r.final_state.t, 1.0, epsilon = 1e-12);
        DVector::from_row_slice(&[r.final_state.x[0], r.final_state.lambda[0]])
    }

    #[test]
    fn euler_matches_matrix_exponential_first_order() {
        let z0 = DVector::from_row_slice(&[1.0, 0.0]);
        let exact = expm_defective(1.0) * &z0;

        let err = |dt: f64| (euler_endpoint(dt) - &exact).amax();
        let e1 = err(2e-3);
        let e2 = err(1e-3);
        assert!(e1 < 5e-3, "Euler error too large: {e1}");
        // Halving dt should roughly halve the first-order error.
        let ratio = e1 / e2;
        assert!((1.6..=2.4).contains(&ratio), "error ratio {ratio} not O(dt)");
    }

    #[test]
    fn stationary_start_converges_in_one_iteration() {
        let q = QuadraticProblem::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        let p = q.to_problem();
        let z0 = JointState::new(
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_element(1, -1.0),
        );
        let r = integrate(&p, Controller::Pi, &GainConfig::pi(1.0, 1.0), &z0, &IntegratorConfig::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn pdgd_diverges_on_indefinite_quadratic() {
        // W = diag(1, -1), C = (0, 2): PDGD is unstable for every Ki > 0.
        let q = QuadraticProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 2.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let p = q.to_problem();
        let z0 = JointState::new(
            DVector::from_row_slice(&[1.0, 1.0]),
            DVector::from_element(1, 1.0),
        );
        let cfg = IntegratorConfig {
            method: Method::Euler,
            dt: 1e-3,
            t_max: 200.0,
            record_stride: 1000,
            ..Default::default()
        };
        let r = integrate(&p, Controller::Pdgd, &GainConfig::pdgd(1.0), &z0, &cfg);
        assert_eq!(r.status, SolveStatus::Diverged);
    }

    #[test]
    fn stable_step_for_identity() {
        let a = DMatrix::<f64>::identity(2, 2) * -1.0;
        assert_abs_diff_eq!(stable_step_size(&a, 1.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(stable_step_size(&a, 0.5).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stable_step_for_diagonal() {
        let a = DMatrix::from_partial_diagonal(2, 2, &[-1.0, -10.0]);
        assert_abs_diff_eq!(stable_step_size(&a, 0.9).unwrap(), 0.18, epsilon = 1e-12);
    }

    #[test]
    fn stable_step_matches_grid_scan_oracle() {
        // Closed-loop matrix of the scalar example with w = 1, Kp = 3, Ki = 5:
        // eigenvalues -2 +- i.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 2.0, -3.0]);
        let d = stable_step_size(&a, 1.0).unwrap();
        assert_abs_diff_eq!(d, 0.8, epsilon = 1e-10);

        // Oracle: scan a dt grid for spectral radius of I + dt A below one.
        let radius = |dt: f64| {
            (DMatrix::identity(2, 2) + &a * dt)
                .complex_eigenvalues()
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max)
        };
        let mut largest_stable = 0.0;
        for k in 1..=1200 {
            let dt = k as f64 * 1e-3;
            if radius(dt) < 1.0 {
                largest_stable = dt;
            }
        }
        assert_abs_diff_eq!(d, largest_stable, epsilon = 2e-3);
    }

    #[test]
    fn stable_step_rejects_non_hurwitz() {
        let a = DMatrix::from_partial_diagonal(2, 2, &[-1.0, 0.5]);
        assert!(matches!(stable_step_size(&a, 0.9), Err(Error::NotHurwitz { .. })));
    }
}

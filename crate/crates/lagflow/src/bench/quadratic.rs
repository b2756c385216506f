//! Randomized strongly convex quadratic programs and the PI-vs-PDGD
//! iteration-count sweep.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{closed_loop_system, kkt_oracle, kp_from_ki, KiBranch};
use crate::bench::mix_seed;
use crate::controllers::GainConfig;
use crate::integrate::stable_step_size;
use crate::problem::QuadraticProblem;

/// Draws `W = 10 I + W0 W0^T` (positive definite, smallest eigenvalue at
/// least 10) and dense standard-normal `C`, `d` from a seeded generator.
/// `C` is redrawn in the measure-zero event of rank deficiency.
pub fn make_quadratic(n: usize, m: usize, seed: u64) -> QuadraticProblem {
    assert!(m >= 1 && m <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |r: usize, c: usize| -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    };

    let w0 = normal(n, n);
    let w = DMatrix::identity(n, n) * 10.0 + &w0 * w0.transpose();

    let c = loop {
        let c = normal(m, n);
        let gram = &c * c.transpose();
        let eig = gram.symmetric_eigen();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &v in eig.eigenvalues.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > 1e-10 * hi.max(1.0) {
            break c;
        }
    };

    let mut rng_d = rng;
    let d = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng_d));
    QuadraticProblem::new(w, c, d).expect("construction is valid by design")
}

/// Configuration of the iteration-count comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub m_values: Vec<usize>,
    pub runs: usize,
    /// Integral gain shared by both methods (PDGD rate eta = Ki).
    pub eta: f64,
    pub seed: u64,
    /// Safety factor applied to the per-method stable Euler step.
    pub safety: f64,
    /// A run converges when `|z_k - z*|_inf` drops below this.
    pub convergence_tol: f64,
    pub max_iterations: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 50,
            m_values: (2..=26).step_by(2).collect(),
            runs: 400,
            eta: 20.0,
            seed: 0,
            // Both methods run essentially at their stability boundary. A
            // tighter margin blunts the comparison (every mode contracts
            // slowly and both methods look alike); an even wider one puts the
            // binding mode so close to the unit circle that the small-m runs
            // become noise-dominated.
            safety: 0.98,
            convergence_tol: 1e-6,
            max_iterations: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub mean_pdgd_iterations: f64,
    pub mean_pi_iterations: f64,
    /// `(mean_pdgd - mean_pi) / mean_pdgd`.
    pub relative_gain: f64,
    pub pdgd_failures: usize,
    pub pi_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSweepReport {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

impl QuadraticSweepReport {
    /// PI needs fewer iterations than PDGD on average for every m.
    pub fn pi_always_faster(&self) -> bool {
        self.rows.iter().all(|r| r.mean_pi_iterations < r.mean_pdgd_iterations)
    }

    /// Relative gain of at least `threshold` for every `m >= m_from`.
    pub fn gain_at_least(&self, threshold: f64, m_from: usize) -> bool {
        self.rows.iter().filter(|r| r.m >= m_from).all(|r| r.relative_gain >= threshold)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pdgd_failures == 0 && r.pi_failures == 0)
            && self.pi_always_faster()
    }
}

/// Forward-Euler iterations of `z <- z + dt (A z + b)` from `z = 0` until the
/// iterate is within `tol` of `target` in the max norm. `None` when the cap
/// is hit.
fn euler_iterations_to_target(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    dt: f64,
    target: &DVector<f64>,
    tol: f64,
    cap: usize,
) -> Option<usize> {
    let dim = b.len();
    let mut z = DVector::zeros(dim);
    let mut rate = DVector::zeros(dim);
    for k in 1..=cap {
        rate.copy_from(b);
        rate.gemv(dt, a, &z, dt); // rate = dt (A z + b)
        z += &rate;
        let mut dist = 0.0f64;
        for i in 0..dim {
            dist = dist.max((z[i] - target[i]).abs());
        }
        if dist <= tol {
            return Some(k);
        }
    }
    None
}

#[derive(Debug, Clone, Copy)]
struct RunOutcome {
    pdgd: Option<usize>,
    pi: Option<usize>,
}

fn one_run(cfg: &SweepConfig, m: usize, run: usize) -> RunOutcome {
    let seed = mix_seed(cfg.seed, m as u64, run as u64);
    let q = make_quadratic(cfg.n, m, seed);
    let Ok((x_star, l_star)) = kkt_oracle(&q) else {
        return RunOutcome { pdgd: None, pi: None };
    };
    let mut target = DVector::zeros(cfg.n + m);
    target.rows_mut(0, cfg.n).copy_from(&x_star);
    target.rows_mut(cfg.n, m).copy_from(&l_star);

    let count = |gains: &GainConfig| -> Option<usize> {
        let (a, b) = closed_loop_system(&q, gains);
        let dt = stable_step_size(&a, cfg.safety).ok()?;
        euler_iterations_to_target(&a, &b, dt, &target, cfg.convergence_tol, cfg.max_iterations)
    };

    let pdgd = count(&GainConfig::pdgd(cfg.eta));
    let (beta1, beta2) = q.curvature_bounds();
    // The beta1 branch admits the larger proportional gain for a given Ki.
    let pi = kp_from_ki(beta1, beta2, cfg.eta, KiBranch::RhoPlusKpBeta1)
        .ok()
        .and_then(|(kp, _rho)| count(&GainConfig::pi(kp, cfg.eta)));

    RunOutcome { pdgd, pi }
}

/// Runs the full comparison: for each constraint count, `runs` random
/// problems are solved by Euler-discretized PDGD and PI (each with its own
/// stable step size) and the iterations to reach the KKT solution are
/// averaged. Individual run failures are recorded, not fatal.
pub fn quadratic_sweep(cfg: &SweepConfig) -> QuadraticSweepReport {
    let rows = cfg
        .m_values
        .iter()
        .map(|&m| {
            let outcomes: Vec<RunOutcome> = (0..cfg.runs)
                .into_par_iter()
                .map(|run| one_run(cfg, m, run))
                .collect();

            let mut sum_pdgd = 0.0;
            let mut n_pdgd = 0usize;
            let mut sum_pi = 0.0;
            let mut n_pi = 0usize;
            for o in &outcomes {
                if let Some(k) = o.pdgd {
                    sum_pdgd += k as f64;
                    n_pdgd += 1;
                }
                if let Some(k) = o.pi {
                    sum_pi += k as f64;
                    n_pi += 1;
                }
            }
            let mean_pdgd = sum_pdgd / n_pdgd.max(1) as f64;
            let mean_pi = sum_pi / n_pi.max(1) as f64;
            SweepRow {
                m,
                mean_pdgd_iterations: mean_pdgd,
                mean_pi_iterations: mean_pi,
                relative_gain: (mean_pdgd - mean_pi) / mean_pdgd,
                pdgd_failures: cfg.runs - n_pdgd,
                pi_failures: cfg.runs - n_pi,
            }
        })
        .collect();

    QuadraticSweepReport { config: cfg.clone(), rows }
}

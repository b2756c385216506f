//! Propane/isobutane/n-butane nonsharp separation: a 48-variable bilinear
//! cost with 38 linear/bilinear equality constraints and 47 interval-bounded
//! variables. The 94 finite bound sides are lifted with squared slacks to a
//! 142-variable, 132-equality problem solved by feedback linearization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::bench::mix_seed;
use crate::controllers::{Controller, GainConfig};
use crate::integrate::{integrate, IntegratorConfig, Method, SolveStatus};
use crate::problem::{JointState, ProblemDef, SlackTransform, VarBound};

/// One term of a (bi)linear polynomial over 1-based variable indices.
#[derive(Debug, Clone, Copy)]
enum Term {
    Const(f64),
    Lin(f64, usize),
    Bilin(f64, usize, usize),
}

use Term::{Bilin, Const, Lin};

#[derive(Debug, Clone)]
struct Poly(Vec<Term>);

impl Poly {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.0.iter().fold(0.0, |acc, t| {
            acc + match *t {
                Const(c) => c,
                Lin(c, i) => c * x[i - 1],
                Bilin(c, i, j) => c * x[i - 1] * x[j - 1],
            }
        })
    }

    fn add_gradient(&self, x: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        for t in &self.0 {
            match *t {
                Const(_) => {}
                Lin(c, i) => out[i - 1] += scale * c,
                Bilin(c, i, j) => {
                    if i == j {
                        out[i - 1] += scale * 2.0 * c * x[i - 1];
                    } else {
                        out[i - 1] += scale * c * x[j - 1];
                        out[j - 1] += scale * c * x[i - 1];
                    }
                }
            }
        }
    }

    fn add_hessian(&self, scale: f64, out: &mut DMatrix<f64>) {
        for t in &self.0 {
            if let Bilin(c, i, j) = *t {
                if i == j {
                    out[(i - 1, i - 1)] += scale * 2.0 * c;
                } else {
                    out[(i - 1, j - 1)] += scale * c;
                    out[(j - 1, i - 1)] += scale * c;
                }
            }
        }
    }
}

fn cost_poly() -> Poly {
    let (c11, c12) = (0.23947, 0.75835);
    let (c21, c22) = (-0.0139904, -0.0661588);
    let (c31, c32) = (0.0093514, 0.0338147);
    let (c41, c42) = (0.0077308, 0.0373349);
    let (c51, c52) = (-0.0005719, 0.0016371);
    let (c61, c62) = (0.0042656, 0.0288996);
    Poly(vec![
        Const(c11 + c12),
        Lin(c21, 5),
        Bilin(c31, 24, 5),
        Bilin(c41, 28, 5),
        Bilin(c51, 33, 5),
        Bilin(c61, 34, 5),
        Lin(c22, 13),
        Bilin(c32, 26, 13),
        Bilin(c42, 31, 13),
        Bilin(c52, 38, 13),
        Bilin(c62, 39, 13),
    ])
}

/// The 38 equalities in `h(x) = 0` form (right-hand sides moved left).
fn constraint_polys() -> Vec<Poly> {
    vec![
        // Mass balances.
        Poly(vec![Lin(1.0, 1), Lin(1.0, 2), Lin(1.0, 3), Lin(1.0, 4), Const(-300.0)]),
        Poly(vec![Lin(1.0, 6), Lin(-1.0, 8), Lin(-1.0, 7)]),
        Poly(vec![Lin(1.0, 9), Lin(-1.0, 12), Lin(-1.0, 10), Lin(-1.0, 11)]),
        Poly(vec![Lin(1.0, 14), Lin(-1.0, 17), Lin(-1.0, 15), Lin(-1.0, 16)]),
        Poly(vec![Lin(1.0, 18), Lin(-1.0, 20), Lin(-1.0, 19)]),
        // Splitter products.
        Poly(vec![Bilin(1.0, 6, 21), Bilin(-1.0, 24, 25)]),
        Poly(vec![Bilin(1.0, 14, 22), Bilin(-1.0, 26, 27)]),
        Poly(vec![Bilin(1.0, 9, 23), Bilin(-1.0, 28, 29)]),
        Poly(vec![Bilin(1.0, 18, 30), Bilin(-1.0, 31, 32)]),
        Poly(vec![Lin(1.0, 25), Bilin(-1.0, 5, 33)]),
        Poly(vec![Lin(1.0, 29), Bilin(-1.0, 5, 34)]),
        Poly(vec![Lin(1.0, 35), Bilin(-1.0, 5, 36)]),
        Poly(vec![Lin(1.0, 37), Bilin(-1.0, 13, 38)]),
        Poly(vec![Lin(1.0, 27), Bilin(-1.0, 13, 39)]),
        Poly(vec![Lin(1.0, 32), Bilin(-1.0, 13, 40)]),
        Poly(vec![Lin(1.0, 25), Bilin(-1.0, 6, 21), Bilin(-1.0, 9, 41)]),
        Poly(vec![Lin(1.0, 29), Bilin(-1.0, 6, 42), Bilin(-1.0, 9, 23)]),
        Poly(vec![Lin(1.0, 35), Bilin(-1.0, 6, 43), Bilin(-1.0, 9, 44)]),
        Poly(vec![Lin(1.0, 37), Bilin(-1.0, 14, 45), Bilin(-1.0, 18, 46)]),
        Poly(vec![Lin(1.0, 27), Bilin(-1.0, 14, 22), Bilin(-1.0, 18, 47)]),
        Poly(vec![Lin(1.0, 32), Bilin(-1.0, 14, 48), Bilin(-1.0, 18, 30)]),
        // Component recoveries.
        Poly(vec![Lin(0.33, 1), Bilin(1.0, 15, 45), Lin(-1.0, 25)]),
        Poly(vec![Lin(0.33, 1), Bilin(1.0, 15, 22), Lin(-1.0, 29)]),
        Poly(vec![Lin(0.33, 1), Bilin(1.0, 15, 48), Lin(-1.0, 35)]),
        Poly(vec![Lin(0.33, 2), Bilin(1.0, 10, 41), Lin(-1.0, 37)]),
        Poly(vec![Lin(0.33, 2), Bilin(1.0, 10, 23), Lin(-1.0, 27)]),
        Poly(vec![Lin(0.33, 2), Bilin(1.0, 10, 44), Lin(-1.0, 32)]),
        Poly(vec![
            Lin(0.33, 3),
            Bilin(1.0, 7, 21),
            Bilin(1.0, 11, 41),
            Bilin(1.0, 16, 45),
            Bilin(1.0, 19, 46),
            Const(-30.0),
        ]),
        Poly(vec![
            Lin(0.33, 3),
            Bilin(1.0, 7, 42),
            Bilin(1.0, 11, 23),
            Bilin(1.0, 16, 22),
            Bilin(1.0, 19, 47),
            Const(-50.0),
        ]),
        Poly(vec![
            Lin(0.33, 3),
            Bilin(1.0, 7, 43),
            Bilin(1.0, 11, 44),
            Bilin(1.0, 16, 48),
            Bilin(1.0, 19, 30),
            Const(-30.0),
        ]),
        // Mole-fraction closures.
        Poly(vec![Lin(1.0, 33), Lin(1.0, 34), Lin(1.0, 36), Const(-1.0)]),
        Poly(vec![Lin(1.0, 21), Lin(1.0, 42), Lin(1.0, 43), Const(-1.0)]),
        Poly(vec![Lin(1.0, 41), Lin(1.0, 23), Lin(1.0, 44), Const(-1.0)]),
        Poly(vec![Lin(1.0, 38), Lin(1.0, 39), Lin(1.0, 40), Const(-1.0)]),
        Poly(vec![Lin(1.0, 45), Lin(1.0, 22), Lin(1.0, 48), Const(-1.0)]),
        Poly(vec![Lin(1.0, 46), Lin(1.0, 47), Lin(1.0, 30), Const(-1.0)]),
        // Pinned fractions.
        Poly(vec![Lin(1.0, 43)]),
        Poly(vec![Lin(1.0, 46)]),
    ]
}

/// Interval bounds on 47 of the 48 variables (x41 is free), 1-based indices.
fn bound_table() -> Vec<VarBound> {
    let mut bounds = Vec::with_capacity(47);
    let mut push = |idx1: usize, lo: f64, hi: f64| bounds.push(VarBound::interval(idx1 - 1, lo, hi));
    for i in 1..=20 {
        push(i, 0.0, 150.0);
    }
    for i in [25, 27, 29, 32, 35, 37] {
        push(i, 0.0, 30.0);
    }
    for i in [21, 22, 23, 30, 33, 34, 36, 38, 39] {
        push(i, 0.0, 1.0);
    }
    for i in [40, 42, 43, 44, 45, 46, 47, 48] {
        push(i, 0.0, 1.0);
    }
    for i in [24, 26, 28, 31] {
        push(i, 0.85, 1.0);
    }
    bounds.sort_by_key(|b| b.index);
    bounds
}

fn base_problem() -> ProblemDef {
    let cost = Arc::new(cost_poly());
    let cons = Arc::new(constraint_polys());
    let n = 48;
    let m = cons.len();
    debug_assert_eq!(m, 38);

    let pc = cost.clone();
    let pg = cost.clone();
    let (hc, hj, hh) = (cons.clone(), cons.clone(), cons.clone());
    let ph = cost.clone();

    ProblemDef::builder(n, m)
        .cost(move |x| pc.eval(x))
        .gradient(move |x| {
            let mut g = DVector::zeros(n);
            pg.add_gradient(x, 1.0, &mut g);
            g
        })
        .constraints(move |x| DVector::from_fn(m, |k, _| hc[k].eval(x)))
        .jacobian(move |x| {
            let mut j = DMatrix::zeros(m, n);
            let mut row = DVector::zeros(n);
            for k in 0..m {
                row.fill(0.0);
                hj[k].add_gradient(x, 1.0, &mut row);
                j.row_mut(k).tr_copy_from(&row);
            }
            j
        })
        .lagrangian_hessian(move |_, lam| {
            let mut h = DMatrix::zeros(n, n);
            ph.add_hessian(1.0, &mut h);
            for k in 0..m {
                hh[k].add_hessian(lam[k], &mut h);
            }
            h
        })
        .label("chemical-separation")
        .build()
}

/// Base 48-variable problem together with its squared-slack transform.
pub fn make_chemical_parts() -> (ProblemDef, SlackTransform) {
    let base = base_problem();
    let transform = SlackTransform::new(base.clone(), bound_table())
        .expect("bound table is valid by construction");
    (base, transform)
}

/// The lifted problem: 142 variables, 132 equality constraints.
pub fn make_chemical() -> ProblemDef {
    make_chemical_parts().1.lift()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemicalRun {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_hinf: f64,
    /// Every constraint within 1e-7 at the final state.
    pub feasible: bool,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectory: Option<crate::bench::Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemicalReport {
    pub runs: usize,
    pub seed: u64,
    pub feasible_count: usize,
    pub best_objective: f64,
    pub mean_objective: f64,
    pub std_objective: f64,
    pub per_run: Vec<ChemicalRun>,
}

impl ChemicalReport {
    /// At least 90% of the runs feasible at the 1e-7 tolerance.
    pub fn passed(&self) -> bool {
        self.feasible_count * 10 >= self.runs * 9
    }
}

pub const CHEMICAL_FEASIBILITY_TOL: f64 = 1e-7;

pub fn default_chemical_gains(m: usize) -> GainConfig {
    // Closed-loop pole at -10 on every output channel.
    GainConfig::fl_uniform(10.0, m)
}

pub fn default_chemical_integrator() -> IntegratorConfig {
    IntegratorConfig {
        method: Method::Euler,
        dt: 5e-5,
        t_max: 3.0,
        stop_constraint_tol: CHEMICAL_FEASIBILITY_TOL,
        // Effectively run the whole window unless truly stationary early.
        stop_stationarity_tol: 1e-9,
        record_stride: 4000,
        record_states: false,
        divergence_bound: 1e9,
    }
}

/// Seeded feedback-linearization runs from x uniform on [0, 50] (bounds are
/// ignored at initialization on purpose; slacks start at the root of the
/// residual where the bound side holds and at zero where it is violated).
pub fn run_chemical(
    runs: usize,
    seed: u64,
    gains: Option<GainConfig>,
    integrator: Option<IntegratorConfig>,
    record_trajectories: bool,
) -> ChemicalReport {
    let (base, transform) = make_chemical_parts();
    let lifted = transform.lift();
    let gains = gains.unwrap_or_else(|| default_chemical_gains(lifted.m()));
    let cfg = integrator.unwrap_or_else(default_chemical_integrator);

    let per_run: Vec<ChemicalRun> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2, r as u64));
            let x_base = DVector::from_fn(base.n(), |_, _| rng.random_range(0.0..50.0));
            let x0 = transform.lift_point(&x_base);
            let z0 = JointState::new(x0, DVector::zeros(lifted.m()));

            let rep = integrate(&lifted, Controller::Fl, &gains, &z0, &cfg);
            let final_hinf = rep.final_hinf();
            let x_final = transform.project(&rep.final_state.x);
            let objective = base.cost(&x_final).unwrap_or(f64::NAN);
            ChemicalRun {
                status: rep.status,
                iterations: rep.iterations,
                final_hinf,
                feasible: final_hinf <= CHEMICAL_FEASIBILITY_TOL,
                objective,
                trajectory: record_trajectories.then(|| (&rep).into()),
            }
        })
        .collect();

    let feasible: Vec<f64> =
        per_run.iter().filter(|r| r.feasible).map(|r| r.objective).collect();
    let feasible_count = feasible.len();
    let best = feasible.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = if feasible_count > 0 {
        feasible.iter().sum::<f64>() / feasible_count as f64
    } else {
        f64::NAN
    };
    let std = if feasible_count > 1 {
        (feasible.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (feasible_count - 1) as f64)
            .sqrt()
    } else {
        f64::NAN
    };

    ChemicalReport {
        runs,
        seed,
        feasible_count,
        best_objective: best,
        mean_objective: mean,
        std_objective: std,
        per_run,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_problem_at;
    use rand::Rng;

    #[test]
    fn lifted_dimensions() {
        let p = make_chemical();
        assert_eq!(p.n(), 142);
        assert_eq!(p.m(), 132);
        let (base, t) = make_chemical_parts();
        assert_eq!(base.n(), 48);
        assert_eq!(base.m(), 38);
        assert_eq!(t.slack_count(), 94);
        assert_eq!(t.bounds().len(), 47);
    }

    #[test]
    fn pinned_fraction_rows_vanish() {
        let (base, _) = make_chemical_parts();
        let mut x = DVector::from_element(48, 0.7);
        x[42] = 0.0; // x43
        x[45] = 0.0; // x46
        let h = base.constraints(&x).unwrap();
        assert_eq!(h[36], 0.0);
        assert_eq!(h[37], 0.0);
    }

    /// Random point strictly inside every bound (free x41 drawn near 1).
    fn interior_point(t: &SlackTransform, rng: &mut impl Rng) -> DVector<f64> {
        let mut x = DVector::from_fn(48, |_, _| rng.random_range(0.3..0.7));
        for b in t.bounds() {
            let w = b.upper - b.lower;
            x[b.index] = b.lower + w * rng.random_range(0.15..0.85);
        }
        t.lift_point(&x)
    }

    #[test]
    fn derivatives_and_rank_at_interior_points() {
        use rand::SeedableRng;
        let (_, t) = make_chemical_parts();
        let lifted = t.lift();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let points: Vec<_> = (0..10).map(|_| interior_point(&t, &mut rng)).collect();
        let r = validate_problem_at(&lifted, &points);
        assert!(r.grad_ok, "grad err {}", r.max_grad_rel_err);
        assert!(r.jac_ok, "jac err {}", r.max_jac_rel_err);
        assert!(r.rank_ok, "min gram eigenvalue {}", r.min_gram_eigenvalue);
        assert!(r.min_gram_eigenvalue > 0.0);
    }

    #[test]
    fn lifted_cost_equals_base_cost() {
        use rand::SeedableRng;
        let (base, t) = make_chemical_parts();
        let lifted = t.lift();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = DVector::from_fn(48, |_, _| rng.random_range(-2.0..52.0));
            let xz = t.lift_point(&x);
            assert_eq!(base.cost(&x).unwrap(), lifted.cost(&xz).unwrap());
        }
    }
}

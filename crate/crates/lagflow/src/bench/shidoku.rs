//! 4x4 Shidoku puzzle as a polynomial equality system.
//!
//! Four cells are fixed; the 12 remaining cells are continuous unknowns
//! subject to 40 polynomial equations: every row, column and 2x2 corner block
//! must sum to 10 and multiply to 24, and every cell value must be a root of
//! `(v-1)(v-2)(v-3)(v-4)`. Restriction equations on fixed cells are
//! identically zero and kept so the constraint count stays at 40. With
//! `m = 40 > n = 12` feedback linearization does not apply; the experiment
//! runs the PI controller.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::mix_seed;
use crate::controllers::{Controller, GainConfig};
use crate::integrate::{integrate, IntegratorConfig, Method, SolveStatus};
use crate::problem::{JointState, ProblemDef};

/// Clue cells `(row, col, value)` of the puzzle instance.
pub const FIXED_CELLS: [(usize, usize, u8); 4] = [(0, 1, 1), (0, 3, 4), (2, 0, 2), (2, 3, 3)];

/// Row-major list of the 12 unknown cells.
fn unknown_cells() -> Vec<(usize, usize)> {
    let mut cells = Vec::with_capacity(12);
    for i in 0..4 {
        for j in 0..4 {
            if !FIXED_CELLS.iter().any(|&(fi, fj, _)| fi == i && fj == j) {
                cells.push((i, j));
            }
        }
    }
    cells
}

fn fixed_value(i: usize, j: usize) -> Option<f64> {
    FIXED_CELLS
        .iter()
        .find(|&&(fi, fj, _)| fi == i && fj == j)
        .map(|&(_, _, v)| v as f64)
}

/// The 12 groups: columns, rows, then corner blocks.
fn groups() -> Vec<[(usize, usize); 4]> {
    let mut gs = Vec::with_capacity(12);
    for j in 0..4 {
        gs.push([(0, j), (1, j), (2, j), (3, j)]);
    }
    for i in 0..4 {
        gs.push([(i, 0), (i, 1), (i, 2), (i, 3)]);
    }
    for bi in 0..2 {
        for bj in 0..2 {
            let (r, c) = (2 * bi, 2 * bj);
            gs.push([(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]);
        }
    }
    gs
}

/// `(v-1)(v-2)(v-3)(v-4)`.
fn integrality(v: f64) -> f64 {
    (v - 1.0) * (v - 2.0) * (v - 3.0) * (v - 4.0)
}

/// Derivative `4v^3 - 30v^2 + 70v - 50`.
fn integrality_prime(v: f64) -> f64 {
    ((4.0 * v - 30.0) * v + 70.0) * v - 50.0
}

/// Builds the 12-variable, 40-equation Shidoku system with zero cost and an
/// analytic Jacobian.
pub fn make_shidoku() -> ProblemDef {
    let cells = unknown_cells();
    let index_of = {
        let mut map = [[usize::MAX; 4]; 4];
        for (k, &(i, j)) in cells.iter().enumerate() {
            map[i][j] = k;
        }
        map
    };
    let gs = groups();

    let cells_h = cells.clone();
    let gs_h = gs.clone();
    let constraints = move |x: &DVector<f64>| -> DVector<f64> {
        let val = |i: usize, j: usize| fixed_value(i, j).unwrap_or_else(|| x[index_of[i][j]]);
        let mut h = DVector::zeros(40);
        let mut k = 0;
        for g in &gs_h {
            let (mut s, mut p) = (0.0, 1.0);
            for &(i, j) in g {
                let v = val(i, j);
                s += v;
                p *= v;
            }
            h[k] = s - 10.0;
            h[k + 1] = p - 24.0;
            k += 2;
        }
        for i in 0..4 {
            for j in 0..4 {
                h[k] = if fixed_value(i, j).is_some() { 0.0 } else { integrality(val(i, j)) };
                k += 1;
            }
        }
        debug_assert_eq!(k, 40);
        debug_assert_eq!(cells_h.len(), 12);
        h
    };

    let gs_j = gs;
    let jacobian = move |x: &DVector<f64>| -> DMatrix<f64> {
        let val = |i: usize, j: usize| fixed_value(i, j).unwrap_or_else(|| x[index_of[i][j]]);
        let mut jac = DMatrix::zeros(40, 12);
        let mut k = 0;
        for g in &gs_j {
            for &(i, j) in g {
                let col = index_of[i][j];
                if col == usize::MAX {
                    continue;
                }
                jac[(k, col)] = 1.0;
                let mut others = 1.0;
                for &(oi, oj) in g {
                    if (oi, oj) != (i, j) {
                        others *= val(oi, oj);
                    }
                }
                jac[(k + 1, col)] = others;
            }
            k += 2;
        }
        for i in 0..4 {
            for j in 0..4 {
                let col = index_of[i][j];
                if col != usize::MAX {
                    jac[(k, col)] = integrality_prime(val(i, j));
                }
                k += 1;
            }
        }
        jac
    };

    ProblemDef::builder(12, 40)
        .cost(|_| 0.0)
        .gradient(|_| DVector::zeros(12))
        .constraints(constraints)
        .jacobian(jacobian)
        .label("shidoku")
        .build()
}

/// Rebuilds the full 4x4 grid from the unknown vector; `None` when any value
/// is farther than `tol` from an integer in 1..=4.
pub fn decode_grid(x: &DVector<f64>, tol: f64) -> Option<[[u8; 4]; 4]> {
    let cells = unknown_cells();
    let mut grid = [[0u8; 4]; 4];
    for &(i, j, v) in &FIXED_CELLS {
        grid[i][j] = v;
    }
    for (k, &(i, j)) in cells.iter().enumerate() {
        let v = x[k];
        let r = v.round();
        if (v - r).abs() > tol || !(1.0..=4.0).contains(&r) {
            return None;
        }
        grid[i][j] = r as u8;
    }
    Some(grid)
}

/// Every row, column and corner block is a permutation of 1..=4.
pub fn is_valid_grid(grid: &[[u8; 4]; 4]) -> bool {
    let perm = |vals: [u8; 4]| {
        let mut seen = [false; 4];
        for v in vals {
            if !(1..=4).contains(&v) || seen[(v - 1) as usize] {
                return false;
            }
            seen[(v - 1) as usize] = true;
        }
        true
    };
    groups().iter().all(|g| perm([0, 1, 2, 3].map(|k| grid[g[k].0][g[k].1])))
}

/// Unknown-vector encoding of a full grid (inverse of [`decode_grid`]).
pub fn grid_to_unknowns(grid: &[[u8; 4]; 4]) -> DVector<f64> {
    let cells = unknown_cells();
    DVector::from_fn(cells.len(), |k, _| grid[cells[k].0][cells[k].1] as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShidokuRun {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_hinf: f64,
    pub solved: bool,
    pub grid: Option<[[u8; 4]; 4]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectory: Option<crate::bench::Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShidokuReport {
    pub runs: usize,
    pub seed: u64,
    pub successes: usize,
    pub per_run: Vec<ShidokuRun>,
}

impl ShidokuReport {
    /// At most two failed runs out of twenty (scaled proportionally).
    pub fn passed(&self) -> bool {
        self.successes * 10 >= self.runs * 9
    }
}

pub fn default_shidoku_gains() -> GainConfig {
    GainConfig::pi(0.1, 1.0)
}

pub fn default_shidoku_integrator() -> IntegratorConfig {
    IntegratorConfig {
        method: Method::Rk4,
        dt: 6.6e-4,
        t_max: 100.0,
        stop_constraint_tol: 1e-6,
        stop_stationarity_tol: 1e-6,
        record_stride: 2000,
        record_states: false,
        divergence_bound: 1e9,
    }
}

/// Seeded PI runs from `x(0) = |xi|, xi ~ N(0,1)` and normal multipliers.
/// A run counts as solved when every cell is within 1e-3 of an integer, the
/// decoded grid is valid, and the final constraint violation is at most 1e-6.
pub fn run_shidoku(
    runs: usize,
    seed: u64,
    gains: Option<GainConfig>,
    integrator: Option<IntegratorConfig>,
    record_trajectories: bool,
) -> ShidokuReport {
    let p = make_shidoku();
    let gains = gains.unwrap_or_else(default_shidoku_gains);
    let cfg = integrator.unwrap_or_else(default_shidoku_integrator);

    let per_run: Vec<ShidokuRun> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, r as u64));
            let x0 = DVector::from_fn(12, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v.abs()
            });
            let l0 = DVector::from_fn(40, |_, _| StandardNormal.sample(&mut rng));
            let rep = integrate(&p, Controller::Pi, &gains, &JointState::new(x0, l0), &cfg);

            let final_hinf = rep.final_hinf();
            let grid = decode_grid(&rep.final_state.x, 1e-3);
            let solved =
                grid.map(|g| is_valid_grid(&g)).unwrap_or(false) && final_hinf <= 1e-6;
            let trajectory = record_trajectories.then(|| (&rep).into());
            ShidokuRun {
                status: rep.status,
                iterations: rep.iterations,
                final_hinf,
                solved,
                grid,
                trajectory,
            }
        })
        .collect();

    let successes = per_run.iter().filter(|r| r.solved).count();
    ShidokuReport { runs, seed, successes, per_run }
}

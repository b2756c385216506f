//! Problem definitions and derivative oracles.
//!
//! A [`ProblemDef`] packages the evaluators of an equality-constrained problem
//! `min f(x) s.t. h(x) = 0` together with optional analytic derivatives. When
//! a derivative is missing, central finite differences are substituted with a
//! per-component step `max(1e-6, 1e-7 * |x_i|)`.
//!
//! Bound constraints are handled by [`SlackTransform`]: each finite bound side
//! `g(x) <= 0` is rewritten as `g(x) + z^2 = 0` with a fresh slack variable
//! `z`, producing a larger purely equality-constrained problem.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{is_finite_mat, is_finite_vec, symmetric_eigen_range, symmetrize};
use crate::{Error, Result};

pub type CostFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ConstraintFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// The stacked primal-dual state `z = (x, lambda)` at simulation time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub t: f64,
}

impl JointState {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, lambda, t: 0.0 }
    }

    /// Zero state with the dimensions of `p`.
    pub fn zeros(p: &ProblemDef) -> Self {
        Self::new(DVector::zeros(p.n()), DVector::zeros(p.m()))
    }

    pub fn is_finite(&self) -> bool {
        is_finite_vec(&self.x) && is_finite_vec(&self.lambda) && self.t.is_finite()
    }

    /// Max-norm over both blocks.
    pub fn inf_norm(&self) -> f64 {
        // amax panics on empty vectors; lambda may be empty for FL logging.
        let xa = if self.x.is_empty() { 0.0 } else { self.x.amax() };
        let la = if self.lambda.is_empty() { 0.0 } else { self.lambda.amax() };
        xa.max(la)
    }
}

/// An equality-constrained problem with optional analytic derivatives.
///
/// Evaluators must be pure and re-entrant; a `ProblemDef` is immutable after
/// construction and may be shared freely across concurrent solver runs.
#[derive(Clone)]
pub struct ProblemDef {
    n: usize,
    m: usize,
    cost: CostFn,
    grad: Option<GradFn>,
    constraints: ConstraintFn,
    jacobian: Option<JacobianFn>,
    lagrangian_hessian: Option<HessianFn>,
    label: String,
}

impl std::fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemDef")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_grad", &self.grad.is_some())
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl ProblemDef {
    pub fn builder(n: usize, m: usize) -> ProblemBuilder {
        ProblemBuilder {
            n,
            m,
            cost: None,
            grad: None,
            constraints: None,
            jacobian: None,
            lagrangian_hessian: None,
            label: String::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_analytic_hessian(&self) -> bool {
        self.lagrangian_hessian.is_some()
    }

    pub fn cost(&self, x: &DVector<f64>) -> Result<f64> {
        debug_assert_eq!(x.len(), self.n);
        let v = (self.cost)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteEvaluation { what: "cost" })
        }
    }

    /// `grad f(x)`, analytic when supplied, otherwise central differences.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        debug_assert_eq!(x.len(), self.n);
        let g = match &self.grad {
            Some(g) => g(x),
            None => gradient_fd_adaptive(self, x)?,
        };
        if is_finite_vec(&g) {
            Ok(g)
        } else {
            Err(Error::NonFiniteEvaluation { what: "gradient" })
        }
    }

    pub fn constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        debug_assert_eq!(x.len(), self.n);
        let h = (self.constraints)(x);
        assert_eq!(h.len(), self.m, "constraint evaluator returned wrong dimension");
        if is_finite_vec(&h) {
            Ok(h)
        } else {
            Err(Error::NonFiniteEvaluation { what: "constraints" })
        }
    }

    /// `J_h(x)` with m rows and n columns.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        debug_assert_eq!(x.len(), self.n);
        let j = match &self.jacobian {
            Some(j) => j(x),
            None => jacobian_fd_adaptive(self, x)?,
        };
        assert_eq!(j.shape(), (self.m, self.n), "jacobian evaluator returned wrong shape");
        if is_finite_mat(&j) {
            Ok(j)
        } else {
            Err(Error::NonFiniteEvaluation { what: "jacobian" })
        }
    }

    /// `grad_x L(x, lambda) = grad f(x) + J_h(x)^T lambda`.
    pub fn grad_lagrangian(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        debug_assert_eq!(lambda.len(), self.m);
        let mut g = self.gradient(x)?;
        if self.m > 0 {
            let j = self.jacobian(x)?;
            g.gemv_tr(1.0, &j, lambda, 1.0);
        }
        Ok(g)
    }

    /// Hessian of the Lagrangian with respect to `x`. Falls back to central
    /// differences of `grad_x L` when no analytic evaluator was supplied.
    pub fn lagrangian_hessian(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        debug_assert_eq!(lambda.len(), self.m);
        let h = match &self.lagrangian_hessian {
            Some(h) => h(x, lambda),
            None => {
                let mut h = DMatrix::zeros(self.n, self.n);
                let mut xp = x.clone();
                for i in 0..self.n {
                    let step = fd_step(x[i]);
                    xp[i] = x[i] + step;
                    let gp = self.grad_lagrangian(&xp, lambda)?;
                    xp[i] = x[i] - step;
                    let gm = self.grad_lagrangian(&xp, lambda)?;
                    xp[i] = x[i];
                    h.column_mut(i).copy_from(&((gp - gm) / (2.0 * step)));
                }
                symmetrize(&h)
            }
        };
        assert_eq!(h.shape(), (self.n, self.n));
        if is_finite_mat(&h) {
            Ok(h)
        } else {
            Err(Error::NonFiniteEvaluation { what: "lagrangian hessian" })
        }
    }
}

pub struct ProblemBuilder {
    n: usize,
    m: usize,
    cost: Option<CostFn>,
    grad: Option<GradFn>,
    constraints: Option<ConstraintFn>,
    jacobian: Option<JacobianFn>,
    lagrangian_hessian: Option<HessianFn>,
    label: String,
}

impl ProblemBuilder {
    pub fn cost(mut self, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.cost = Some(Arc::new(f));
        self
    }

    pub fn gradient(mut self, g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn constraints(
        mut self,
        h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.constraints = Some(Arc::new(h));
        self
    }

    pub fn jacobian(mut self, j: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn lagrangian_hessian(
        mut self,
        h: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.lagrangian_hessian = Some(Arc::new(h));
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn build(self) -> ProblemDef {
        assert!(self.n > 0, "problem must have at least one variable");
        let m = self.m;
        ProblemDef {
            n: self.n,
            m: self.m,
            cost: self.cost.unwrap_or_else(|| Arc::new(|_| 0.0)),
            grad: self.grad,
            constraints: self
                .constraints
                .unwrap_or_else(move || Arc::new(move |_| DVector::zeros(m))),
            jacobian: self.jacobian,
            lagrangian_hessian: self.lagrangian_hessian,
            label: self.label,
        }
    }
}

fn fd_step(xi: f64) -> f64 {
    1e-6f64.max(1e-7 * xi.abs())
}

fn gradient_fd_adaptive(p: &ProblemDef, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(p.n);
    let mut xp = x.clone();
    for i in 0..p.n {
        let step = fd_step(x[i]);
        xp[i] = x[i] + step;
        let fp = (p.cost)(&xp);
        xp[i] = x[i] - step;
        let fm = (p.cost)(&xp);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation { what: "cost probe" });
        }
        g[i] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}

fn jacobian_fd_adaptive(p: &ProblemDef, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut j = DMatrix::zeros(p.m, p.n);
    let mut xp = x.clone();
    for i in 0..p.n {
        let step = fd_step(x[i]);
        xp[i] = x[i] + step;
        let hp = (p.constraints)(&xp);
        xp[i] = x[i] - step;
        let hm = (p.constraints)(&xp);
        xp[i] = x[i];
        if !is_finite_vec(&hp) || !is_finite_vec(&hm) {
            return Err(Error::NonFiniteEvaluation { what: "constraint probe" });
        }
        j.column_mut(i).copy_from(&((hp - hm) / (2.0 * step)));
    }
    Ok(j)
}

/// Central-difference approximation of `grad f(x)` with a uniform step.
pub fn eval_gradient_fd(p: &ProblemDef, x: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(x.len(), p.n);
    let mut g = DVector::zeros(p.n);
    let mut xp = x.clone();
    for i in 0..p.n {
        xp[i] = x[i] + step;
        let fp = (p.cost)(&xp);
        xp[i] = x[i] - step;
        let fm = (p.cost)(&xp);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation { what: "cost probe" });
        }
        g[i] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}

/// Central-difference approximation of `J_h(x)` with a uniform step; row i
/// approximates `grad h_i(x)^T`.
pub fn eval_jacobian_fd(p: &ProblemDef, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(x.len(), p.n);
    let mut j = DMatrix::zeros(p.m, p.n);
    let mut xp = x.clone();
    for i in 0..p.n {
        xp[i] = x[i] + step;
        let hp = (p.constraints)(&xp);
        xp[i] = x[i] - step;
        let hm = (p.constraints)(&xp);
        xp[i] = x[i];
        if !is_finite_vec(&hp) || !is_finite_vec(&hm) {
            return Err(Error::NonFiniteEvaluation { what: "constraint probe" });
        }
        j.column_mut(i).copy_from(&((hp - hm) / (2.0 * step)));
    }
    Ok(j)
}

/// A quadratic program `min (1/2) x^T W x  s.t.  C x + d = 0` with symmetric
/// (not necessarily definite) `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    w: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DVector<f64>,
}

impl QuadraticProblem {
    pub fn new(w: DMatrix<f64>, c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "W must be square, got {} x {}",
                w.nrows(),
                w.ncols()
            )));
        }
        let skew = (&w - w.transpose()).amax();
        let scale = w.amax().max(1.0);
        if skew > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "W must be symmetric (relative asymmetry {:.3e})",
                skew / scale
            )));
        }
        if c.ncols() != n || c.nrows() != d.len() {
            return Err(Error::InvalidInput(format!(
                "C must be {} x {} to match W and d, got {} x {}",
                d.len(),
                n,
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self { w, c, d })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// Eigenvalue range of `W`: the curvature bounds `(beta1, beta2)`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        symmetric_eigen_range(&self.w)
    }

    /// Eigenvalue range of `C C^T`: the constraint bounds `(alpha1, alpha2)`.
    pub fn gram_bounds(&self) -> (f64, f64) {
        let g = &self.c * self.c.transpose();
        symmetric_eigen_range(&g)
    }

    /// Wraps the quadratic data as a [`ProblemDef`] with analytic derivatives.
    pub fn to_problem(&self) -> ProblemDef {
        let w = Arc::new(self.w.clone());
        let c = Arc::new(self.c.clone());
        let d = Arc::new(self.d.clone());
        let (wc, wg, wh) = (w.clone(), w.clone(), w.clone());
        let (cc, cj) = (c.clone(), c.clone());
        ProblemDef::builder(self.n(), self.m())
            .cost(move |x| 0.5 * x.dot(&(&*wc * x)))
            .gradient(move |x| &*wg * x)
            .constraints(move |x| &*cc * x + &*d)
            .jacobian(move |_| (*cj).clone())
            .lagrangian_hessian(move |_, _| (*wh).clone())
            .label("quadratic")
            .build()
    }
}

/// One two-sided (possibly half-open) interval bound on a single variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarBound {
    pub index: usize,
    /// Lower bound, `f64::NEG_INFINITY` when absent.
    pub lower: f64,
    /// Upper bound, `f64::INFINITY` when absent.
    pub upper: f64,
}

impl VarBound {
    pub fn interval(index: usize, lower: f64, upper: f64) -> Self {
        Self { index, lower, upper }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }
}

/// Which side of an interval a slack row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy)]
struct SlackRow {
    var: usize,
    bound: f64,
    side: Side,
}

impl SlackRow {
    /// Residual of the underlying inequality written as `g(x) <= 0`.
    fn g(&self, xv: f64) -> f64 {
        match self.side {
            Side::Lower => self.bound - xv,
            Side::Upper => xv - self.bound,
        }
    }

    /// Entry of the constraint gradient with respect to the bounded variable.
    fn dg(&self) -> f64 {
        match self.side {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// Squared-slack lifting of interval bounds into equality constraints.
///
/// Every finite bound side contributes one slack variable `z` and one equality
/// `g(x) + z^2 = 0`; the lifted problem stacks the slacks after the original
/// variables and the slack equations after the original constraints. The cost
/// is unchanged, so lifted and base objectives agree on the `x` part.
#[derive(Clone)]
pub struct SlackTransform {
    base: ProblemDef,
    bounds: Vec<VarBound>,
    rows: Vec<SlackRow>,
}

impl SlackTransform {
    pub fn new(base: ProblemDef, bounds: Vec<VarBound>) -> Result<Self> {
        let mut rows = Vec::new();
        for b in &bounds {
            if b.index >= base.n() {
                return Err(Error::InvalidInput(format!(
                    "bound on variable {} out of range for n = {}",
                    b.index,
                    base.n()
                )));
            }
            if b.lower >= b.upper {
                return Err(Error::InvalidBound {
                    index: b.index,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
            if b.lower.is_finite() {
                rows.push(SlackRow { var: b.index, bound: b.lower, side: Side::Lower });
            }
            if b.upper.is_finite() {
                rows.push(SlackRow { var: b.index, bound: b.upper, side: Side::Upper });
            }
        }
        Ok(Self { base, bounds, rows })
    }

    pub fn base(&self) -> &ProblemDef {
        &self.base
    }

    pub fn bounds(&self) -> &[VarBound] {
        &self.bounds
    }

    /// Number of slack variables (= number of finite bound sides).
    pub fn slack_count(&self) -> usize {
        self.rows.len()
    }

    /// Index where slack variables begin in the lifted vector.
    pub fn slack_offset(&self) -> usize {
        self.base.n()
    }

    /// First `n` coordinates of a lifted point.
    pub fn project(&self, lifted: &DVector<f64>) -> DVector<f64> {
        lifted.rows(0, self.base.n()).into_owned()
    }

    /// Lifts `x` by attaching slacks: `z = sqrt(-g(x))` where the bound side
    /// holds, `z = 0` where it is violated.
    pub fn lift_point(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.base.n());
        let s = self.rows.len();
        let mut out = DVector::zeros(self.base.n() + s);
        out.rows_mut(0, self.base.n()).copy_from(x);
        for (k, row) in self.rows.iter().enumerate() {
            let g = row.g(x[row.var]);
            out[self.base.n() + k] = (-g).max(0.0).sqrt();
        }
        out
    }

    /// True when every stored bound holds at `x` (base coordinates).
    pub fn bounds_satisfied(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.bounds.iter().all(|b| b.contains(x[b.index], tol))
    }

    /// Builds the lifted equality-constrained problem. See [`lift_with_slacks`].
    pub fn lift(&self) -> ProblemDef {
        let n = self.base.n();
        let m = self.base.m();
        let s = self.rows.len();
        let rows = Arc::new(self.rows.clone());
        let base = self.base.clone();

        let cost_base = base.clone();
        let grad_base = base.clone();
        let cons_base = base.clone();
        let jac_base = base.clone();
        let hess_base = base.clone();
        let (r_cons, r_jac, r_hess) = (rows.clone(), rows.clone(), rows.clone());

        ProblemDef::builder(n + s, m + s)
            .cost(move |xz| {
                let x = xz.rows(0, n).into_owned();
                (cost_base.cost)(&x)
            })
            .gradient(move |xz| {
                let x = xz.rows(0, n).into_owned();
                let mut g = DVector::zeros(n + s);
                let gb = grad_base
                    .gradient(&x)
                    .unwrap_or_else(|_| DVector::from_element(n, f64::NAN));
                g.rows_mut(0, n).copy_from(&gb);
                g
            })
            .constraints(move |xz| {
                let x = xz.rows(0, n).into_owned();
                let hb = (cons_base.constraints)(&x);
                let mut h = DVector::zeros(m + s);
                h.rows_mut(0, m).copy_from(&hb);
                for (k, row) in r_cons.iter().enumerate() {
                    let z = xz[n + k];
                    h[m + k] = row.g(x[row.var]) + z * z;
                }
                h
            })
            .jacobian(move |xz| {
                let x = xz.rows(0, n).into_owned();
                let jb = jac_base
                    .jacobian(&x)
                    .unwrap_or_else(|_| DMatrix::from_element(m, n, f64::NAN));
                let mut j = DMatrix::zeros(m + s, n + s);
                j.view_mut((0, 0), (m, n)).copy_from(&jb);
                for (k, row) in r_jac.iter().enumerate() {
                    j[(m + k, row.var)] = row.dg();
                    j[(m + k, n + k)] = 2.0 * xz[n + k];
                }
                j
            })
            .lagrangian_hessian(move |xz, lam| {
                let x = xz.rows(0, n).into_owned();
                let lb = lam.rows(0, m).into_owned();
                let hb = hess_base
                    .lagrangian_hessian(&x, &lb)
                    .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN));
                let mut hh = DMatrix::zeros(n + s, n + s);
                hh.view_mut((0, 0), (n, n)).copy_from(&hb);
                for k in 0..r_hess.len() {
                    hh[(n + k, n + k)] = 2.0 * lam[m + k];
                }
                hh
            })
            .label(format!("{}+slacks", self.base.label()))
            .build()
    }
}

/// Lifts a bounded problem to a pure equality-constrained one via squared
/// slacks: `n' = n + s` variables and `m' = m + s` constraints, where `s`
/// counts the finite bound sides.
pub fn lift_with_slacks(t: &SlackTransform) -> ProblemDef {
    t.lift()
}

/// Outcome of [`validate_problem`]: finite-difference derivative cross-checks
/// and a full-rank proxy for the constraint Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// Worst mixed absolute/relative gradient mismatch over all samples.
    pub max_grad_rel_err: f64,
    pub max_jac_rel_err: f64,
    /// Smallest eigenvalue of `J_h J_h^T` seen over all samples.
    pub min_gram_eigenvalue: f64,
    pub grad_ok: bool,
    pub jac_ok: bool,
    pub rank_ok: bool,
}

impl ValidationReport {
    pub fn derivatives_ok(&self) -> bool {
        self.grad_ok && self.jac_ok
    }
}

const VALIDATE_TOL: f64 = 1e-4;

/// Cross-checks analytic derivatives against central differences at random
/// standard-normal points and reports the minimum Gram eigenvalue of
/// `J_h J_h^T` as a full-rank proxy.
pub fn validate_problem(p: &ProblemDef, samples: usize, seed: u64) -> ValidationReport {
    assert!(samples > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<DVector<f64>> = (0..samples)
        .map(|_| DVector::from_fn(p.n(), |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    validate_problem_at(p, &points)
}

/// [`validate_problem`] at caller-supplied points (e.g. interior points of a
/// bounded region).
pub fn validate_problem_at(p: &ProblemDef, points: &[DVector<f64>]) -> ValidationReport {
    let mut max_grad = 0.0f64;
    let mut max_jac = 0.0f64;
    let mut min_gram = f64::INFINITY;

    for x in points {
        if let (Ok(ga), Ok(gf)) = (p.gradient(x), gradient_fd_adaptive(p, x)) {
            let denom = gf.amax().max(1.0);
            max_grad = max_grad.max((ga - gf).amax() / denom);
        } else {
            max_grad = f64::INFINITY;
        }

        match (p.jacobian(x), jacobian_fd_adaptive(p, x)) {
            (Ok(ja), Ok(jf)) => {
                let denom = jf.amax().max(1.0);
                max_jac = max_jac.max((&ja - &jf).amax() / denom);
                if p.m() > 0 {
                    let gram = &ja * ja.transpose();
                    let (lo, _) = symmetric_eigen_range(&gram);
                    min_gram = min_gram.min(lo);
                }
            }
            _ => max_jac = f64::INFINITY,
        }
    }

    if p.m() == 0 {
        min_gram = 0.0;
    }

    ValidationReport {
        samples: points.len(),
        max_grad_rel_err: max_grad,
        max_jac_rel_err: max_jac,
        min_gram_eigenvalue: min_gram,
        grad_ok: max_grad <= VALIDATE_TOL,
        jac_ok: max_jac <= VALIDATE_TOL,
        rank_ok: p.m() > 0 && min_gram > 1e-10,
    }
}

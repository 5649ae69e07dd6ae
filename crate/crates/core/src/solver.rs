//! Global QP solve and verification of the differentiability assumptions.
//!
//! The solver is a primal-dual interior-point method with Mehrotra
//! predictor-corrector steps. Each Newton system is reduced to the symmetric
//! quasi-definite form `[P + GᵀΣG + δI, Aᵀ; A, −δI]` and factorized by `LDLᵀ`,
//! with a few steps of iterative refinement against the unregularized matrix.
//! Once the interior-point residual is small, the solution is polished by
//! solving the equality-constrained QP on the identified active set, which
//! yields exact complementarity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseLu, QuasiDefiniteLdl};
use crate::model::{generate_random, Problem, RandomConfig};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL_ACT: f64 = 1e-7;
pub const DEFAULT_TOL_SC: f64 = 1e-7;
/// Threshold on the smallest reduced-Hessian eigenvalue.
pub const DEFAULT_TOL_SECOND_ORDER: f64 = 1e-9;
/// Threshold on the smallest singular value of the active constraint gradients.
pub const DEFAULT_TOL_LICQ: f64 = 1e-9;
/// Newton-system regularization.
pub const REGULARIZATION: f64 = 1e-10;
/// Resampling attempts for degenerate random instances.
pub const MAX_RESAMPLE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    #[serde(with = "linalg::serde_vecs")]
    pub x: Vec<DVector<f64>>,
    #[serde(with = "linalg::serde_vecs")]
    pub lambda_local: Vec<DVector<f64>>,
    #[serde(with = "linalg::serde_vecs")]
    pub mu_local: Vec<DVector<f64>>,
    #[serde(with = "linalg::serde_vec")]
    pub nu: DVector<f64>,
    #[serde(with = "linalg::serde_vec")]
    pub lambda: DVector<f64>,
    /// `bᵢ − Aᵢxᵢ` per subproblem.
    #[serde(with = "linalg::serde_vecs")]
    pub slack_local: Vec<DVector<f64>>,
    /// `f − Σᵢ Fᵢxᵢ`.
    #[serde(with = "linalg::serde_vec")]
    pub slack_coupling: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub polished: bool,
}

impl Solution {
    pub fn x_stacked(&self) -> DVector<f64> {
        let n: usize = self.x.iter().map(|v| v.len()).sum();
        let mut out = DVector::zeros(n);
        let mut k = 0;
        for v in &self.x {
            out.rows_mut(k, v.len()).copy_from(v);
            k += v.len();
        }
        out
    }

    /// Coupling duals stacked as `[ν; λ]`.
    pub fn coupling_duals(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.nu.len() + self.lambda.len());
        out.rows_mut(0, self.nu.len()).copy_from(&self.nu);
        out.rows_mut(self.nu.len(), self.lambda.len())
            .copy_from(&self.lambda);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Stacked global QP: `min ½xᵀPx + cᵀx  s.t.  Gx ≤ h, Ax = b`.
///
/// Inequality rows are the local `Aᵢ` rows in subproblem order followed by the
/// coupling `F` rows; equality rows are the local `Eᵢ` rows followed by `H`.
struct StackedQp {
    p: DMatrix<f64>,
    c: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl StackedQp {
    fn from_problem(problem: &Problem) -> Self {
        let n = problem.n_total();
        let n_ineq: usize = problem
            .subproblems
            .iter()
            .map(|s| s.n_ineq())
            .sum::<usize>()
            + problem.coupling.n_ineq();
        let n_eq: usize =
            problem.subproblems.iter().map(|s| s.n_eq()).sum::<usize>() + problem.coupling.n_eq();
        let mut p = DMatrix::zeros(n, n);
        let mut c = DVector::zeros(n);
        let mut g = DMatrix::zeros(n_ineq, n);
        let mut h = DVector::zeros(n_ineq);
        let mut a = DMatrix::zeros(n_eq, n);
        let mut b = DVector::zeros(n_eq);
        let (mut gi, mut ai) = (0, 0);
        for (i, sp) in problem.subproblems.iter().enumerate() {
            let off = problem.x_offset(i);
            let ni = sp.n();
            p.view_mut((off, off), (ni, ni)).copy_from(&sp.p);
            c.rows_mut(off, ni).copy_from(&sp.c);
            g.view_mut((gi, off), (sp.n_ineq(), ni)).copy_from(&sp.a);
            h.rows_mut(gi, sp.n_ineq()).copy_from(&sp.b);
            gi += sp.n_ineq();
            a.view_mut((ai, off), (sp.n_eq(), ni)).copy_from(&sp.e_mat);
            b.rows_mut(ai, sp.n_eq()).copy_from(&sp.e);
            ai += sp.n_eq();
        }
        let cp = &problem.coupling;
        for (i, sp) in problem.subproblems.iter().enumerate() {
            let off = problem.x_offset(i);
            g.view_mut((gi, off), (cp.n_ineq(), sp.n()))
                .copy_from(&cp.f_blocks[i]);
            a.view_mut((ai, off), (cp.n_eq(), sp.n()))
                .copy_from(&cp.h_blocks[i]);
        }
        h.rows_mut(gi, cp.n_ineq()).copy_from(&cp.f);
        b.rows_mut(ai, cp.n_eq()).copy_from(&cp.d);
        StackedQp { p, c, g, h, a, b }
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

fn residuals(qp: &StackedQp, it: &Iterate) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let r_d = &qp.p * &it.x + &qp.c + qp.a.transpose() * &it.y + qp.g.transpose() * &it.z;
    let r_p = &qp.a * &it.x - &qp.b;
    let r_g = &qp.g * &it.x + &it.s - &qp.h;
    (r_d, r_p, r_g)
}

fn ipm_residual(qp: &StackedQp, it: &Iterate) -> f64 {
    let (r_d, r_p, r_g) = residuals(qp, it);
    let comp =
        it.s.iter()
            .zip(it.z.iter())
            .fold(0.0f64, |a, (s, z)| a.max((s * z).abs()));
    linalg::max_abs_vec(&r_d)
        .max(linalg::max_abs_vec(&r_p))
        .max(linalg::max_abs_vec(&r_g))
        .max(comp)
}

/// Newton system for a fixed scaling `Σ = diag(z/s)`.
struct NewtonSystem<'a> {
    qp: &'a StackedQp,
    ldl: QuasiDefiniteLdl,
    exact: DMatrix<f64>,
    sigma: DVector<f64>,
}

impl<'a> NewtonSystem<'a> {
    fn new(qp: &'a StackedQp, it: &Iterate) -> Result<Self> {
        let n = qp.p.nrows();
        let me = qp.a.nrows();
        let sigma = it.z.component_div(&it.s);
        let mut gs = qp.g.clone();
        for (mut row, w) in gs.row_iter_mut().zip(sigma.iter()) {
            row *= *w;
        }
        let k = &qp.p + qp.g.transpose() * gs;
        let mut exact = DMatrix::zeros(n + me, n + me);
        exact.view_mut((0, 0), (n, n)).copy_from(&k);
        exact.view_mut((0, n), (n, me)).copy_from(&qp.a.transpose());
        exact.view_mut((n, 0), (me, n)).copy_from(&qp.a);
        let mut reg = exact.clone();
        for i in 0..n {
            reg[(i, i)] += REGULARIZATION;
        }
        for i in n..n + me {
            reg[(i, i)] -= REGULARIZATION;
        }
        let ldl = QuasiDefiniteLdl::new(&reg)
            .ok_or_else(|| Error::NumericalFailure("singular Newton system".into()))?;
        Ok(NewtonSystem {
            qp,
            ldl,
            exact,
            sigma,
        })
    }

    fn solve_reduced(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut sol = self.ldl.solve(rhs);
        for _ in 0..3 {
            let r = rhs - &self.exact * &sol;
            if linalg::max_abs_vec(&r) <= 1e-15 * (1.0 + linalg::max_abs_vec(rhs)) {
                break;
            }
            sol += self.ldl.solve(&r);
        }
        sol
    }

    /// Direction for the complementarity target `s∘z → s∘z − r_c`, refined
    /// against the full linearized system.
    fn direction(
        &self,
        it: &Iterate,
        r_d: &DVector<f64>,
        r_p: &DVector<f64>,
        r_g: &DVector<f64>,
        r_c: &DVector<f64>,
    ) -> Iterate {
        let qp = self.qp;
        let mut d = self.reduced_direction(it, r_d, r_p, r_g, r_c);
        for _ in 0..3 {
            let e_d = -(r_d + &qp.p * &d.x + qp.a.transpose() * &d.y + qp.g.transpose() * &d.z);
            let e_p = -(r_p + &qp.a * &d.x);
            let e_g = -(r_g + &qp.g * &d.x + &d.s);
            let e_c = -(r_c + it.s.component_mul(&d.z) + it.z.component_mul(&d.s));
            let err = linalg::max_abs_vec(&e_d)
                .max(linalg::max_abs_vec(&e_p))
                .max(linalg::max_abs_vec(&e_g))
                .max(linalg::max_abs_vec(&e_c));
            if err <= 1e-15 {
                break;
            }
            let c = self.reduced_direction(it, &-e_d, &-e_p, &-e_g, &-e_c);
            d.x += c.x;
            d.y += c.y;
            d.z += c.z;
            d.s += c.s;
        }
        d
    }

    /// Solves `P dx + Aᵀdy + Gᵀdz = −r_d`, `A dx = −r_p`, `G dx + ds = −r_g`,
    /// `s∘dz + z∘ds = −r_c` by eliminating `ds` and `dz`.
    fn reduced_direction(
        &self,
        it: &Iterate,
        r_d: &DVector<f64>,
        r_p: &DVector<f64>,
        r_g: &DVector<f64>,
        r_c: &DVector<f64>,
    ) -> Iterate {
        let qp = self.qp;
        let n = qp.p.nrows();
        let me = qp.a.nrows();
        let rc_over_s = r_c.component_div(&it.s);
        let inner = self.sigma.component_mul(r_g) - &rc_over_s;
        let mut rhs = DVector::zeros(n + me);
        rhs.rows_mut(0, n)
            .copy_from(&(-r_d - qp.g.transpose() * inner));
        rhs.rows_mut(n, me).copy_from(&(-r_p));
        let sol = self.solve_reduced(&rhs);
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, me).into_owned();
        let dz = self.sigma.component_mul(&(&qp.g * &dx + r_g)) - rc_over_s;
        let ds = -(r_c + it.s.component_mul(&dz)).component_div(&it.z);
        Iterate {
            x: dx,
            y: dy,
            z: dz,
            s: ds,
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0f64, |a, (x, d)| a.min(-x / d))
}

fn initial_iterate(qp: &StackedQp) -> Result<Iterate> {
    let n = qp.p.nrows();
    let m = qp.g.nrows();
    let start = Iterate {
        x: DVector::zeros(n),
        y: DVector::zeros(qp.a.nrows()),
        z: DVector::from_element(m, 1.0),
        s: DVector::from_element(m, 1.0),
    };
    // One Newton step from the unit scaling gives a least-squares start.
    let sys = NewtonSystem::new(qp, &start)?;
    let (r_d, r_p, r_g) = residuals(qp, &start);
    let r_c = DVector::zeros(m);
    let d = sys.direction(&start, &r_d, &r_p, &r_g, &r_c);
    let x = &start.x + &d.x;
    let y = &start.y + &d.y;
    let slack = &qp.h - &qp.g * &x;
    let s = slack.map(|v| v.max(1.0));
    let z = DVector::from_element(m, 1.0);
    Ok(Iterate { x, y, z, s })
}

struct IpmOutcome {
    it: Iterate,
    iterations: usize,
}

fn interior_point(
    qp: &StackedQp,
    mut it: Iterate,
    start_iter: usize,
    tol: f64,
    max_iter: usize,
) -> Result<IpmOutcome> {
    let m = qp.g.nrows();
    for iter in start_iter..max_iter {
        if ipm_residual(qp, &it) <= tol {
            return Ok(IpmOutcome {
                it,
                iterations: iter,
            });
        }
        let (r_d, r_p, r_g) = residuals(qp, &it);
        let sys = NewtonSystem::new(qp, &it)?;
        if m == 0 {
            let d = sys.direction(&it, &r_d, &r_p, &r_g, &DVector::zeros(0));
            it.x += d.x;
            it.y += d.y;
            continue;
        }
        let mu = it.s.dot(&it.z) / m as f64;
        let sz = it.s.component_mul(&it.z);
        let aff = sys.direction(&it, &r_d, &r_p, &r_g, &sz);
        let a_aff = max_step(&it.s, &aff.s).min(max_step(&it.z, &aff.z));
        let mu_aff = (&it.s + &aff.s * a_aff).dot(&(&it.z + &aff.z * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let r_c = sz + aff.s.component_mul(&aff.z) - DVector::from_element(m, sigma * mu);
        let d = sys.direction(&it, &r_d, &r_p, &r_g, &r_c);
        let mut alpha = (0.99 * max_step(&it.s, &d.s).min(max_step(&it.z, &d.z))).min(1.0);
        // Near feasibility ΔsᵀΔz = ΔxᵀPΔx ≥ 0, so a long step can raise μ and the
        // iteration may cycle; backtrack until μ decreases enough.
        let infeasibility = linalg::max_abs_vec(&r_d)
            .max(linalg::max_abs_vec(&r_p))
            .max(linalg::max_abs_vec(&r_g));
        if infeasibility <= 1e-3 * mu {
            let mu_at = |a: f64| (&it.s + &d.s * a).dot(&(&it.z + &d.z * a)) / m as f64;
            while alpha > 1e-8 && mu_at(alpha) > (1.0 - 0.1 * alpha * (1.0 - sigma)) * mu {
                alpha *= 0.8;
            }
        }
        it.x += &d.x * alpha;
        it.y += &d.y * alpha;
        it.z += &d.z * alpha;
        it.s += &d.s * alpha;
        if !it.x.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(
                "interior-point iterate diverged".into(),
            ));
        }
    }
    Ok(IpmOutcome {
        it,
        iterations: max_iter.max(start_iter),
    })
}

/// Solves the equality-constrained QP on the active set guessed from `it`.
fn polish(qp: &StackedQp, it: &Iterate) -> Option<Iterate> {
    let n = qp.p.nrows();
    let me = qp.a.nrows();
    let active: Vec<usize> = (0..qp.g.nrows()).filter(|&j| it.z[j] > it.s[j]).collect();
    let na = active.len();
    let dim = n + me + na;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    kkt.view_mut((0, n), (n, me)).copy_from(&qp.a.transpose());
    kkt.view_mut((n, 0), (me, n)).copy_from(&qp.a);
    let g_act = linalg::select_rows(&qp.g, &active);
    kkt.view_mut((0, n + me), (n, na))
        .copy_from(&g_act.transpose());
    kkt.view_mut((n + me, 0), (na, n)).copy_from(&g_act);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&qp.c));
    rhs.rows_mut(n, me).copy_from(&qp.b);
    for (k, &j) in active.iter().enumerate() {
        rhs[n + me + k] = qp.h[j];
    }
    let lu = DenseLu::new(kkt)?;
    let sol = lu.solve_vec(&rhs);
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, me).into_owned();
    let mut z = DVector::zeros(qp.g.nrows());
    for (k, &j) in active.iter().enumerate() {
        let v = sol[n + me + k];
        if v < -1e-12 {
            return None;
        }
        z[j] = v.max(0.0);
    }
    let s = &qp.h - &qp.g * &x;
    for j in 0..s.len() {
        if s[j] < -1e-12 {
            return None;
        }
    }
    Some(Iterate { x, y, z, s })
}

fn unstack(problem: &Problem, it: &Iterate, iterations: usize, polished: bool) -> Solution {
    let mut x = Vec::new();
    let mut lambda_local = Vec::new();
    let mut mu_local = Vec::new();
    let (mut gi, mut ai) = (0, 0);
    for (i, sp) in problem.subproblems.iter().enumerate() {
        x.push(it.x.rows(problem.x_offset(i), sp.n()).into_owned());
        lambda_local.push(it.z.rows(gi, sp.n_ineq()).into_owned());
        mu_local.push(it.y.rows(ai, sp.n_eq()).into_owned());
        gi += sp.n_ineq();
        ai += sp.n_eq();
    }
    let nu = it.y.rows(ai, problem.coupling.n_eq()).into_owned();
    let lambda = it.z.rows(gi, problem.coupling.n_ineq()).into_owned();
    let mut sol = Solution {
        slack_local: Vec::new(),
        slack_coupling: DVector::zeros(0),
        x,
        lambda_local,
        mu_local,
        nu,
        lambda,
        kkt_residual: 0.0,
        iterations,
        converged: false,
        polished,
    };
    fill_slacks(problem, &mut sol);
    sol.kkt_residual = kkt_residual(problem, &sol);
    sol
}

fn fill_slacks(problem: &Problem, sol: &mut Solution) {
    sol.slack_local = problem
        .subproblems
        .iter()
        .zip(&sol.x)
        .map(|(sp, x)| &sp.b - &sp.a * x)
        .collect();
    let cp = &problem.coupling;
    let mut fx = DVector::zeros(cp.n_ineq());
    for (fb, x) in cp.f_blocks.iter().zip(&sol.x) {
        fx += fb * x;
    }
    sol.slack_coupling = &cp.f - fx;
}

/// Max-norm of the first-order optimality residual: stationarity, primal
/// feasibility, dual feasibility and complementary slackness.
pub fn kkt_residual(problem: &Problem, sol: &Solution) -> f64 {
    let cp = &problem.coupling;
    let mut res = 0.0f64;
    let mut hx = DVector::zeros(cp.n_eq());
    let mut fx = DVector::zeros(cp.n_ineq());
    for (i, sp) in problem.subproblems.iter().enumerate() {
        let x = &sol.x[i];
        let stat = &sp.p * x
            + &sp.c
            + sp.a.transpose() * &sol.lambda_local[i]
            + sp.e_mat.transpose() * &sol.mu_local[i]
            + cp.h_blocks[i].transpose() * &sol.nu
            + cp.f_blocks[i].transpose() * &sol.lambda;
        res = res.max(linalg::max_abs_vec(&stat));
        res = res.max(linalg::max_abs_vec(&(&sp.e_mat * x - &sp.e)));
        let slack = &sp.b - &sp.a * x;
        for (s, l) in slack.iter().zip(sol.lambda_local[i].iter()) {
            res = res.max((-s).max(0.0)).max((-l).max(0.0)).max((s * l).abs());
        }
        hx += &cp.h_blocks[i] * x;
        fx += &cp.f_blocks[i] * x;
    }
    res = res.max(linalg::max_abs_vec(&(hx - &cp.d)));
    let slack = &cp.f - fx;
    for (s, l) in slack.iter().zip(sol.lambda.iter()) {
        res = res.max((-s).max(0.0)).max((-l).max(0.0)).max((s * l).abs());
    }
    res
}

pub fn objective(problem: &Problem, x: &[DVector<f64>]) -> f64 {
    problem
        .subproblems
        .iter()
        .zip(x)
        .map(|(sp, xi)| 0.5 * xi.dot(&(&sp.p * xi)) + sp.c.dot(xi))
        .sum()
}

/// Full Lagrangian at `(x, duals)`, with every constraint dualized.
pub fn lagrangian(problem: &Problem, sol: &Solution) -> f64 {
    let cp = &problem.coupling;
    let mut val = objective(problem, &sol.x);
    let mut hx = DVector::zeros(cp.n_eq());
    let mut fx = DVector::zeros(cp.n_ineq());
    for (i, sp) in problem.subproblems.iter().enumerate() {
        let x = &sol.x[i];
        val += sol.lambda_local[i].dot(&(&sp.a * x - &sp.b));
        val += sol.mu_local[i].dot(&(&sp.e_mat * x - &sp.e));
        hx += &cp.h_blocks[i] * x;
        fx += &cp.f_blocks[i] * x;
    }
    val + sol.nu.dot(&(hx - &cp.d)) + sol.lambda.dot(&(fx - &cp.f))
}

/// Solves the global QP.
///
/// Returns [`Error::MaxIterations`] carrying the best iterate when the KKT
/// residual does not reach `opts.tol`.
pub fn solve(problem: &Problem, opts: &SolveOptions) -> Result<Solution> {
    let qp = StackedQp::from_problem(problem);
    // Polishing is attempted at successively tighter interior-point tolerances;
    // a weakly identified active set at a loose tolerance may be wrong.
    let mut ipm_tol = opts.tol.max(1e-9);
    let mut out = interior_point(&qp, initial_iterate(&qp)?, 0, ipm_tol, opts.max_iter)?;
    loop {
        let mut sol = unstack(problem, &out.it, out.iterations, false);
        if let Some(p) = polish(&qp, &out.it) {
            let candidate = unstack(problem, &p, out.iterations, true);
            if candidate.kkt_residual <= sol.kkt_residual.max(opts.tol) {
                sol = candidate;
            }
        }
        if sol.kkt_residual <= opts.tol {
            sol.converged = true;
            return Ok(sol);
        }
        let give_up = |sol: Solution, iterations: usize| Error::MaxIterations {
            iterations,
            residual: sol.kkt_residual,
            best: Box::new(sol),
        };
        if out.iterations >= opts.max_iter || ipm_tol <= 1e-14 {
            return Err(give_up(sol, out.iterations));
        }
        ipm_tol *= 0.01;
        let iterations = out.iterations;
        out = match interior_point(&qp, out.it, iterations, ipm_tol, opts.max_iter) {
            Ok(o) => o,
            Err(_) => return Err(give_up(sol, iterations)),
        };
    }
}

/// Per-constraint activity flags. Equality rows are always active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub local_ineq: Vec<Vec<bool>>,
    pub local_eq: Vec<Vec<bool>>,
    pub coupling_eq: Vec<bool>,
    pub coupling_ineq: Vec<bool>,
}

impl ActiveSets {
    pub fn n_active_inequalities(&self) -> usize {
        self.local_ineq.iter().flatten().filter(|a| **a).count()
            + self.coupling_ineq.iter().filter(|a| **a).count()
    }
}

/// Inequality `j` is active iff its slack is at most `tol_act`; ties count as active.
pub fn active_set(solution: &Solution, tol_act: f64) -> ActiveSets {
    ActiveSets {
        local_ineq: solution
            .slack_local
            .iter()
            .map(|s| s.iter().map(|v| *v <= tol_act).collect())
            .collect(),
        local_eq: solution
            .mu_local
            .iter()
            .map(|m| vec![true; m.len()])
            .collect(),
        coupling_eq: vec![true; solution.nu.len()],
        coupling_ineq: solution
            .slack_coupling
            .iter()
            .map(|v| *v <= tol_act)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AssumptionTolerances {
    pub act: f64,
    pub sc: f64,
    pub licq: f64,
    pub second_order: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        AssumptionTolerances {
            act: DEFAULT_TOL_ACT,
            sc: DEFAULT_TOL_SC,
            licq: DEFAULT_TOL_LICQ,
            second_order: DEFAULT_TOL_SECOND_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub kkt_ok: bool,
    pub kkt_residual: f64,
    pub licq_ok: bool,
    pub licq_min_singular_value: f64,
    pub strict_complementarity_ok: bool,
    /// Smallest dual over active inequalities (`+inf` when none are active).
    pub min_active_dual: f64,
    /// Smallest slack over inactive inequalities (`+inf` when all are active).
    pub min_inactive_slack: f64,
    pub second_order_global_ok: bool,
    pub global_reduced_hessian_min_eig: f64,
    pub second_order_local_ok: bool,
    pub local_reduced_hessian_min_eig: Vec<f64>,
    /// Subproblems whose partial-Lagrangian problem fails the second-order check.
    pub local_second_order_failures: Vec<usize>,
    pub active_sets: ActiveSets,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.kkt_ok
            && self.licq_ok
            && self.strict_complementarity_ok
            && self.second_order_global_ok
            && self.second_order_local_ok
    }
}

/// Gradients of the active constraints of subproblem `i` alone (local rows only).
fn local_active_gradients(problem: &Problem, active: &ActiveSets, i: usize) -> DMatrix<f64> {
    let sp = &problem.subproblems[i];
    let rows: Vec<usize> = (0..sp.n_ineq())
        .filter(|&j| active.local_ineq[i][j])
        .collect();
    let a_act = linalg::select_rows(&sp.a, &rows);
    let mut m = DMatrix::zeros(sp.n_eq() + rows.len(), sp.n());
    m.rows_mut(0, sp.n_eq()).copy_from(&sp.e_mat);
    m.rows_mut(sp.n_eq(), rows.len()).copy_from(&a_act);
    m
}

/// Gradients of every active constraint of the global problem.
fn global_active_gradients(problem: &Problem, active: &ActiveSets) -> DMatrix<f64> {
    let n = problem.n_total();
    let cp = &problem.coupling;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..problem.n_subproblems() {
        let off = problem.x_offset(i);
        let local = local_active_gradients(problem, active, i);
        for r in local.row_iter() {
            let mut v = DVector::zeros(n);
            v.rows_mut(off, local.ncols()).copy_from(&r.transpose());
            rows.push(v);
        }
    }
    for row in 0..cp.len() {
        if row >= cp.n_eq() && !active.coupling_ineq[row - cp.n_eq()] {
            continue;
        }
        let mut v = DVector::zeros(n);
        for i in 0..problem.n_subproblems() {
            let b = cp.block_row(i, row);
            v.rows_mut(problem.x_offset(i), b.len()).copy_from(&b);
        }
        rows.push(v);
    }
    DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c])
}

fn reduced_hessian_min_eig(hessian: &DMatrix<f64>, gradients: &DMatrix<f64>) -> f64 {
    let z = linalg::null_space(gradients);
    if z.ncols() == 0 {
        return f64::INFINITY;
    }
    linalg::min_eigenvalue_sym(&(z.transpose() * hessian * &z))
}

/// Checks global LICQ, strict complementarity and second-order sufficiency,
/// plus the second-order condition of every partial-Lagrangian subproblem.
pub fn verify_assumptions(
    problem: &Problem,
    solution: &Solution,
    tol: &AssumptionTolerances,
) -> AssumptionReport {
    let active = active_set(solution, tol.act);

    let mut min_active_dual = f64::INFINITY;
    let mut min_inactive_slack = f64::INFINITY;
    let pairs = solution
        .slack_local
        .iter()
        .zip(&solution.lambda_local)
        .zip(&active.local_ineq)
        .flat_map(|((s, l), a)| {
            s.iter()
                .copied()
                .zip(l.iter().copied())
                .zip(a.iter().copied())
                .collect::<Vec<_>>()
        })
        .chain(
            solution
                .slack_coupling
                .iter()
                .copied()
                .zip(solution.lambda.iter().copied())
                .zip(active.coupling_ineq.iter().copied()),
        );
    for ((slack, dual), is_active) in pairs {
        if is_active {
            min_active_dual = min_active_dual.min(dual);
        } else {
            min_inactive_slack = min_inactive_slack.min(slack);
        }
    }

    let grads = global_active_gradients(problem, &active);
    let licq_sv = linalg::min_singular_value(&grads);

    let n = problem.n_total();
    let mut hessian = DMatrix::zeros(n, n);
    for (i, sp) in problem.subproblems.iter().enumerate() {
        let off = problem.x_offset(i);
        hessian
            .view_mut((off, off), (sp.n(), sp.n()))
            .copy_from(&sp.p);
    }
    let global_eig = reduced_hessian_min_eig(&hessian, &grads);

    let local_eigs: Vec<f64> = (0..problem.n_subproblems())
        .map(|i| {
            let g = local_active_gradients(problem, &active, i);
            reduced_hessian_min_eig(&problem.subproblems[i].p, &g)
        })
        .collect();
    let failures: Vec<usize> = local_eigs
        .iter()
        .enumerate()
        .filter(|(_, e)| !(**e >= tol.second_order))
        .map(|(i, _)| i)
        .collect();

    let residual = kkt_residual(problem, solution);
    AssumptionReport {
        kkt_ok: residual <= DEFAULT_TOL.max(solution.kkt_residual),
        kkt_residual: residual,
        licq_ok: licq_sv > tol.licq,
        licq_min_singular_value: licq_sv,
        strict_complementarity_ok: min_active_dual > tol.sc,
        min_active_dual,
        min_inactive_slack,
        second_order_global_ok: global_eig >= tol.second_order,
        global_reduced_hessian_min_eig: global_eig,
        second_order_local_ok: failures.is_empty(),
        local_reduced_hessian_min_eig: local_eigs,
        local_second_order_failures: failures,
        active_sets: active,
    }
}

/// A random instance that solved cleanly and satisfies every assumption.
#[derive(Debug, Clone)]
pub struct VerifiedInstance {
    pub problem: Problem,
    pub solution: Solution,
    pub report: AssumptionReport,
    /// Seed that produced the accepted instance.
    pub seed: u64,
    pub attempts: usize,
}

/// Draws random instances from `cfg`, incrementing the seed until one solves
/// and passes [`verify_assumptions`], for at most [`MAX_RESAMPLE`] attempts.
pub fn sample_nondegenerate(cfg: &RandomConfig, opts: &SolveOptions) -> Result<VerifiedInstance> {
    let tol = AssumptionTolerances::default();
    let mut last_err = None;
    for attempt in 0..MAX_RESAMPLE {
        let seed = cfg.seed.wrapping_add(attempt as u64);
        let problem = generate_random(&cfg.with_seed(seed))?;
        match solve(&problem, opts) {
            Ok(solution) => {
                let report = verify_assumptions(&problem, &solution, &tol);
                if report.all_ok() {
                    return Ok(VerifiedInstance {
                        problem,
                        solution,
                        report,
                        seed,
                        attempts: attempt + 1,
                    });
                }
                last_err = Some(Error::NumericalFailure(format!(
                    "seed {seed}: assumptions violated"
                )));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::NumericalFailure("no attempts made".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures, Structure};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn consensus_closed_form() {
        // x_i = θ_i − ν, ν = (θ₁ + θ₂ − d)/2 = 1
        let p = fixtures::consensus(1.0, 3.0, 2.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(close(s.x[0][0], 0.0, 1e-10));
        assert!(close(s.x[1][0], 2.0, 1e-10));
        assert!(close(s.nu[0], 1.0, 1e-10));
        assert!(s.kkt_residual <= DEFAULT_TOL);
    }

    #[test]
    fn scalar_box_active() {
        let p = fixtures::scalar_box(2.0, 1.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(close(s.x[0][0], 1.0, 1e-10));
        assert!(close(s.lambda_local[0][0], 1.0, 1e-10));
        let act = active_set(&s, DEFAULT_TOL_ACT);
        assert!(act.local_ineq[0][0]);
    }

    #[test]
    fn scalar_box_inactive() {
        let p = fixtures::scalar_box(0.5, 1.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(close(s.x[0][0], 0.5, 1e-10));
        assert!(close(s.lambda_local[0][0], 0.0, 1e-10));
        let act = active_set(&s, DEFAULT_TOL_ACT);
        assert!(!act.local_ineq[0][0]);
        assert!(close(s.slack_local[0][0], 0.5, 1e-10));
    }

    #[test]
    fn equality_rows_always_active() {
        let p = fixtures::consensus(1.0, 3.0, 2.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(active_set(&s, DEFAULT_TOL_ACT).coupling_eq, vec![true]);
    }

    #[test]
    fn strictly_convex_generated_problem_passes_all_checks() {
        let cfg = RandomConfig::new(4, 3, 2, 1, 2, 1, Structure::Dense, 5);
        let v = sample_nondegenerate(&cfg, &SolveOptions::default()).unwrap();
        assert!(v.report.all_ok(), "{:?}", v.report);
    }

    #[test]
    fn flat_subproblem_fails_local_second_order() {
        let p = fixtures::flat_second_subproblem(1.5);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(close(s.x[0][0], 1.5, 1e-9) && close(s.x[1][0], 1.5, 1e-9));
        let r = verify_assumptions(&p, &s, &AssumptionTolerances::default());
        assert!(r.second_order_global_ok);
        assert!(!r.second_order_local_ok);
        assert_eq!(r.local_second_order_failures, vec![1]);
    }

    #[test]
    fn weakly_active_constraint_fails_strict_complementarity() {
        // θ = b: the unconstrained minimizer sits exactly on the bound, so λ = 0, s = 0.
        let p = fixtures::scalar_box(1.0, 1.0);
        let mut s = solve(&p, &SolveOptions::default()).unwrap();
        s.lambda_local[0][0] = 0.0;
        s.slack_local[0][0] = 0.0;
        let r = verify_assumptions(&p, &s, &AssumptionTolerances::default());
        assert!(!r.strict_complementarity_ok);
        assert_eq!(r.min_active_dual, 0.0);
    }

    #[test]
    fn duality_gap_closes() {
        for seed in 0..5 {
            let cfg = RandomConfig::new(5, 3, 2, 1, 2, 2, Structure::Chain, seed);
            let p = generate_random(&cfg).unwrap();
            let s = solve(&p, &SolveOptions::default()).unwrap();
            let gap = (objective(&p, &s.x) - lagrangian(&p, &s)).abs();
            assert!(gap <= 10.0 * DEFAULT_TOL, "gap {gap}");
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let cfg = RandomConfig::new(6, 3, 3, 1, 2, 2, Structure::Banded(2), 9);
        let p = generate_random(&cfg).unwrap();
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn max_iterations_returns_best_iterate() {
        let p = generate_random(&RandomConfig::new(3, 3, 3, 0, 1, 1, Structure::Dense, 2)).unwrap();
        let err = solve(
            &p,
            &SolveOptions {
                tol: 1e-10,
                max_iter: 1,
            },
        )
        .unwrap_err();
        match err {
            Error::MaxIterations { best, .. } => assert!(!best.converged),
            e => panic!("unexpected {e}"),
        }
    }
}

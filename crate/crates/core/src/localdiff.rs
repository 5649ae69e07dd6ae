//! Local Jacobians of the partial-Lagrangian subproblems.
//!
//! With the coupling constraints dualized, subproblem `i` is
//! `min ½xᵀPx + (c + Hᵀν + Fᵀλ)ᵀx  s.t.  Ax ≤ b, Ex = e`, and its optimal
//! primal depends on `θ̄ᵢ = [θᵢ, θ_c, ν, λ]`. The sensitivity follows from the
//! implicit function theorem applied to the local KKT residual `Gᵢ(zᵢ, θ̄ᵢ)` with
//! `zᵢ = (xᵢ, λᵢ, μᵢ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::DenseLu;
use crate::model::{CouplingConstraints, LocalSelector, Problem, Subproblem};
use crate::solver::{self, Solution, SolveOptions};

/// Jacobians of the local KKT residual.
///
/// Rows are ordered stationarity (`n`), complementarity (`l`), equality (`k`).
/// Columns of `dtheta_g` are ordered `θᵢ`, `θ_c`, `ν`, `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalKkt {
    pub dz_g: DMatrix<f64>,
    pub dtheta_g: DMatrix<f64>,
    pub n: usize,
    pub t_local: usize,
    pub t_coupling: usize,
    pub n_nu: usize,
    pub n_lambda: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalJacobian {
    pub d_theta_i: DMatrix<f64>,
    pub d_theta_c: DMatrix<f64>,
    pub d_nu: DMatrix<f64>,
    pub d_lambda: DMatrix<f64>,
    /// Primal block of the inverse local KKT Jacobian.
    pub primal_block_inv: DMatrix<f64>,
}

impl LocalJacobian {
    /// `∂_θ xᵢ` over the full parameter vector, zero outside the `θᵢ` and `θ_c` blocks.
    pub fn d_theta_full(&self, problem: &Problem, i: usize) -> DMatrix<f64> {
        let n = self.d_theta_i.nrows();
        let mut out = DMatrix::zeros(n, problem.theta_dim());
        let off = problem.params.local_offset(i);
        out.view_mut((0, off), (n, self.d_theta_i.ncols()))
            .copy_from(&self.d_theta_i);
        let coff = problem.params.coupling_offset();
        out.view_mut((0, coff), (n, self.d_theta_c.ncols()))
            .copy_from(&self.d_theta_c);
        out
    }
}

/// Primal and dual point of one subproblem.
#[derive(Debug, Clone, Copy)]
pub struct LocalPoint<'a> {
    pub x: &'a DVector<f64>,
    pub lambda: &'a DVector<f64>,
}

/// `∂_z Gᵢ` alone, at the given local point.
pub fn kkt_matrix(sp: &Subproblem, point: LocalPoint<'_>) -> DMatrix<f64> {
    let (n, l, k) = (sp.n(), sp.n_ineq(), sp.n_eq());
    let lam = point.lambda;
    let mut dz = DMatrix::zeros(n + l + k, n + l + k);
    dz.view_mut((0, 0), (n, n)).copy_from(&sp.p);
    for j in 0..l {
        let mut residual = -sp.b[j];
        for c in 0..n {
            let a = sp.a[(j, c)];
            dz[(c, n + j)] = a;
            dz[(n + j, c)] = lam[j] * a;
            residual += a * point.x[c];
        }
        dz[(n + j, n + j)] = residual;
    }
    for j in 0..k {
        for c in 0..n {
            let e = sp.e_mat[(j, c)];
            dz[(c, n + l + j)] = e;
            dz[(n + l + j, c)] = e;
        }
    }
    dz
}

/// Column `c` of the local-parameter block of `∂_θ̄ Gᵢ`.
pub fn local_theta_column(
    sp: &Subproblem,
    point: LocalPoint<'_>,
    selector: &LocalSelector,
    c: usize,
) -> DVector<f64> {
    let (n, l) = (sp.n(), sp.n_ineq());
    let mut out = DVector::zeros(n + l + sp.n_eq());
    let (nc, nb) = (selector.c.len(), selector.b.len());
    if c < nc {
        let e = &selector.c[c];
        out[e.index] = e.scale;
    } else if c < nc + nb {
        let e = &selector.b[c - nc];
        out[n + e.index] = -point.lambda[e.index] * e.scale;
    } else {
        let e = &selector.e[c - nc - nb];
        out[n + l + e.index] = -e.scale;
    }
    out
}

/// Assembles `∂_z Gᵢ` and `∂_θ̄ Gᵢ` at the given local point.
pub fn build_local_kkt(
    sp: &Subproblem,
    h: &DMatrix<f64>,
    f: &DMatrix<f64>,
    point: LocalPoint<'_>,
    selector: &LocalSelector,
    t_coupling: usize,
) -> LocalKkt {
    let (n, l) = (sp.n(), sp.n_ineq());
    let dim = n + l + sp.n_eq();
    let lam = point.lambda;
    let dz = kkt_matrix(sp, point);

    let t_local = selector.len();
    let (n_nu, n_lambda) = (h.nrows(), f.nrows());
    let mut dt = DMatrix::zeros(dim, t_local + t_coupling + n_nu + n_lambda);
    let mut col = 0;
    for e in &selector.c {
        dt[(e.index, col)] = e.scale;
        col += 1;
    }
    for e in &selector.b {
        dt[(n + e.index, col)] = -lam[e.index] * e.scale;
        col += 1;
    }
    for e in &selector.e {
        dt[(n + l + e.index, col)] = -e.scale;
        col += 1;
    }
    // θ_c enters only the coupling rows, so its columns stay zero.
    let base = t_local + t_coupling;
    dt.view_mut((0, base), (n, n_nu)).copy_from(&h.transpose());
    dt.view_mut((0, base + n_nu), (n, n_lambda))
        .copy_from(&f.transpose());

    LocalKkt {
        dz_g: dz,
        dtheta_g: dt,
        n,
        t_local,
        t_coupling,
        n_nu,
        n_lambda,
    }
}

/// Local KKT system of subproblem `i` at a global solution.
pub fn local_kkt(problem: &Problem, solution: &Solution, i: usize) -> LocalKkt {
    build_local_kkt(
        &problem.subproblems[i],
        &problem.coupling.h_blocks[i],
        &problem.coupling.f_blocks[i],
        LocalPoint {
            x: &solution.x[i],
            lambda: &solution.lambda_local[i],
        },
        &problem.params.local[i],
        problem.params.coupling_dim(),
    )
}

/// `∂_θ̄ xᵢ = −[I 0 0] (∂_z Gᵢ)⁻¹ ∂_θ̄ Gᵢ`, with `subproblem` naming the node in errors.
pub fn local_jacobian(kkt: &LocalKkt, subproblem: usize) -> Result<LocalJacobian> {
    let n = kkt.n;
    let dim = kkt.dz_g.nrows();
    let lu = DenseLu::new(kkt.dz_g.clone()).ok_or(Error::SingularLocalJacobian { subproblem })?;
    let mut rhs = DMatrix::zeros(dim, kkt.dtheta_g.ncols() + n);
    rhs.view_mut((0, 0), (dim, kkt.dtheta_g.ncols()))
        .copy_from(&kkt.dtheta_g);
    rhs.view_mut((0, kkt.dtheta_g.ncols()), (n, n))
        .fill_with_identity();
    let sol = lu.solve(&rhs);
    let d = -sol.view((0, 0), (n, kkt.dtheta_g.ncols()));
    let mut g = sol.view((0, kkt.dtheta_g.ncols()), (n, n)).into_owned();
    g = (&g + g.transpose()) * 0.5;
    let (a, b, c) = (kkt.t_local, kkt.t_coupling, kkt.n_nu);
    Ok(LocalJacobian {
        d_theta_i: d.columns(0, a).into_owned(),
        d_theta_c: d.columns(a, b).into_owned(),
        d_nu: d.columns(a + b, c).into_owned(),
        d_lambda: d.columns(a + b + c, kkt.n_lambda).into_owned(),
        primal_block_inv: g,
    })
}

/// Local Jacobians of every subproblem, optionally computed in parallel.
pub fn local_jacobians(
    problem: &Problem,
    solution: &Solution,
    parallel: bool,
) -> Result<Vec<LocalJacobian>> {
    let one = |i: usize| local_jacobian(&local_kkt(problem, solution, i), i);
    if parallel {
        (0..problem.n_subproblems())
            .into_par_iter()
            .map(one)
            .collect()
    } else {
        (0..problem.n_subproblems()).map(one).collect()
    }
}

/// Solves the partial-Lagrangian subproblem `i` at the given coupling duals.
pub fn solve_partial_lagrangian(
    sp: &Subproblem,
    h: &DMatrix<f64>,
    f: &DMatrix<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<Solution> {
    let mut local = sp.clone();
    local.c = &sp.c + h.transpose() * nu + f.transpose() * lambda;
    let problem = Problem::with_default_params(
        vec![local],
        CouplingConstraints::none(&[sp.n()]),
        Default::default(),
    )?;
    solver::solve(&problem, opts)
}

/// Central-difference estimate of the local Jacobian of subproblem `i`.
///
/// `primal_block_inv` is estimated as `−∂x/∂c`, which holds on a fixed active set.
pub fn finite_diff_local(
    problem: &Problem,
    i: usize,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
    h: f64,
) -> Result<LocalJacobian> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    let sp = &problem.subproblems[i];
    let hb = &problem.coupling.h_blocks[i];
    let fb = &problem.coupling.f_blocks[i];
    let sel = &problem.params.local[i];
    let opts = SolveOptions::default();
    let n = sp.n();
    let x_at = |s: &Subproblem, nu: &DVector<f64>, lam: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(solve_partial_lagrangian(s, hb, fb, nu, lam, &opts)?
            .x
            .remove(0))
    };
    let diff = |plus: DVector<f64>, minus: DVector<f64>, step: f64| (plus - minus) / (2.0 * step);

    let mut d_theta_i = DMatrix::zeros(n, sel.len());
    let mut col = 0;
    for e in &sel.c {
        let (mut p, mut m) = (sp.clone(), sp.clone());
        p.c[e.index] += e.scale * h;
        m.c[e.index] -= e.scale * h;
        d_theta_i.set_column(col, &diff(x_at(&p, nu, lambda)?, x_at(&m, nu, lambda)?, h));
        col += 1;
    }
    for e in &sel.b {
        let (mut p, mut m) = (sp.clone(), sp.clone());
        p.b[e.index] += e.scale * h;
        m.b[e.index] -= e.scale * h;
        d_theta_i.set_column(col, &diff(x_at(&p, nu, lambda)?, x_at(&m, nu, lambda)?, h));
        col += 1;
    }
    for e in &sel.e {
        let (mut p, mut m) = (sp.clone(), sp.clone());
        p.e[e.index] += e.scale * h;
        m.e[e.index] -= e.scale * h;
        d_theta_i.set_column(col, &diff(x_at(&p, nu, lambda)?, x_at(&m, nu, lambda)?, h));
        col += 1;
    }

    let mut d_nu = DMatrix::zeros(n, nu.len());
    for j in 0..nu.len() {
        let (mut p, mut m) = (nu.clone(), nu.clone());
        p[j] += h;
        m[j] -= h;
        d_nu.set_column(j, &diff(x_at(sp, &p, lambda)?, x_at(sp, &m, lambda)?, h));
    }
    let mut d_lambda = DMatrix::zeros(n, lambda.len());
    for j in 0..lambda.len() {
        let (mut p, mut m) = (lambda.clone(), lambda.clone());
        p[j] += h;
        m[j] -= h;
        d_lambda.set_column(j, &diff(x_at(sp, nu, &p)?, x_at(sp, nu, &m)?, h));
    }

    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut p, mut m) = (sp.clone(), sp.clone());
        p.c[j] += h;
        m.c[j] -= h;
        g.set_column(j, &-diff(x_at(&p, nu, lambda)?, x_at(&m, nu, lambda)?, h));
    }

    Ok(LocalJacobian {
        d_theta_i,
        d_theta_c: DMatrix::zeros(n, problem.params.coupling_dim()),
        d_nu,
        d_lambda,
        primal_block_inv: g,
    })
}

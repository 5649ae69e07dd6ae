//! Coupling system `∂C y = q`, chain rule, and the two global oracles.
//!
//! Each subproblem contributes `(∂Cᵢ, qᵢ)` computed from its local Jacobian;
//! their sums give a `Λ × Λ` system for the coupling-dual sensitivities
//! `y = [D_θν; D_θλ]`. The centralized oracle differentiates the stacked KKT
//! system of the whole problem in one solve instead.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DMatrixView, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseLu};
use crate::localdiff::{self, LocalJacobian, LocalPoint};
use crate::model::{CouplingConstraints, Problem};
use crate::solver::{self, active_set, Solution, SolveOptions, DEFAULT_TOL_ACT};

/// Contribution `(∂Cᵢ, qᵢ)` of one subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTerms {
    pub dc: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSystem {
    pub dc: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub local_terms: Vec<LocalTerms>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalJacobian {
    pub blocks: Vec<DMatrix<f64>>,
    pub stacked: DMatrix<f64>,
}

impl TotalJacobian {
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>, t: usize) -> Self {
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut stacked = DMatrix::zeros(rows, t);
        let mut r = 0;
        for b in &blocks {
            stacked.view_mut((r, 0), (b.nrows(), t)).copy_from(b);
            r += b.nrows();
        }
        TotalJacobian { blocks, stacked }
    }
}

/// `‖a − b‖∞ / (1 + ‖b‖∞)` with elementwise max norms.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    linalg::max_abs(&(a - b)) / (1.0 + linalg::max_abs(b))
}

/// Column of `θ` that parameterizes offset `d[row]`, if any.
fn d_param(problem: &Problem, row: usize) -> Option<(usize, f64)> {
    let off = problem.params.coupling_offset();
    problem
        .params
        .coupling
        .d
        .iter()
        .enumerate()
        .find(|(_, e)| e.index == row)
        .map(|(k, e)| (off + k, e.scale))
}

/// Column of `θ` that parameterizes offset `f[row]`, if any.
fn f_param(problem: &Problem, row: usize) -> Option<(usize, f64)> {
    let off = problem.params.coupling_offset() + problem.params.coupling.d.len();
    problem
        .params
        .coupling
        .f
        .iter()
        .enumerate()
        .find(|(_, e)| e.index == row)
        .map(|(k, e)| (off + k, e.scale))
}

/// `(∂Cᵢ, qᵢ)` of subproblem `i`.
///
/// The offsets `d` and `f` are split so that each row's offset is carried by
/// the lowest-index subproblem touching it; the sums over `i` then reproduce
/// the coupling KKT conditions exactly.
pub fn assemble_local_terms(
    problem: &Problem,
    i: usize,
    lj: &LocalJacobian,
    solution: &Solution,
) -> LocalTerms {
    let cp = &problem.coupling;
    let (lh, lf) = (cp.n_eq(), cp.n_ineq());
    let lam = &solution.lambda;
    let h = &cp.h_blocks[i];
    let f = &cp.f_blocks[i];
    let x = &solution.x[i];
    let t = problem.theta_dim();

    let mut dc = DMatrix::zeros(lh + lf, lh + lf);
    dc.view_mut((0, 0), (lh, lh)).copy_from(&-(h * &lj.d_nu));
    dc.view_mut((0, lh), (lh, lf))
        .copy_from(&-(h * &lj.d_lambda));
    let mut fnu = f * &lj.d_nu;
    let mut flam = f * &lj.d_lambda;
    for j in 0..lf {
        fnu.row_mut(j).scale_mut(lam[j]);
        flam.row_mut(j).scale_mut(lam[j]);
    }
    let fx = f * x;
    for j in 0..lf {
        let share = if problem.offset_owner(lh + j) == i {
            cp.f[j]
        } else {
            0.0
        };
        flam[(j, j)] += fx[j] - share;
    }
    dc.view_mut((lh, 0), (lf, lh)).copy_from(&-fnu);
    dc.view_mut((lh, lh), (lf, lf)).copy_from(&-flam);

    let dx = lj.d_theta_full(problem, i);
    let mut q = DMatrix::zeros(lh + lf, t);
    q.view_mut((0, 0), (lh, t)).copy_from(&(h * &dx));
    let mut fq = f * &dx;
    for j in 0..lf {
        if problem.offset_owner(lh + j) == i {
            if let Some((col, scale)) = f_param(problem, j) {
                fq[(j, col)] -= scale;
            }
        }
        fq.row_mut(j).scale_mut(lam[j]);
    }
    q.view_mut((lh, 0), (lf, t)).copy_from(&fq);
    for r in 0..lh {
        if problem.offset_owner(r) == i {
            if let Some((col, scale)) = d_param(problem, r) {
                q[(r, col)] -= scale;
            }
        }
    }
    LocalTerms { dc, q }
}

/// Sums the local terms into `∂C` and `q`.
pub fn assemble_coupling_system(
    problem: &Problem,
    solution: &Solution,
    local_jacobians: &[LocalJacobian],
    parallel: bool,
) -> CouplingSystem {
    let one = |i: usize| assemble_local_terms(problem, i, &local_jacobians[i], solution);
    let local_terms: Vec<LocalTerms> = if parallel {
        (0..problem.n_subproblems())
            .into_par_iter()
            .map(one)
            .collect()
    } else {
        (0..problem.n_subproblems()).map(one).collect()
    };
    let lam = problem.n_coupling();
    let mut dc = DMatrix::zeros(lam, lam);
    let mut q = DMatrix::zeros(lam, problem.theta_dim());
    for lt in &local_terms {
        dc += &lt.dc;
        q += &lt.q;
    }
    CouplingSystem { dc, q, local_terms }
}

/// Solves `∂C y = q` by dense LU.
pub fn solve_coupling_central(system: &CouplingSystem) -> Result<DMatrix<f64>> {
    let lu = DenseLu::new(system.dc.clone()).ok_or(Error::SingularCoupling)?;
    let y = lu.solve(&system.q);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularCoupling);
    }
    Ok(y)
}

/// `D_θxᵢ = ∂_θxᵢ + ∂_νxᵢ D_θν + ∂_λxᵢ D_θλ`.
pub fn total_jacobian(
    problem: &Problem,
    local_jacobians: &[LocalJacobian],
    y: &DMatrix<f64>,
) -> TotalJacobian {
    let lh = problem.coupling.n_eq();
    let lf = problem.coupling.n_ineq();
    let t = problem.theta_dim();
    let y_nu = y.rows(0, lh);
    let y_lam = y.rows(lh, lf);
    let blocks = local_jacobians
        .iter()
        .enumerate()
        .map(|(i, lj)| lj.d_theta_full(problem, i) + &lj.d_nu * y_nu + &lj.d_lambda * y_lam)
        .collect();
    TotalJacobian::from_blocks(blocks, t)
}

/// Output of the decentralized pipeline.
#[derive(Debug, Clone)]
pub struct Decentralized {
    pub local_jacobians: Vec<LocalJacobian>,
    pub system: CouplingSystem,
    pub y: DMatrix<f64>,
    pub jacobian: TotalJacobian,
}

/// Local Jacobians, central coupling solve and chain rule.
pub fn decentralized_jacobian(
    problem: &Problem,
    solution: &Solution,
    parallel: bool,
) -> Result<Decentralized> {
    let local_jacobians = localdiff::local_jacobians(problem, solution, parallel)?;
    let system = assemble_coupling_system(problem, solution, &local_jacobians, parallel);
    let y = solve_coupling_central(&system)?;
    let jacobian = total_jacobian(problem, &local_jacobians, &y);
    Ok(Decentralized {
        local_jacobians,
        system,
        y,
        jacobian,
    })
}

/// Jacobians of the stacked KKT residual of the whole problem.
///
/// Unknowns are ordered `z₁, …, z_N, ν, λ` with `zᵢ = (xᵢ, λᵢ, μᵢ)`; rows
/// follow the same order (local KKT rows, then coupling rows).
#[derive(Debug, Clone)]
pub struct GlobalKkt {
    pub jac: DMatrix<f64>,
    pub dtheta: DMatrix<f64>,
    /// Offset of `zᵢ` in the unknown vector.
    pub z_offsets: Vec<usize>,
    /// Offset of `ν`; `λ` follows.
    pub coupling_offset: usize,
}

pub fn build_global_kkt(problem: &Problem, solution: &Solution) -> GlobalKkt {
    let cp = &problem.coupling;
    let (lh, lf) = (cp.n_eq(), cp.n_ineq());
    let t = problem.theta_dim();
    let mut z_offsets = Vec::with_capacity(problem.n_subproblems());
    let mut off = 0;
    for sp in &problem.subproblems {
        z_offsets.push(off);
        off += sp.kkt_dim();
    }
    let co = off;
    let dim = co + lh + lf;
    let mut jac = DMatrix::zeros(dim, dim);
    let mut dtheta = DMatrix::zeros(dim, t);
    let mut fx = DVector::zeros(lf);
    for (i, sp) in problem.subproblems.iter().enumerate() {
        let kkt = localdiff::local_kkt(problem, solution, i);
        let (zo, d, n) = (z_offsets[i], sp.kkt_dim(), sp.n());
        jac.view_mut((zo, zo), (d, d)).copy_from(&kkt.dz_g);
        let tl = kkt.t_local;
        let lo = problem.params.local_offset(i);
        dtheta
            .view_mut((zo, lo), (d, tl))
            .copy_from(&kkt.dtheta_g.columns(0, tl));
        let h = &cp.h_blocks[i];
        let f = &cp.f_blocks[i];
        jac.view_mut((zo, co), (n, lh)).copy_from(&h.transpose());
        jac.view_mut((zo, co + lh), (n, lf))
            .copy_from(&f.transpose());
        jac.view_mut((co, zo), (lh, n)).copy_from(h);
        let mut lf_rows = f.clone();
        for j in 0..lf {
            lf_rows.row_mut(j).scale_mut(solution.lambda[j]);
        }
        jac.view_mut((co + lh, zo), (lf, n)).copy_from(&lf_rows);
        fx += f * &solution.x[i];
    }
    for j in 0..lf {
        jac[(co + lh + j, co + lh + j)] = fx[j] - cp.f[j];
    }
    for r in 0..lh {
        if let Some((col, scale)) = d_param(problem, r) {
            dtheta[(co + r, col)] = -scale;
        }
    }
    for j in 0..lf {
        if let Some((col, scale)) = f_param(problem, j) {
            dtheta[(co + lh + j, col)] = -solution.lambda[j] * scale;
        }
    }
    GlobalKkt {
        jac,
        dtheta,
        z_offsets,
        coupling_offset: co,
    }
}

/// Result of differentiating the global KKT system directly.
#[derive(Debug, Clone)]
pub struct Centralized {
    pub jacobian: TotalJacobian,
    /// Coupling-dual sensitivities `[D_θν; D_θλ]`.
    pub y: DMatrix<f64>,
}

pub fn centralized_oracle(problem: &Problem, solution: &Solution) -> Result<Centralized> {
    let g = build_global_kkt(problem, solution);
    let lu = DenseLu::new(g.jac.clone()).ok_or(Error::SingularGlobalJacobian)?;
    let sol = -lu.solve(&g.dtheta);
    let t = problem.theta_dim();
    let blocks = problem
        .subproblems
        .iter()
        .enumerate()
        .map(|(i, sp)| sol.view((g.z_offsets[i], 0), (sp.n(), t)).into_owned())
        .collect();
    let y = sol
        .rows(g.coupling_offset, problem.n_coupling())
        .into_owned();
    Ok(Centralized {
        jacobian: TotalJacobian::from_blocks(blocks, t),
        y,
    })
}

/// `−(J/A)`: the negated Schur complement of the block-diagonal local KKT
/// block `A` inside the global KKT Jacobian `J`.
pub fn schur_complement(problem: &Problem, solution: &Solution) -> Result<DMatrix<f64>> {
    let g = build_global_kkt(problem, solution);
    let co = g.coupling_offset;
    let lam = problem.n_coupling();
    let a = g.jac.view((0, 0), (co, co)).into_owned();
    let b = g.jac.view((0, co), (co, lam)).into_owned();
    let c = g.jac.view((co, 0), (lam, co)).into_owned();
    let d = g.jac.view((co, co), (lam, lam)).into_owned();
    let lu = DenseLu::new(a).ok_or(Error::SingularGlobalJacobian)?;
    Ok(c * lu.solve(&b) - d)
}

/// Parameter columns of a finite-difference Jacobian and the step used for each.
#[derive(Debug, Clone)]
pub struct FiniteDifference {
    pub jacobian: TotalJacobian,
    pub steps: Vec<f64>,
}

/// Central differences of `x*(θ)`, re-solving the global problem at `θ ± h eⱼ`.
///
/// The active set at both perturbed points must match the one at `θ`; on a
/// mismatch the column is retried once with `h/10`.
pub fn finite_difference_oracle(
    problem: &Problem,
    solution: &Solution,
    h: f64,
    opts: &SolveOptions,
) -> Result<FiniteDifference> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    let base = active_set(solution, DEFAULT_TOL_ACT);
    let theta = problem.theta_read();
    let t = theta.len();
    let n = problem.n_total();
    let mut jac = DMatrix::zeros(n, t);
    let mut steps = Vec::with_capacity(t);
    let perturbed = |j: usize, delta: f64| -> Result<Option<DVector<f64>>> {
        let mut th = theta.clone();
        th[j] += delta;
        let s = solver::solve(&problem.theta_write(&th)?, opts)?;
        if active_set(&s, DEFAULT_TOL_ACT) != base {
            return Ok(None);
        }
        Ok(Some(s.x_stacked()))
    };
    'columns: for j in 0..t {
        for step in [h, h / 10.0] {
            if let (Some(p), Some(m)) = (perturbed(j, step)?, perturbed(j, -step)?) {
                jac.set_column(j, &((p - m) / (2.0 * step)));
                steps.push(step);
                continue 'columns;
            }
        }
        return Err(Error::ActiveSetFlip { param: j });
    }
    let mut blocks = Vec::with_capacity(problem.n_subproblems());
    for i in 0..problem.n_subproblems() {
        blocks.push(
            jac.rows(problem.x_offset(i), problem.subproblems[i].n())
                .into_owned(),
        );
    }
    Ok(FiniteDifference {
        jacobian: TotalJacobian::from_blocks(blocks, t),
        steps,
    })
}

/// Coupling ratio `ρ = Λ / (N (n + l))`.
pub fn coupling_ratio(lambda: usize, n_sub: usize, n_plus_l: usize) -> f64 {
    lambda as f64 / (n_sub as f64 * n_plus_l as f64)
}

/// Modeled ratio of decentralized to centralized compute time,
/// `η = (ρ³ + 1/N²) / (1 + ρ)³`.
pub fn complexity_eta(rho: f64, n_sub: usize) -> f64 {
    let n = n_sub as f64;
    (rho.powi(3) + 1.0 / (n * n)) / (1.0 + rho).powi(3)
}

/// Coupling rows touched by each subproblem, precomputed outside timed regions.
pub fn touched_rows(problem: &Problem) -> Vec<Vec<usize>> {
    (0..problem.n_subproblems())
        .map(|i| problem.rows_of(i))
        .collect()
}

/// One column of `D_θx` through the global KKT system: assembly, one dense
/// factorization, one solve.
pub fn central_column(problem: &Problem, solution: &Solution, col: usize) -> Result<DVector<f64>> {
    let g = build_global_kkt(problem, solution);
    let lu = DenseLu::new(g.jac).ok_or(Error::SingularGlobalJacobian)?;
    let sol = -lu.solve_vec(&g.dtheta.column(col).into_owned());
    let mut out = DVector::zeros(problem.n_total());
    for (i, sp) in problem.subproblems.iter().enumerate() {
        out.rows_mut(problem.x_offset(i), sp.n())
            .copy_from(&sol.rows(g.z_offsets[i], sp.n()));
    }
    Ok(out)
}

/// Column 0 holds `∂_θ zᵢ`; column `1 + b` holds `∂_{yᵣ} zᵢ` for the `b`-th
/// touched coupling row `r`. Only the first `n` rows (the primal part) are used.
struct LocalColumnWork {
    sol: DMatrix<f64>,
}

/// Row `r` (equalities first) of subproblem `i`'s coupling block, as a view.
fn coupling_row(cp: &CouplingConstraints, i: usize, r: usize) -> DMatrixView<'_, f64> {
    if r < cp.n_eq() {
        cp.h_blocks[i].rows(r, 1)
    } else {
        cp.f_blocks[i].rows(r - cp.n_eq(), 1)
    }
}

fn row_dot(g: &DMatrixView<'_, f64>, m: &DMatrix<f64>, col: usize) -> f64 {
    (0..g.ncols()).map(|c| g[(0, c)] * m[(c, col)]).sum()
}

fn local_column_work(
    problem: &Problem,
    solution: &Solution,
    i: usize,
    rows: &[usize],
    col: usize,
) -> Result<LocalColumnWork> {
    let sp = &problem.subproblems[i];
    let point = LocalPoint {
        x: &solution.x[i],
        lambda: &solution.lambda_local[i],
    };
    let n = sp.n();
    let dz = localdiff::kkt_matrix(sp, point);
    let dim = dz.nrows();
    let lu = DenseLu::new(dz).ok_or(Error::SingularLocalJacobian { subproblem: i })?;
    let mut rhs = DMatrix::zeros(dim, rows.len() + 1);
    let lo = problem.params.local_offset(i);
    let selector = &problem.params.local[i];
    if col >= lo && col < lo + selector.len() {
        rhs.set_column(
            0,
            &localdiff::local_theta_column(sp, point, selector, col - lo),
        );
    }
    let cp = &problem.coupling;
    for (k, &r) in rows.iter().enumerate() {
        let g = coupling_row(cp, i, r);
        for c in 0..n {
            rhs[(c, k + 1)] = g[(0, c)];
        }
    }
    lu.solve_in_place(&mut rhs);
    rhs.neg_mut();
    Ok(LocalColumnWork { sol: rhs })
}

/// One column of `D_θx` through the decentralized path: local factorizations
/// using only the touched coupling rows, sparse assembly of `∂C` and `q`, one
/// `Λ × Λ` factorization, and the chain rule.
pub fn decentralized_column(
    problem: &Problem,
    solution: &Solution,
    rows: &[Vec<usize>],
    col: usize,
    parallel: bool,
) -> Result<DVector<f64>> {
    let cp = &problem.coupling;
    let (lh, lam) = (cp.n_eq(), problem.n_coupling());
    let work = |i: usize| local_column_work(problem, solution, i, &rows[i], col);
    let locals: Vec<LocalColumnWork> = if parallel {
        (0..problem.n_subproblems())
            .into_par_iter()
            .map(work)
            .collect::<Result<_>>()?
    } else {
        (0..problem.n_subproblems())
            .map(work)
            .collect::<Result<_>>()?
    };
    let mut dc = DMatrix::zeros(lam, lam);
    let mut q = DVector::zeros(lam);
    let weight = |r: usize| if r < lh { 1.0 } else { solution.lambda[r - lh] };
    for (i, lw) in locals.iter().enumerate() {
        let x = &solution.x[i];
        for &r in &rows[i] {
            let g = coupling_row(cp, i, r);
            let w = weight(r);
            for (b, &s) in rows[i].iter().enumerate() {
                dc[(r, s)] -= w * row_dot(&g, &lw.sol, b + 1);
            }
            q[r] += w * row_dot(&g, &lw.sol, 0);
            if r >= lh {
                dc[(r, r)] -= (0..x.len()).map(|c| g[(0, c)] * x[c]).sum::<f64>();
            }
        }
    }
    for j in 0..cp.n_ineq() {
        dc[(lh + j, lh + j)] += cp.f[j];
    }
    for r in 0..lh {
        if let Some((c, scale)) = d_param(problem, r) {
            if c == col {
                q[r] -= scale;
            }
        }
    }
    for j in 0..cp.n_ineq() {
        if let Some((c, scale)) = f_param(problem, j) {
            if c == col {
                q[lh + j] -= solution.lambda[j] * scale;
            }
        }
    }
    let lu = DenseLu::new(dc).ok_or(Error::SingularCoupling)?;
    let y = lu.solve_vec(&q);
    let mut out = DVector::zeros(problem.n_total());
    for (i, lw) in locals.iter().enumerate() {
        let off = problem.x_offset(i);
        for c in 0..problem.subproblems[i].n() {
            let chain: f64 = rows[i]
                .iter()
                .enumerate()
                .map(|(b, &r)| lw.sol[(c, b + 1)] * y[r])
                .sum();
            out[off + c] = lw.sol[(c, 0)] + chain;
        }
    }
    Ok(out)
}

/// Wall-clock comparison of the two differentiation paths.
#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub central: Duration,
    pub decentralized: Duration,
    pub decentralized_parallel: Option<Duration>,
}

fn min_time<F: FnMut() -> Result<()>>(repetitions: usize, mut f: F) -> Result<Duration> {
    f()?;
    let mut best = Duration::MAX;
    for _ in 0..repetitions.max(1) {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed());
    }
    Ok(best)
}

/// Minimum over `repetitions` runs (after one discarded warm-up) of the
/// central and decentralized single-column pipelines.
pub fn time_paths(
    problem: &Problem,
    solution: &Solution,
    repetitions: usize,
    with_parallel: bool,
) -> Result<Timing> {
    let col = 0;
    let rows = touched_rows(problem);
    let central = min_time(repetitions, || {
        central_column(problem, solution, col).map(|_| ())
    })?;
    let decentralized = min_time(repetitions, || {
        decentralized_column(problem, solution, &rows, col, false).map(|_| ())
    })?;
    let decentralized_parallel = if with_parallel {
        Some(min_time(repetitions, || {
            decentralized_column(problem, solution, &rows, col, true).map(|_| ())
        })?)
    } else {
        None
    };
    Ok(Timing {
        central,
        decentralized,
        decentralized_parallel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures, generate_random, RandomConfig, Structure};

    fn consensus() -> (Problem, Solution) {
        let p = fixtures::consensus(1.0, 3.0, 2.0);
        let s = solver::solve(&p, &SolveOptions::default()).unwrap();
        (p, s)
    }

    #[test]
    fn consensus_local_terms() {
        let (p, s) = consensus();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        assert!((d.system.local_terms[0].dc[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((d.system.local_terms[1].dc[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((d.system.dc[(0, 0)] - 2.0).abs() < 1e-15);
        let q: Vec<f64> = d.system.q.iter().copied().collect();
        assert_eq!(q, vec![1.0, 1.0, -1.0]);
    }

    #[test]
    fn consensus_coupling_and_total_jacobian() {
        let (p, s) = consensus();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let y: Vec<f64> = d.y.iter().copied().collect();
        assert_eq!(y, vec![0.5, 0.5, -0.5]);
        let x1: Vec<f64> = d.jacobian.blocks[0].iter().copied().collect();
        let x2: Vec<f64> = d.jacobian.blocks[1].iter().copied().collect();
        assert_eq!(x1, vec![0.5, -0.5, 0.5]);
        assert_eq!(x2, vec![-0.5, 0.5, 0.5]);
        let c = centralized_oracle(&p, &s).unwrap();
        assert!(relative_error(&d.jacobian.stacked, &c.jacobian.stacked) < 1e-12);
    }

    #[test]
    fn empty_coupling_gives_empty_y() {
        let p = fixtures::scalar_box(2.0, 1.0);
        let s = solver::solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        assert_eq!(d.y.shape(), (0, 2));
    }

    #[test]
    fn no_inequality_coupling_keeps_only_h_block() {
        let cfg = RandomConfig::new(3, 2, 1, 0, 2, 0, Structure::Dense, 3);
        let p = generate_random(&cfg).unwrap();
        let s = solver::solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        assert_eq!(d.system.local_terms[0].dc.shape(), (2, 2));
    }

    #[test]
    fn decentralized_matches_centralized_and_schur() {
        let cfg = RandomConfig::new(5, 4, 3, 1, 2, 2, Structure::Chain, 11);
        let p = generate_random(&cfg).unwrap();
        let s = solver::solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let c = centralized_oracle(&p, &s).unwrap();
        assert!(relative_error(&d.jacobian.stacked, &c.jacobian.stacked) < 1e-8);
        assert!(relative_error(&d.y, &c.y) < 1e-8);
        let schur = schur_complement(&p, &s).unwrap();
        assert!(linalg::max_abs(&(schur - &d.system.dc)) < 1e-10);
    }

    #[test]
    fn consensus_finite_differences() {
        let (p, s) = consensus();
        let fd = finite_difference_oracle(&p, &s, 1e-5, &SolveOptions::default()).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[0.5, -0.5, 0.5, -0.5, 0.5, 0.5]);
        assert!(linalg::max_abs(&(fd.jacobian.stacked - expected)) < 1e-9);
    }

    #[test]
    fn kink_reports_active_set_flip() {
        // x* = min(θ, 1): the bound is weakly active at θ = 1.
        let p = fixtures::scalar_box(1.0, 1.0);
        let s = solver::solve(&p, &SolveOptions::default()).unwrap();
        let err = finite_difference_oracle(&p, &s, 1e-5, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ActiveSetFlip { param: 0 }));
    }

    #[test]
    fn eta_values() {
        assert!((complexity_eta(1.0, 1) - 0.25).abs() < 1e-15);
        assert!(complexity_eta(0.0, 1_000_000) < 1e-11);
        let rho = 1e-3;
        let scaled = complexity_eta(rho, 1_000_000_000) * (1.0 + 1.0 / rho).powi(3);
        assert!((scaled - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_column_paths_match_full_jacobian() {
        let cfg = RandomConfig::new(6, 3, 2, 1, 2, 2, Structure::Banded(2), 2);
        let p = generate_random(&cfg).unwrap();
        let s = solver::solve(&p, &SolveOptions::default()).unwrap();
        let full = centralized_oracle(&p, &s).unwrap().jacobian.stacked;
        let rows = touched_rows(&p);
        for col in [0, 3, p.theta_dim() - 1] {
            let c = central_column(&p, &s, col).unwrap();
            let d = decentralized_column(&p, &s, &rows, col, false).unwrap();
            assert!((&c - full.column(col)).amax() < 1e-9);
            assert!((&d - full.column(col)).amax() < 1e-9);
        }
    }
}

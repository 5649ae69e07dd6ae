//! Bipartite constraint graph, ω-neighborhoods and graph-induced bandwidth.
//!
//! Graph nodes `0..N` are subproblems and `N..N+Λ` are coupling constraints
//! (equalities first). Subproblem `k` and constraint `j` are adjacent iff
//! subproblem `k` has a nonzero block in row `j`.

use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::LocalTerms;
use crate::error::{Error, Result};
use crate::linalg;
use crate::localdiff::LocalJacobian;
use crate::model::{Problem, STRUCTURAL_ZERO};
use crate::solver::Solution;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BipartiteGraph {
    pub n_problems: usize,
    pub n_constraints: usize,
    /// Constraints touched by each subproblem, ascending.
    pub problem_adj: Vec<Vec<usize>>,
    /// Subproblems touching each constraint, ascending.
    pub constraint_adj: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_problems + self.n_constraints
    }

    pub fn problem_node(&self, k: usize) -> usize {
        k
    }

    pub fn constraint_node(&self, j: usize) -> usize {
        self.n_problems + j
    }

    fn neighbors(&self, node: usize) -> Box<dyn Iterator<Item = usize> + '_> {
        if node < self.n_problems {
            Box::new(
                self.problem_adj[node]
                    .iter()
                    .map(move |&j| self.n_problems + j),
            )
        } else {
            Box::new(self.constraint_adj[node - self.n_problems].iter().copied())
        }
    }

    /// BFS distances from `source`; `None` for unreachable nodes.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_nodes()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Constraint degree `δⱼ`.
    pub fn degree(&self, j: usize) -> usize {
        self.constraint_adj[j].len()
    }
}

pub fn build_graph(problem: &Problem) -> BipartiteGraph {
    let n = problem.n_subproblems();
    let lam = problem.n_coupling();
    let mut problem_adj = vec![Vec::new(); n];
    let mut constraint_adj = vec![Vec::new(); lam];
    for (j, adj) in constraint_adj.iter_mut().enumerate() {
        for (k, padj) in problem_adj.iter_mut().enumerate() {
            if problem.coupling.touches(k, j) {
                adj.push(k);
                padj.push(j);
            }
        }
    }
    BipartiteGraph {
        n_problems: n,
        n_constraints: lam,
        problem_adj,
        constraint_adj,
    }
}

/// Neighborhood of subproblem `k` at radius `ω`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectionSet {
    pub node: usize,
    pub omega: usize,
    /// Constraints owned by the node (adjacent to it).
    pub v0: Vec<usize>,
    /// Constraints within distance `2ω + 1`.
    pub v_omega: Vec<usize>,
    /// Subproblems adjacent to some constraint of `v_omega`.
    pub p_omega: Vec<usize>,
    /// Constraints outside `v_omega`.
    pub exterior: Vec<usize>,
    /// Position of each `v0` entry inside `v_omega`.
    pub v0_in_v_omega: Vec<usize>,
}

pub fn neighborhood(graph: &BipartiteGraph, k: usize, omega: usize) -> ProjectionSet {
    let dist = graph.distances_from(graph.problem_node(k));
    let radius = 2 * omega + 1;
    let mut v_omega = Vec::new();
    let mut exterior = Vec::new();
    for j in 0..graph.n_constraints {
        match dist[graph.constraint_node(j)] {
            Some(d) if d <= radius => v_omega.push(j),
            _ => exterior.push(j),
        }
    }
    let v0 = graph.problem_adj[k].clone();
    let mut in_p = vec![false; graph.n_problems];
    for &j in &v_omega {
        for &i in &graph.constraint_adj[j] {
            in_p[i] = true;
        }
    }
    let p_omega = (0..graph.n_problems).filter(|&i| in_p[i]).collect();
    let v0_in_v_omega = v0
        .iter()
        .map(|j| {
            v_omega
                .binary_search(j)
                .expect("owned constraints lie in every neighborhood")
        })
        .collect();
    ProjectionSet {
        node: k,
        omega,
        v0,
        v_omega,
        p_omega,
        exterior,
        v0_in_v_omega,
    }
}

/// Neighborhoods of every subproblem.
pub fn neighborhoods(graph: &BipartiteGraph, omega: usize) -> Vec<ProjectionSet> {
    (0..graph.n_problems)
        .into_par_iter()
        .map(|k| neighborhood(graph, k, omega))
        .collect()
}

/// Restriction of the coupling system to a neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSystem {
    /// `∂C` restricted to rows and columns of `V_k^ω`.
    pub dc_k: DMatrix<f64>,
    /// `∂C` restricted to rows of `V_k^ω` and exterior columns.
    pub dc_minus_k: DMatrix<f64>,
    /// `q` restricted to rows of `V_k^ω`.
    pub q_k: DMatrix<f64>,
}

/// Sums the projected local terms over `P_k^ω` only. Subproblems outside
/// `P_k^ω` have no entries in the rows of `V_k^ω`, so the result equals the
/// corresponding slices of the full `∂C` and `q`.
pub fn project_system(local_terms: &[LocalTerms], proj: &ProjectionSet) -> ProjectedSystem {
    let v = &proj.v_omega;
    let ext = &proj.exterior;
    let t = local_terms.first().map_or(0, |lt| lt.q.ncols());
    let mut dc_k = DMatrix::zeros(v.len(), v.len());
    let mut dc_minus_k = DMatrix::zeros(v.len(), ext.len());
    let mut q_k = DMatrix::zeros(v.len(), t);
    for &i in &proj.p_omega {
        let lt = &local_terms[i];
        dc_k += linalg::submatrix(&lt.dc, v, v);
        dc_minus_k += linalg::submatrix(&lt.dc, v, ext);
        q_k += linalg::select_rows(&lt.q, v);
    }
    ProjectedSystem {
        dc_k,
        dc_minus_k,
        q_k,
    }
}

/// Coupling normals `M_C = [H; F]` over all subproblems (`Λ × Σnᵢ`).
pub fn coupling_matrix(problem: &Problem) -> DMatrix<f64> {
    let cp = &problem.coupling;
    let mut m = DMatrix::zeros(cp.len(), problem.n_total());
    for i in 0..problem.n_subproblems() {
        let block = cp.stacked_block(i);
        m.view_mut((0, problem.x_offset(i)), block.shape())
            .copy_from(&block);
    }
    m
}

/// `∂C = [I 0; 0 diag λ] M_C Ḡ M_Cᵀ − [0 0; 0 diag(Σ Fᵢxᵢ − f)]` with
/// `Ḡ = blockdiag(Ḡᵢᵢ)` built from the local primal blocks.
pub fn decompose_dc(
    problem: &Problem,
    solution: &Solution,
    local_jacobians: &[LocalJacobian],
) -> DMatrix<f64> {
    let cp = &problem.coupling;
    let lh = cp.n_eq();
    let n = problem.n_total();
    let mut g = DMatrix::zeros(n, n);
    for (i, lj) in local_jacobians.iter().enumerate() {
        let off = problem.x_offset(i);
        g.view_mut((off, off), lj.primal_block_inv.shape())
            .copy_from(&lj.primal_block_inv);
    }
    let m = coupling_matrix(problem);
    let mut dc = &m * g * m.transpose();
    for j in 0..cp.n_ineq() {
        dc.row_mut(lh + j).scale_mut(solution.lambda[j]);
    }
    let fx = (0..problem.n_subproblems())
        .map(|i| &cp.f_blocks[i] * &solution.x[i])
        .fold(-cp.f.clone(), |acc, v| acc + v);
    for j in 0..cp.n_ineq() {
        dc[(lh + j, lh + j)] -= fx[j];
    }
    dc
}

/// Assignment of matrix index ranges to graph nodes.
pub type Partition = Vec<(usize, Range<usize>)>;

/// Each constraint row as its own block.
pub fn constraint_partition(graph: &BipartiteGraph) -> Partition {
    (0..graph.n_constraints)
        .map(|j| (graph.constraint_node(j), j..j + 1))
        .collect()
}

/// Variable blocks of each subproblem.
pub fn problem_partition(problem: &Problem, graph: &BipartiteGraph) -> Partition {
    (0..problem.n_subproblems())
        .map(|i| {
            let off = problem.x_offset(i);
            (graph.problem_node(i), off..off + problem.subproblems[i].n())
        })
        .collect()
}

/// Smallest `B` such that every block `M[i][j]` with `d(i, j) > B` vanishes
/// (entries at most `1e-14` in magnitude). Nonzero blocks between
/// disconnected nodes give `usize::MAX`.
pub fn graph_induced_bandwidth(
    m: &DMatrix<f64>,
    graph: &BipartiteGraph,
    rows: &Partition,
    cols: &Partition,
) -> usize {
    let mut bandwidth = 0;
    for (rnode, rr) in rows {
        let dist = graph.distances_from(*rnode);
        for (cnode, cr) in cols {
            let nonzero = rr
                .clone()
                .any(|r| cr.clone().any(|c| m[(r, c)].abs() > STRUCTURAL_ZERO));
            if nonzero {
                bandwidth = bandwidth.max(dist[*cnode].unwrap_or(usize::MAX));
            }
        }
    }
    bandwidth
}

/// Exponent `⌈(d − B) / (2B)⌉₊`.
pub fn decay_exponent(bandwidth: usize, distance: usize) -> u32 {
    if distance <= bandwidth {
        0
    } else {
        (distance - bandwidth).div_ceil(2 * bandwidth) as u32
    }
}

/// Contraction base `(σ̄² − σ̲²) / (σ̄² + σ̲²)`.
pub fn decay_base(upper: f64, lower: f64) -> f64 {
    let (a, b) = (upper * upper, lower * lower);
    (a - b) / (a + b)
}

fn check_singular_values(upper: f64, lower: f64) -> Result<()> {
    if !(lower > 0.0 && upper >= lower && upper.is_finite()) {
        return Err(Error::InvalidSingularValues { upper, lower });
    }
    Ok(())
}

/// Bound on the blocks of `X⁻¹` at graph distance `d` for an `X` with
/// bandwidth `B` and singular values in `[σ̲, σ̄]`:
/// `(σ̄/σ̲²) · ((σ̄² − σ̲²)/(σ̄² + σ̲²))^⌈(d − B)/(2B)⌉₊`.
pub fn decay_bound(upper: f64, lower: f64, bandwidth: usize, distance: usize) -> Result<f64> {
    check_singular_values(upper, lower)?;
    if bandwidth == 0 {
        return Err(Error::InvalidConfig("bandwidth must be at least 1".into()));
    }
    let base = decay_base(upper, lower);
    Ok(upper / (lower * lower) * base.powi(decay_exponent(bandwidth, distance) as i32))
}

/// One entry of an empirical decay check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecaySample {
    pub row: usize,
    pub col: usize,
    pub distance: usize,
    pub measured: f64,
    pub bound: f64,
}

/// Compares every entry of `∂C⁻¹` with the decay bound. Pairs of
/// constraints in different components of the graph are skipped.
pub fn decay_check(dc: &DMatrix<f64>, graph: &BipartiteGraph) -> Result<Vec<DecaySample>> {
    let lu = linalg::DenseLu::new(dc.clone()).ok_or(Error::SingularCoupling)?;
    let inv = lu.solve(&DMatrix::identity(dc.nrows(), dc.ncols()));
    let (upper, lower) = linalg::extreme_singular_values(dc);
    let part = constraint_partition(graph);
    let bandwidth = graph_induced_bandwidth(dc, graph, &part, &part).max(1);
    let mut out = Vec::new();
    for r in 0..dc.nrows() {
        let dist = graph.distances_from(graph.constraint_node(r));
        for c in 0..dc.ncols() {
            if let Some(d) = dist[graph.constraint_node(c)] {
                out.push(DecaySample {
                    row: r,
                    col: c,
                    distance: d,
                    measured: inv[(r, c)].abs(),
                    bound: decay_bound(upper, lower, bandwidth, d)?,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::decentralized_jacobian;
    use crate::model::{fixtures, generate_chain};
    use crate::solver::{solve, SolveOptions};

    #[test]
    fn hub_topology_neighborhoods() {
        let p = fixtures::hub(0);
        let g = build_graph(&p);
        assert_eq!(neighborhood(&g, 0, 0).v0, vec![0]);
        assert_eq!(neighborhood(&g, 0, 0).v_omega, vec![0]);
        assert_eq!(neighborhood(&g, 0, 1).v_omega, vec![0, 1, 2]);
        assert_eq!(neighborhood(&g, 1, 0).v_omega, vec![0, 1, 2]);
    }

    #[test]
    fn chain_graph_is_a_path() {
        let p = generate_chain(4, 2, 0.5, 0).unwrap();
        let g = build_graph(&p);
        assert_eq!(
            g.problem_adj,
            vec![vec![0], vec![0, 1], vec![1, 2], vec![2]]
        );
        assert!(g.constraint_adj.iter().all(|a| a.len() == 2));
    }

    #[test]
    fn chain_middle_node_owns_two_rows() {
        let p = generate_chain(5, 2, 0.5, 0).unwrap();
        let g = build_graph(&p);
        let n = neighborhood(&g, 2, 0);
        assert_eq!(n.v_omega, vec![1, 2]);
        assert_eq!(n.p_omega, vec![1, 2, 3]);
        let sat = neighborhood(&g, 2, 10);
        assert_eq!(sat.v_omega, vec![0, 1, 2, 3]);
        assert!(sat.exterior.is_empty());
    }

    #[test]
    fn uncoupled_problem_has_empty_sets() {
        let p = fixtures::scalar_box(2.0, 1.0);
        let g = build_graph(&p);
        assert_eq!(g.n_constraints, 0);
        let n = neighborhood(&g, 0, 3);
        assert!(n.v0.is_empty() && n.v_omega.is_empty() && n.p_omega.is_empty());
    }

    #[test]
    fn consensus_projection_and_decomposition() {
        let p = fixtures::consensus(1.0, 3.0, 2.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let g = build_graph(&p);
        for k in 0..2 {
            let proj = project_system(&d.system.local_terms, &neighborhood(&g, k, 0));
            assert_eq!(proj.dc_k, DMatrix::from_element(1, 1, 2.0));
            assert_eq!(proj.dc_minus_k.shape(), (1, 0));
        }
        let dc = decompose_dc(&p, &s, &d.local_jacobians);
        assert!((dc[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn chain_bandwidths() {
        let p = generate_chain(8, 2, 0.7, 3).unwrap();
        let g = build_graph(&p);
        let mc = coupling_matrix(&p);
        let b_m = graph_induced_bandwidth(
            &mc,
            &g,
            &constraint_partition(&g),
            &problem_partition(&p, &g),
        );
        assert_eq!(b_m, 1);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let part = constraint_partition(&g);
        assert!(graph_induced_bandwidth(&d.system.dc, &g, &part, &part) <= 2);
        let zero = DMatrix::zeros(mc.nrows(), mc.ncols());
        assert_eq!(
            graph_induced_bandwidth(
                &zero,
                &g,
                &constraint_partition(&g),
                &problem_partition(&p, &g)
            ),
            0
        );
    }

    #[test]
    fn decay_bound_edge_cases() {
        assert_eq!(decay_bound(2.0, 2.0, 1, 0).unwrap(), 0.5);
        assert_eq!(decay_bound(2.0, 2.0, 1, 1).unwrap(), 0.5);
        assert_eq!(decay_bound(2.0, 2.0, 1, 2).unwrap(), 0.0);
        assert_eq!(decay_bound(3.0, 1.0, 2, 2).unwrap(), 3.0);
        assert_eq!(decay_exponent(2, 7), 2);
        assert!(matches!(
            decay_bound(1.0, 0.0, 1, 0),
            Err(Error::InvalidSingularValues { .. })
        ));
        assert!(matches!(
            decay_bound(1.0, 2.0, 1, 0),
            Err(Error::InvalidSingularValues { .. })
        ));
    }

    #[test]
    fn chain_inverse_respects_decay_bound() {
        let p = generate_chain(12, 2, 0.8, 5).unwrap();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let samples = decay_check(&d.system.dc, &build_graph(&p)).unwrap();
        assert!(samples.iter().all(|x| x.measured <= x.bound * (1.0 + 1e-9)));
    }
}

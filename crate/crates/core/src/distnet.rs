//! Block-Jacobi computation of the coupling Jacobian on a simulated
//! synchronous network.
//!
//! Every subproblem is a node. At setup, node `k` gathers the local terms of
//! the subproblems in `P_k^ω`, forms the projection `∂C_k^ω` and factorizes it
//! once. Each round then has three phases separated by barriers:
//!
//! 1. node `k` updates the estimate of its owned constraints,
//!    `ŷ_k = S_k ŷ + U_k q`;
//! 2. nodes sharing a constraint exchange estimates and average each
//!    constraint over its `δⱼ` owners;
//! 3. the lowest-index owner of each constraint broadcasts the average, so
//!    every node holds the full `ŷ`.
//!
//! Nodes only communicate through [`Envelope`]s routed by the [`Scheduler`].

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{assemble_local_terms, LocalTerms};
use crate::error::{Error, Result};
use crate::graph::{self, BipartiteGraph, Partition, ProjectionSet};
use crate::linalg::{self, DenseLu};
use crate::localdiff::LocalJacobian;
use crate::model::Problem;
use crate::solver::Solution;

/// Data carried by a message.
#[derive(Debug, Clone)]
pub enum Payload {
    /// Local terms of the sender restricted to the receiver's neighborhood:
    /// rows `V_k^ω` of `∂Cᵢ` (interior and exterior columns) and of `qᵢ`.
    Setup {
        dc: DMatrix<f64>,
        dc_exterior: DMatrix<f64>,
        q: DMatrix<f64>,
    },
    /// Estimates of the sender's owned constraints.
    Estimate {
        constraints: Vec<usize>,
        values: DMatrix<f64>,
    },
    /// Averaged estimate of one constraint.
    Broadcast {
        constraint: usize,
        values: DMatrix<f64>,
    },
}

impl Payload {
    pub fn scalars(&self) -> usize {
        match self {
            Payload::Setup { dc, dc_exterior, q } => dc.len() + dc_exterior.len() + q.len(),
            Payload::Estimate { values, .. } | Payload::Broadcast { values, .. } => values.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub payload: Payload,
}

/// Synchronous message router: messages sent during a phase are delivered
/// together at the next barrier, ordered by sender.
#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    pending: Vec<Envelope>,
    pub messages: usize,
    pub scalars: usize,
}

impl Scheduler {
    pub fn send(&mut self, env: Envelope) {
        self.messages += 1;
        self.scalars += env.payload.scalars();
        self.pending.push(env);
    }

    /// Delivers all pending messages, returning each node's inbox.
    pub fn barrier(&mut self, n_nodes: usize) -> Vec<Vec<Envelope>> {
        let mut inboxes: Vec<Vec<Envelope>> = vec![Vec::new(); n_nodes];
        let mut pending = std::mem::take(&mut self.pending);
        pending.sort_by_key(|e| (e.to, e.from));
        for env in pending {
            inboxes[env.to].push(env);
        }
        inboxes
    }

    fn reset_counters(&mut self) -> (usize, usize) {
        let out = (self.messages, self.scalars);
        self.messages = 0;
        self.scalars = 0;
        out
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub proj: ProjectionSet,
    /// Local terms of this node's own subproblem.
    local_terms: LocalTerms,
    /// Factorization of `∂C_k^ω`.
    factor: Option<DenseLu>,
    pub dc_k: DMatrix<f64>,
    pub dc_minus_k: DMatrix<f64>,
    pub q_k: DMatrix<f64>,
    /// `S_k`: owned rows of `−(∂C_k^ω)⁻¹ ∂C_{-k}^ω`, over exterior columns.
    pub s_k: DMatrix<f64>,
    /// `U_k`: owned rows of `(∂C_k^ω)⁻¹`, over `V_k^ω` columns.
    pub u_k: DMatrix<f64>,
    /// `U_k q`, fixed across rounds.
    pub uq_k: DMatrix<f64>,
    /// Estimate of the owned constraints (`|V_k^0| × t`).
    pub estimate: DMatrix<f64>,
    /// This node's copy of the full `ŷ` (`Λ × t`).
    pub global: DMatrix<f64>,
}

impl NodeState {
    fn is_isolated(&self) -> bool {
        self.proj.v0.is_empty()
    }

    /// Phase 1: `ŷ_k = S_k ŷ_ext + U_k q`.
    fn update(&mut self) {
        if self.is_isolated() {
            return;
        }
        let y_ext = linalg::select_rows(&self.global, &self.proj.exterior);
        self.estimate = &self.uq_k + &self.s_k * y_ext;
    }

    fn average(&self, inbox: &[Envelope], graph: &BipartiteGraph) -> Vec<(usize, DMatrix<f64>)> {
        self.proj
            .v0
            .iter()
            .enumerate()
            .map(|(pos, &j)| {
                let mut sum = self.estimate.row(pos).into_owned();
                for env in inbox {
                    if let Payload::Estimate {
                        constraints,
                        values,
                    } = &env.payload
                    {
                        if let Some(p) = constraints.iter().position(|&c| c == j) {
                            sum += values.row(p);
                        }
                    }
                }
                (j, DMatrix::from_rows(&[sum / graph.degree(j) as f64]))
            })
            .collect()
    }
}

/// Per-round record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub iteration: usize,
    /// Phase-1 compute time per node, in seconds.
    pub solve_time_s: Vec<f64>,
    pub messages: usize,
    pub scalars: usize,
    /// `‖ŷ − y*‖∞` when a reference is available.
    pub error_inf: Option<f64>,
    /// `‖ŷ⁺ − ŷ‖∞`.
    pub change_inf: f64,
    /// Largest spread between owners' estimates of one constraint before averaging.
    pub aggregation_residual: f64,
}

impl RoundLog {
    /// Copy without timing fields, for reproducibility comparisons.
    pub fn without_timing(&self) -> RoundLog {
        RoundLog {
            solve_time_s: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SetupStats {
    pub messages: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub graph: BipartiteGraph,
    pub omega: usize,
    pub nodes: Vec<NodeState>,
    pub scheduler: Scheduler,
    pub round: usize,
    /// Full `ŷ` held by the network after the last round.
    pub y: DMatrix<f64>,
    pub setup_stats: SetupStats,
    pub parallel: bool,
    n_lambda: usize,
    t: usize,
}

/// Builds the network: local terms, setup exchange, projection
/// factorizations and a shared standard-normal start `ŷ⁰`.
pub fn setup(
    problem: &Problem,
    solution: &Solution,
    local_jacobians: &[LocalJacobian],
    omega: usize,
    seed: u64,
) -> Result<Network> {
    let graph = graph::build_graph(problem);
    let n = problem.n_subproblems();
    let lam = problem.n_coupling();
    let t = problem.theta_dim();
    let projs = graph::neighborhoods(&graph, omega);
    let terms: Vec<LocalTerms> = (0..n)
        .into_par_iter()
        .map(|i| assemble_local_terms(problem, i, &local_jacobians[i], solution))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = DMatrix::from_fn(lam, t, |_, _| StandardNormal.sample(&mut rng));

    let mut scheduler = Scheduler::default();
    for (k, proj) in projs.iter().enumerate() {
        for &i in &proj.p_omega {
            let lt = &terms[i];
            scheduler.send(Envelope {
                from: i,
                to: k,
                payload: Payload::Setup {
                    dc: linalg::submatrix(&lt.dc, &proj.v_omega, &proj.v_omega),
                    dc_exterior: linalg::submatrix(&lt.dc, &proj.v_omega, &proj.exterior),
                    q: linalg::select_rows(&lt.q, &proj.v_omega),
                },
            });
        }
    }
    let inboxes = scheduler.barrier(n);
    let (messages, scalars) = scheduler.reset_counters();

    let nodes = projs
        .into_par_iter()
        .zip(terms.into_par_iter())
        .zip(inboxes.into_par_iter())
        .map(|((proj, local_terms), inbox)| build_node(proj, local_terms, inbox, &y0, t))
        .collect::<Result<Vec<_>>>()?;

    Ok(Network {
        graph,
        omega,
        nodes,
        scheduler,
        round: 0,
        y: y0,
        setup_stats: SetupStats { messages, scalars },
        parallel: false,
        n_lambda: lam,
        t,
    })
}

fn build_node(
    proj: ProjectionSet,
    local_terms: LocalTerms,
    inbox: Vec<Envelope>,
    y0: &DMatrix<f64>,
    t: usize,
) -> Result<NodeState> {
    let (nv, ne) = (proj.v_omega.len(), proj.exterior.len());
    let mut dc_k = DMatrix::zeros(nv, nv);
    let mut dc_minus_k = DMatrix::zeros(nv, ne);
    let mut q_k = DMatrix::zeros(nv, t);
    for env in inbox {
        if let Payload::Setup { dc, dc_exterior, q } = env.payload {
            dc_k += dc;
            dc_minus_k += dc_exterior;
            q_k += q;
        }
    }
    let owned = &proj.v0_in_v_omega;
    let (factor, s_k, u_k, uq_k) = if nv == 0 {
        (
            None,
            DMatrix::zeros(0, ne),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, t),
        )
    } else {
        let lu = DenseLu::new(dc_k.clone()).ok_or_else(|| Error::SingularLocalProjection {
            node: proj.node,
            size: nv,
            min_sv: linalg::extreme_singular_values(&dc_k).1,
        })?;
        let inv = lu.solve(&DMatrix::identity(nv, nv));
        let u_k = linalg::select_rows(&inv, owned);
        let s_k = -(&u_k * &dc_minus_k);
        let uq_k = &u_k * &q_k;
        (Some(lu), s_k, u_k, uq_k)
    };
    let estimate = linalg::select_rows(y0, &proj.v0);
    Ok(NodeState {
        id: proj.node,
        proj,
        local_terms,
        factor,
        dc_k,
        dc_minus_k,
        q_k,
        s_k,
        u_k,
        uq_k,
        estimate,
        global: y0.clone(),
    })
}

impl Network {
    pub fn n_lambda(&self) -> usize {
        self.n_lambda
    }

    pub fn theta_dim(&self) -> usize {
        self.t
    }

    /// Local terms of node `k`'s own subproblem.
    pub fn local_terms(&self, k: usize) -> &LocalTerms {
        &self.nodes[k].local_terms
    }

    /// Whether node `k` holds a factorization of its projection.
    pub fn is_factorized(&self, k: usize) -> bool {
        self.nodes[k].factor.is_some()
    }

    /// Replaces the shared estimate at every node.
    pub fn reset(&mut self, y: &DMatrix<f64>) {
        for node in &mut self.nodes {
            node.global = y.clone();
            node.estimate = linalg::select_rows(y, &node.proj.v0);
        }
        self.y = y.clone();
        self.round = 0;
    }

    /// Nodes sharing at least one constraint with `k`, excluding `k`.
    fn two_hop(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.graph.problem_adj[k]
            .iter()
            .flat_map(|&j| self.graph.constraint_adj[j].iter().copied())
            .filter(|&i| i != k)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// One synchronous round.
    pub fn round(&mut self, reference: Option<&DMatrix<f64>>) -> RoundLog {
        let n = self.nodes.len();
        self.scheduler.reset_counters();

        // Phase 1: local block solves.
        let timed = |node: &mut NodeState| {
            let start = Instant::now();
            node.update();
            start.elapsed().as_secs_f64()
        };
        let solve_time_s: Vec<f64> = if self.parallel {
            self.nodes.par_iter_mut().map(timed).collect()
        } else {
            self.nodes.iter_mut().map(timed).collect()
        };

        // Phase 2: two-hop exchange and per-constraint averaging.
        for k in 0..n {
            for to in self.two_hop(k) {
                let node = &self.nodes[k];
                self.scheduler.send(Envelope {
                    from: k,
                    to,
                    payload: Payload::Estimate {
                        constraints: node.proj.v0.clone(),
                        values: node.estimate.clone(),
                    },
                });
            }
        }
        let inboxes = self.scheduler.barrier(n);
        let mut spread = 0.0f64;
        let mut averages: Vec<Vec<(usize, DMatrix<f64>)>> = Vec::with_capacity(n);
        for (node, inbox) in self.nodes.iter().zip(&inboxes) {
            let avg = node.average(inbox, &self.graph);
            for (pos, (_, a)) in avg.iter().enumerate() {
                spread = spread.max(linalg::max_abs(&(node.estimate.rows(pos, 1) - a)));
            }
            averages.push(avg);
        }

        // Phase 3: the lowest-index owner of each constraint broadcasts it.
        for (k, avg) in averages.iter().enumerate() {
            for (j, values) in avg {
                if self.graph.constraint_adj[*j].first() == Some(&k) {
                    for to in 0..n {
                        self.scheduler.send(Envelope {
                            from: k,
                            to,
                            payload: Payload::Broadcast {
                                constraint: *j,
                                values: values.clone(),
                            },
                        });
                    }
                }
            }
        }
        let inboxes = self.scheduler.barrier(n);
        for (node, inbox) in self.nodes.iter_mut().zip(inboxes) {
            for env in inbox {
                if let Payload::Broadcast { constraint, values } = env.payload {
                    node.global.row_mut(constraint).copy_from(&values.row(0));
                }
            }
            node.estimate = linalg::select_rows(&node.global, &node.proj.v0);
        }

        let next = self
            .nodes
            .first()
            .map_or_else(|| self.y.clone(), |nd| nd.global.clone());
        let change_inf = linalg::max_abs(&(&next - &self.y));
        self.y = next;
        self.round += 1;
        let (messages, scalars) = self.scheduler.reset_counters();
        RoundLog {
            iteration: self.round,
            solve_time_s,
            messages,
            scalars,
            error_inf: reference.map(|r| linalg::max_abs(&(&self.y - r))),
            change_inf,
            aggregation_residual: spread,
        }
    }

    /// Whether every node holds the same full estimate.
    pub fn nodes_agree(&self) -> bool {
        self.nodes.iter().all(|nd| nd.global == self.y)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub y: DMatrix<f64>,
    pub history: Vec<RoundLog>,
    pub converged: bool,
    /// `‖ŷ⁰ − y*‖∞` when a reference is available.
    pub initial_error: Option<f64>,
}

/// Runs rounds until the successive change is at most `tol` or `max_rounds`
/// is reached. `converged` is false if the tolerance was never met.
pub fn run(
    network: &mut Network,
    tol: f64,
    max_rounds: usize,
    reference: Option<&DMatrix<f64>>,
) -> RunResult {
    let initial_error = reference.map(|r| linalg::max_abs(&(&network.y - r)));
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_rounds {
        let log = network.round(reference);
        let done = log.change_inf <= tol;
        history.push(log);
        if done {
            converged = true;
            break;
        }
    }
    RunResult {
        y: network.y.clone(),
        history,
        converged,
        initial_error,
    }
}

/// Global operators of the compact scheme `ŷ⁺ = Γ(S ŷ + U q)`.
///
/// Rows of `S` and `U` stack the owned estimates of all nodes in node order;
/// `Γ` maps them back to one row per constraint.
#[derive(Debug, Clone)]
pub struct MatrixForm {
    pub gamma: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl MatrixForm {
    pub fn apply(&self, y: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        &self.gamma * (&self.s * y + &self.u * q)
    }
}

pub fn matrix_form(network: &Network) -> MatrixForm {
    let lam = network.n_lambda;
    let m: usize = network.nodes.iter().map(|nd| nd.proj.v0.len()).sum();
    let mut gamma = DMatrix::zeros(lam, m);
    let mut s = DMatrix::zeros(m, lam);
    let mut u = DMatrix::zeros(m, lam);
    let mut row = 0;
    for nd in &network.nodes {
        for (pos, &j) in nd.proj.v0.iter().enumerate() {
            gamma[(j, row)] = 1.0 / network.graph.degree(j) as f64;
            for (c, &e) in nd.proj.exterior.iter().enumerate() {
                s[(row, e)] = nd.s_k[(pos, c)];
            }
            for (c, &v) in nd.proj.v_omega.iter().enumerate() {
                u[(row, v)] = nd.u_k[(pos, c)];
            }
            row += 1;
        }
    }
    MatrixForm { gamma, s, u }
}

/// Exponent of the contraction base in the rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum RateExponent {
    /// `⌈ω/(2B) − 1⌉₊`.
    #[default]
    Final,
    /// `⌈(ω + 1)/B − 1⌉₊`, an earlier variant kept for sensitivity checks.
    Draft,
}

impl RateExponent {
    pub fn eval(self, omega: usize, bandwidth: usize) -> u32 {
        let b = bandwidth.max(1);
        let e = match self {
            RateExponent::Final => omega.div_ceil(2 * b),
            RateExponent::Draft => (omega + 1).div_ceil(b),
        };
        e.saturating_sub(1) as u32
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeRate {
    pub node: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub r_k: f64,
    /// Bandwidth of `∂C_k^ω` under full-graph distances, at least 1.
    pub bandwidth: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateBound {
    pub omega: usize,
    pub exponent: RateExponent,
    pub nodes: Vec<NodeRate>,
    pub alpha: f64,
}

/// `α = max_k (R_k σ̄_k/σ̲_k²) ((σ̄_k² − σ̲_k²)/(σ̄_k² + σ̲_k²))^e` with the
/// chosen exponent `e`. Nodes without coupling constraints are skipped.
pub fn rate_bound(network: &Network, exponent: RateExponent) -> RateBound {
    let graph = &network.graph;
    let nodes: Vec<NodeRate> = network
        .nodes
        .par_iter()
        .filter(|nd| !nd.proj.v_omega.is_empty())
        .map(|nd| {
            let (sigma_max, sigma_min) = linalg::extreme_singular_values(&nd.dc_k);
            let r_k: f64 = nd.dc_minus_k.iter().map(|v| v.abs()).sum();
            let part: Partition = nd
                .proj
                .v_omega
                .iter()
                .enumerate()
                .map(|(p, &j)| (graph.constraint_node(j), p..p + 1))
                .collect();
            let bandwidth = graph::graph_induced_bandwidth(&nd.dc_k, graph, &part, &part).max(1);
            let base = graph::decay_base(sigma_max, sigma_min);
            let e = exponent.eval(network.omega, bandwidth);
            let factor = if r_k == 0.0 {
                0.0
            } else {
                r_k * sigma_max / (sigma_min * sigma_min) * base.powi(e as i32)
            };
            NodeRate {
                node: nd.id,
                sigma_max,
                sigma_min,
                r_k,
                bandwidth,
                factor,
            }
        })
        .collect();
    let alpha = nodes.iter().map(|r| r.factor).fold(0.0, f64::max);
    RateBound {
        omega: network.omega,
        exponent,
        nodes,
        alpha,
    }
}

/// Message counts predicted by the protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageAccounting {
    /// Setup messages received per node (`|P_k^ω|`).
    pub setup_messages: Vec<usize>,
    /// Setup scalars received per node: `|P_k^ω| · |V_k^ω| · (|V_k^ω| + |exterior| + t)`.
    pub setup_scalars: Vec<usize>,
    /// Exchange messages sent per node per round (one per two-hop neighbor).
    pub exchange_messages: Vec<usize>,
    /// Exchange scalars sent per node per round (`|V_k^0| · t` per message).
    pub exchange_scalars: Vec<usize>,
    /// Broadcast scalars received per node per round (`Λ · t`).
    pub broadcast_scalars_per_node: usize,
    pub round_messages: usize,
    pub round_scalars: usize,
}

pub fn message_accounting(network: &Network) -> MessageAccounting {
    let t = network.t;
    let lam = network.n_lambda;
    let n = network.nodes.len();
    let mut acc = MessageAccounting {
        setup_messages: Vec::with_capacity(n),
        setup_scalars: Vec::with_capacity(n),
        exchange_messages: Vec::with_capacity(n),
        exchange_scalars: Vec::with_capacity(n),
        broadcast_scalars_per_node: lam * t,
        round_messages: 0,
        round_scalars: 0,
    };
    for (k, nd) in network.nodes.iter().enumerate() {
        let (p, v, e) = (
            nd.proj.p_omega.len(),
            nd.proj.v_omega.len(),
            nd.proj.exterior.len(),
        );
        acc.setup_messages.push(p);
        acc.setup_scalars.push(p * v * (v + e + t));
        let hops = network.two_hop(k).len();
        acc.exchange_messages.push(hops);
        acc.exchange_scalars.push(hops * nd.proj.v0.len() * t);
    }
    acc.round_messages = acc.exchange_messages.iter().sum::<usize>() + lam * n;
    acc.round_scalars = acc.exchange_scalars.iter().sum::<usize>() + lam * t * n;
    acc
}

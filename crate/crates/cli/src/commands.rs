use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccdiff::coupling::{self, centralized_oracle, decentralized_jacobian};
use ccdiff::distnet::{self, RateExponent};
use ccdiff::experiments::{self, ExperimentConfig, ExperimentKind};
use ccdiff::graph;
use ccdiff::model::{generate_chain_with, generate_random, ChainOptions, RandomConfig, Structure};
use ccdiff::solver::{
    sample_nondegenerate, verify_assumptions, AssumptionReport, AssumptionTolerances,
};
use ccdiff::{Problem, Solution, SolveOptions};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{
    BenchArgs, Cli, Command, DiffMode, DistArgs, ExponentArg, GenArgs, Kind, StructureArg,
};

/// The differentiability assumptions failed; reported with exit code 2.
#[derive(Debug)]
pub struct AssumptionFailure(pub String);

impl std::fmt::Display for AssumptionFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "assumptions violated: {}", self.0)
    }
}

impl std::error::Error for AssumptionFailure {}

/// 3 for numerical failures, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ccdiff::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

/// Solution file layout: the solution fields plus the assumption report.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionDoc {
    #[serde(flatten)]
    pub solution: Solution,
    pub assumptions: Option<AssumptionReport>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    emit(out, &serde_json::to_string_pretty(value)?)
}

fn read_problem(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Problem::from_json(&text)?)
}

fn read_solution(path: &Path) -> Result<Solution> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: SolutionDoc = serde_json::from_str(&text)?;
    Ok(doc.solution)
}

fn check_dimensions(problem: &Problem, solution: &Solution) -> Result<()> {
    let sizes_match = solution.x.len() == problem.n_subproblems()
        && solution
            .x
            .iter()
            .zip(&problem.subproblems)
            .all(|(x, sp)| x.len() == sp.n())
        && solution.coupling_duals().len() == problem.n_coupling();
    if !sizes_match {
        return Err(ccdiff::Error::InvalidDimensions(
            "solution does not match the problem dimensions".into(),
        )
        .into());
    }
    Ok(())
}

/// Solution loaded and checked against the differentiability assumptions.
fn verified(problem: &Problem, solution_path: &Path) -> Result<Solution> {
    let solution = read_solution(solution_path)?;
    check_dimensions(problem, &solution)?;
    let report = verify_assumptions(problem, &solution, &AssumptionTolerances::default());
    if !report.all_ok() {
        return Err(AssumptionFailure(summary(&report)).into());
    }
    Ok(solution)
}

fn summary(r: &AssumptionReport) -> String {
    let mut failed = Vec::new();
    if !r.kkt_ok {
        failed.push(format!("KKT residual {:.3e}", r.kkt_residual));
    }
    if !r.licq_ok {
        failed.push(format!(
            "LICQ (min singular value {:.3e})",
            r.licq_min_singular_value
        ));
    }
    if !r.strict_complementarity_ok {
        failed.push("strict complementarity".to_string());
    }
    if !r.second_order_global_ok {
        failed.push("global second-order condition".to_string());
    }
    if !r.second_order_local_ok {
        failed.push("local second-order condition".to_string());
    }
    failed.join(", ")
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.output.as_deref();
    let opts = SolveOptions {
        tol: cli.tol,
        ..SolveOptions::default()
    };
    match &cli.command {
        Command::Gen(args) => gen(args, cli.seed, &opts, out),
        Command::Solve { problem } => solve(problem, &opts, out),
        Command::Diff {
            problem,
            solution,
            mode,
        } => diff(problem, solution, *mode, cli, out),
        Command::Graph {
            problem,
            omega,
            solution,
        } => graph_cmd(problem, *omega, solution.as_deref(), out),
        Command::DistDiff(args) => dist_diff(args, cli, out),
        Command::BenchScaling(args) => bench(ExperimentKind::ScalingN, args, cli, out),
        Command::BenchRho(args) => bench(ExperimentKind::ScalingRho, args, cli, out),
        Command::BenchConvergence(args) => bench(ExperimentKind::Convergence, args, cli, out),
        Command::BenchChain(args) => bench(ExperimentKind::ChainDecay, args, cli, out),
    }
}

fn gen(args: &GenArgs, seed: u64, opts: &SolveOptions, out: Option<&Path>) -> Result<()> {
    let problem = match args.kind {
        Kind::Chain => {
            let chain = ChainOptions {
                curvature_floor: args.curvature_floor,
                unit_carry: args.unit_carry,
                local_inequalities: !args.no_local_inequalities,
            };
            generate_chain_with(args.horizon, args.n, args.buffer, &chain, seed)?
        }
        Kind::Random => {
            let structure = match args.structure {
                StructureArg::Dense => Structure::Dense,
                StructureArg::Chain => Structure::Chain,
                StructureArg::Banded => Structure::Banded(args.bandwidth),
            };
            let mut cfg = RandomConfig::new(
                args.n_sub,
                args.n,
                args.l,
                args.k,
                args.lambda_h,
                args.lambda_f,
                structure,
                seed,
            );
            cfg.curvature_floor = args.curvature_floor;
            cfg.neighbor_weight = args.neighbor_weight;
            if args.raw {
                generate_random(&cfg)?
            } else {
                let inst = sample_nondegenerate(&cfg, opts)?;
                if inst.attempts > 1 {
                    eprintln!(
                        "resampled: accepted seed {} after {} attempts",
                        inst.seed, inst.attempts
                    );
                }
                inst.problem
            }
        }
    };
    emit(out, &problem.to_json()?)
}

fn solve(problem: &Path, opts: &SolveOptions, out: Option<&Path>) -> Result<()> {
    let problem = read_problem(problem)?;
    let solution = ccdiff::solve(&problem, opts)?;
    let report = verify_assumptions(&problem, &solution, &AssumptionTolerances::default());
    let ok = report.all_ok();
    let text = summary(&report);
    emit_json(
        out,
        &SolutionDoc {
            solution,
            assumptions: Some(report),
        },
    )?;
    if !ok {
        return Err(AssumptionFailure(text).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct JacobianDoc {
    mode: &'static str,
    rows: usize,
    cols: usize,
    /// `D_θx`, stacked over subproblems.
    jacobian: Vec<Vec<f64>>,
    /// `[D_θν; D_θλ]`.
    coupling_jacobian: Vec<Vec<f64>>,
}

fn diff(
    problem: &Path,
    solution: &Path,
    mode: DiffMode,
    cli: &Cli,
    out: Option<&Path>,
) -> Result<()> {
    let problem = read_problem(problem)?;
    let solution = verified(&problem, solution)?;
    let (name, jac, y) = match mode {
        DiffMode::Central => {
            let c = centralized_oracle(&problem, &solution)?;
            ("central", c.jacobian.stacked, c.y)
        }
        DiffMode::Decentralized => {
            let d = decentralized_jacobian(&problem, &solution, cli.parallel_local)?;
            ("decentralized", d.jacobian.stacked, d.y)
        }
    };
    emit_json(
        out,
        &JacobianDoc {
            mode: name,
            rows: jac.nrows(),
            cols: jac.ncols(),
            jacobian: rows(&jac),
            coupling_jacobian: rows(&y),
        },
    )
}

#[derive(Serialize)]
struct NodeDoc {
    node: usize,
    owned: Vec<usize>,
    v_omega: usize,
    p_omega: usize,
    exterior: usize,
}

#[derive(Serialize)]
struct GraphDoc {
    n_problems: usize,
    n_constraints: usize,
    problem_adjacency: Vec<Vec<usize>>,
    constraint_adjacency: Vec<Vec<usize>>,
    omega: usize,
    nodes: Vec<NodeDoc>,
    /// Graph-induced bandwidth of the coupling normals `M_C`.
    coupling_matrix_bandwidth: usize,
    /// Graph-induced bandwidth of `∂C`, when a solution is given.
    coupling_system_bandwidth: Option<usize>,
    /// Bandwidth of each projection `∂C_k^ω`, when a solution is given.
    projection_bandwidths: Option<Vec<usize>>,
}

fn graph_cmd(
    problem: &Path,
    omega: usize,
    solution: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let problem = read_problem(problem)?;
    let g = graph::build_graph(&problem);
    let projs = graph::neighborhoods(&g, omega);
    let cons = graph::constraint_partition(&g);
    let mc = graph::coupling_matrix(&problem);
    let coupling_matrix_bandwidth =
        graph::graph_induced_bandwidth(&mc, &g, &cons, &graph::problem_partition(&problem, &g));
    let (dc_bw, proj_bw) = match solution {
        Some(path) => {
            let solution = verified(&problem, path)?;
            let d = decentralized_jacobian(&problem, &solution, false)?;
            let bw = graph::graph_induced_bandwidth(&d.system.dc, &g, &cons, &cons);
            let per_node = projs
                .iter()
                .map(|p| {
                    let part: graph::Partition = p
                        .v_omega
                        .iter()
                        .enumerate()
                        .map(|(k, &j)| (g.constraint_node(j), k..k + 1))
                        .collect();
                    let sub = ccdiff::linalg::submatrix(&d.system.dc, &p.v_omega, &p.v_omega);
                    graph::graph_induced_bandwidth(&sub, &g, &part, &part)
                })
                .collect();
            (Some(bw), Some(per_node))
        }
        None => (None, None),
    };
    let nodes = projs
        .iter()
        .map(|p| NodeDoc {
            node: p.node,
            owned: p.v0.clone(),
            v_omega: p.v_omega.len(),
            p_omega: p.p_omega.len(),
            exterior: p.exterior.len(),
        })
        .collect();
    emit_json(
        out,
        &GraphDoc {
            n_problems: g.n_problems,
            n_constraints: g.n_constraints,
            problem_adjacency: g.problem_adj.clone(),
            constraint_adjacency: g.constraint_adj.clone(),
            omega,
            nodes,
            coupling_matrix_bandwidth,
            coupling_system_bandwidth: dc_bw,
            projection_bandwidths: proj_bw,
        },
    )
}

#[derive(Serialize)]
struct RoundRow {
    t: usize,
    err_inf: f64,
    alpha_bound_t: f64,
    msgs: usize,
    scalars_moved: usize,
}

#[derive(Serialize)]
struct DistDoc {
    omega: usize,
    seed: u64,
    converged: bool,
    rate_bound: distnet::RateBound,
    accounting: distnet::MessageAccounting,
    setup: distnet::SetupStats,
    initial_error: f64,
    rounds: Vec<distnet::RoundLog>,
    y_hat: Vec<Vec<f64>>,
    jacobian: Vec<Vec<f64>>,
}

fn dist_diff(args: &DistArgs, cli: &Cli, out: Option<&Path>) -> Result<()> {
    let problem = read_problem(&args.problem)?;
    let solution = verified(&problem, &args.solution)?;
    let reference = decentralized_jacobian(&problem, &solution, cli.parallel_local)?;
    let mut net = distnet::setup(
        &problem,
        &solution,
        &reference.local_jacobians,
        args.omega,
        cli.seed,
    )?;
    net.parallel = cli.parallel_local;
    let exponent = match args.exponent {
        ExponentArg::Final => RateExponent::Final,
        ExponentArg::Draft => RateExponent::Draft,
    };
    let bound = distnet::rate_bound(&net, exponent);
    let accounting = distnet::message_accounting(&net);
    let result = distnet::run(&mut net, args.round_tol, args.rounds, Some(&reference.y));
    let e0 = result.initial_error.unwrap_or(f64::NAN);
    if let Some(path) = &args.csv {
        write_round_csv(path, &result.history, bound.alpha, e0)?;
    }
    let jac = coupling::total_jacobian(&problem, &reference.local_jacobians, &result.y);
    if !result.converged {
        eprintln!(
            "not converged after {} rounds (alpha bound {:.3e})",
            result.history.len(),
            bound.alpha
        );
    }
    emit_json(
        out,
        &DistDoc {
            omega: args.omega,
            seed: cli.seed,
            converged: result.converged,
            rate_bound: bound,
            accounting,
            setup: net.setup_stats,
            initial_error: e0,
            rounds: result.history,
            y_hat: rows(&result.y),
            jacobian: rows(&jac.stacked),
        },
    )
}

fn write_round_csv(
    path: &PathBuf,
    history: &[distnet::RoundLog],
    alpha: f64,
    e0: f64,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for log in history {
        w.serialize(RoundRow {
            t: log.iteration,
            err_inf: log.error_inf.unwrap_or(f64::NAN),
            alpha_bound_t: alpha.powi(log.iteration as i32) * e0,
            msgs: log.messages,
            scalars_moved: log.scalars,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn bench(kind: ExperimentKind, args: &BenchArgs, cli: &Cli, out: Option<&Path>) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let c: ExperimentConfig = serde_json::from_str(&text)?;
            if c.kind != kind {
                bail!("configuration is for {:?}, not {:?}", c.kind, kind);
            }
            c
        }
        None => {
            let mut c = ExperimentConfig::default_for(kind);
            if matches!(kind, ExperimentKind::ScalingN | ExperimentKind::ScalingRho) {
                c.seeds = vec![cli.seed];
            }
            c
        }
    };
    config.tol = cli.tol;
    config.parallel_local |= cli.parallel_local;
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &args.$field {
                config.$field = v.clone();
            }
        };
    }
    set!(sweep);
    set!(repetitions);
    set!(seeds);
    set!(n_sub);
    set!(n);
    set!(l);
    set!(k);
    set!(lambda);
    set!(rounds);
    set!(stiffness);
    set!(horizon);
    let table = experiments::run_experiment(&config)?;
    for s in &table.skipped {
        eprintln!("skipped: {s}");
    }
    emit(out, table.to_csv()?.trim_end())
}

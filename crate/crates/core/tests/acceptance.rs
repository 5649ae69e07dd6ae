//! End-to-end acceptance checks.
//!
//! All ten criteria run inside one test so the timing criterion never shares
//! the machine with another test of this binary. Each criterion writes one
//! `PASS`/`FAIL` line straight to stderr, so the lines show up even when the
//! harness captures output.

use std::io::Write;
use std::time::Instant;

use ccdiff::coupling::{
    centralized_oracle, decentralized_jacobian, finite_difference_oracle, relative_error,
    schur_complement,
};
use ccdiff::distnet::{self, RateExponent};
use ccdiff::experiments::{
    chain_decay_points, chain_decay_slope, convergence_runs, experiment_scaling_rho,
    fit_loglog_slope, fitted_rate, ExperimentConfig,
};
use ccdiff::graph::{
    build_graph, constraint_partition, coupling_matrix, decay_check, decompose_dc,
    graph_induced_bandwidth, problem_partition,
};
use ccdiff::linalg;
use ccdiff::localdiff::LocalJacobian;
use ccdiff::model::{
    fixtures, generate_chain, generate_chain_with, ChainOptions, Problem, RandomConfig, Structure,
};
use ccdiff::solver::{sample_nondegenerate, solve, Solution, SolveOptions};
use ccdiff::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    problem: Problem,
    solution: Solution,
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, started: Instant, outcome: &Outcome) {
    let status = if outcome.pass { "PASS" } else { "FAIL" };
    let secs = started.elapsed().as_secs_f64();
    let _ = writeln!(
        std::io::stderr(),
        "{status} criterion {id:>2} {name}: {} [{secs:.1} s]",
        outcome.detail
    );
}

/// 100 verified random instances with `N ≤ 20`, `n, l, k ≤ 5`, `Λ ≤ 10`.
fn random_corpus() -> Vec<Instance> {
    let opts = SolveOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut out = Vec::new();
    let mut draw = 0u64;
    while out.len() < 100 {
        draw += 1;
        assert!(draw < 1000, "could not draw 100 verified instances");
        let n_sub = rng.random_range(2..=20);
        let n = rng.random_range(1..=5);
        let l = rng.random_range(0..=5);
        let k = rng.random_range(0..n.min(5));
        let lambda_h = rng.random_range(0..=6usize);
        let lambda_f = rng.random_range(usize::from(lambda_h == 0)..=10 - lambda_h);
        let structure = match rng.random_range(0..3) {
            0 => Structure::Dense,
            1 => Structure::Chain,
            _ => Structure::Banded(rng.random_range(1..=2usize.min(n_sub - 1))),
        };
        let cfg = RandomConfig::new(n_sub, n, l, k, lambda_h, lambda_f, structure, draw * 7919);
        match sample_nondegenerate(&cfg, &opts) {
            Ok(inst) => out.push(Instance {
                problem: inst.problem,
                solution: inst.solution,
            }),
            Err(Error::InvalidDimensions(_)) => continue,
            Err(e) if e.is_numerical() => continue,
            Err(e) => panic!("corpus draw {draw}: {e}"),
        }
    }
    out
}

/// 100 instances whose coupling rows have local support: chains and banded
/// random problems.
fn structured_corpus() -> Vec<Instance> {
    let opts = SolveOptions::default();
    let mut out = Vec::new();
    let mut seed = 0u64;
    while out.len() < 100 {
        seed += 1;
        assert!(seed < 1000, "could not draw 100 structured instances");
        let inst = match seed % 4 {
            0 => {
                let horizon = 6 + (seed % 11) as usize;
                let buffer = [0.2, 0.5, 0.9][(seed % 3) as usize];
                let problem = generate_chain(horizon, 3, buffer, seed).unwrap();
                match solve(&problem, &opts) {
                    Ok(solution) => Instance { problem, solution },
                    Err(_) => continue,
                }
            }
            r => {
                let structure = match r {
                    1 => Structure::Chain,
                    2 => Structure::Banded(1),
                    _ => Structure::Banded(2),
                };
                let cfg = RandomConfig::new(10, 3, 2, 1, 5, 3, structure, seed * 31);
                match sample_nondegenerate(&cfg, &opts) {
                    Ok(v) => Instance {
                        problem: v.problem,
                        solution: v.solution,
                    },
                    Err(_) => continue,
                }
            }
        };
        out.push(inst);
    }
    out
}

fn oracle_equivalence(corpus: &[Instance]) -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in corpus {
        let d = decentralized_jacobian(&inst.problem, &inst.solution, false).unwrap();
        let c = centralized_oracle(&inst.problem, &inst.solution).unwrap();
        worst = worst.max(relative_error(&d.jacobian.stacked, &c.jacobian.stacked));
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!(
            "{} instances, worst relative error {worst:.2e} (limit 1e-8)",
            corpus.len()
        ),
    }
}

fn finite_differences(corpus: &[Instance]) -> Outcome {
    let opts = SolveOptions {
        tol: 1e-12,
        ..SolveOptions::default()
    };
    let mut worst: f64 = 0.0;
    let mut flips = 0;
    let mut compared = 0;
    for inst in corpus {
        let d = decentralized_jacobian(&inst.problem, &inst.solution, false).unwrap();
        match finite_difference_oracle(&inst.problem, &inst.solution, 1e-5, &opts) {
            Ok(fd) => {
                compared += 1;
                worst = worst.max(relative_error(&fd.jacobian.stacked, &d.jacobian.stacked));
            }
            Err(Error::ActiveSetFlip { .. }) => flips += 1,
            Err(e) => panic!("finite differences: {e}"),
        }
    }
    Outcome {
        pass: worst <= 1e-4 && compared > 0,
        detail: format!(
            "{compared} compared, {flips} excluded for active-set flips, worst relative error {worst:.2e} (limit 1e-4)"
        ),
    }
}

fn consensus_closed_form() -> Outcome {
    let p = fixtures::consensus(1.0, 3.0, 2.0);
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let d = decentralized_jacobian(&p, &s, false).unwrap();
    let x1 = DMatrix::from_row_slice(1, 3, &[0.5, -0.5, 0.5]);
    let nu = DMatrix::from_row_slice(1, 3, &[0.5, 0.5, -0.5]);
    let ex = linalg::max_abs(&(&d.jacobian.blocks[0] - x1));
    let en = linalg::max_abs(&(d.y.rows(0, 1).into_owned() - nu));
    Outcome {
        pass: ex <= 1e-12 && en <= 1e-12,
        detail: format!("|D x1 error| {ex:.1e}, |D nu error| {en:.1e} (limit 1e-12)"),
    }
}

struct BoundCheck {
    alpha: f64,
    fitted: f64,
    violations: usize,
    rounds: usize,
}

/// Runs the distributed iteration and compares each round's error with `αᵗ e₀`.
/// `None` when the computed `α` is not below one.
fn bound_check(
    problem: &Problem,
    solution: &Solution,
    omega: usize,
    seed: u64,
) -> Option<BoundCheck> {
    let d = decentralized_jacobian(problem, solution, false).unwrap();
    let mut net = distnet::setup(problem, solution, &d.local_jacobians, omega, seed).unwrap();
    let alpha = distnet::rate_bound(&net, RateExponent::Final).alpha;
    if !(alpha < 1.0) {
        return None;
    }
    // Round-off floor for comparisons once αᵗ e₀ drops below machine precision.
    let slack = 1e-10 * (1.0 + linalg::max_abs(&d.y));
    let e0 = linalg::max_abs(&(&net.y - &d.y));
    let mut errors = vec![1.0];
    let mut violations = 0;
    for t in 1..=60 {
        let e = net.round(Some(&d.y)).error_inf.unwrap();
        if e > alpha.powi(t) * e0 + slack {
            violations += 1;
        }
        errors.push(e / e0);
        if e <= slack {
            break;
        }
    }
    Some(BoundCheck {
        alpha,
        fitted: fitted_rate(&errors),
        violations,
        rounds: errors.len() - 1,
    })
}

fn rate_bound() -> Outcome {
    let opts = SolveOptions::default();
    let mut chain = Vec::new();
    let mut seed = 0u64;
    while chain.len() < 50 && seed < 500 {
        let buffer = [0.05, 0.1, 0.2][(seed % 3) as usize];
        let omega = ((seed / 3) % 3) as usize;
        let shape = ChainOptions {
            curvature_floor: 20.0,
            unit_carry: true,
            local_inequalities: false,
        };
        let problem = generate_chain_with(30, 3, buffer, &shape, seed).unwrap();
        let solution = solve(&problem, &opts).unwrap();
        chain.extend(bound_check(&problem, &solution, omega, seed));
        seed += 1;
    }
    let mut banded = Vec::new();
    let mut seed = 0u64;
    while banded.len() < 50 && seed < 500 {
        let mut cfg = RandomConfig::new(24, 4, 0, 0, 12, 0, Structure::Banded(2), seed * 101);
        cfg.curvature_floor = 20.0;
        cfg.neighbor_weight = 0.05;
        if let Ok(inst) = sample_nondegenerate(&cfg, &opts) {
            banded.extend(bound_check(
                &inst.problem,
                &inst.solution,
                (seed % 2) as usize,
                seed,
            ));
        }
        seed += 1;
    }
    let all: Vec<&BoundCheck> = chain.iter().chain(&banded).collect();
    let violations: usize = all.iter().map(|c| c.violations).sum();
    let rounds: usize = all.iter().map(|c| c.rounds).sum();
    let fit_over = all.iter().filter(|c| c.fitted > c.alpha).count();
    let max_alpha = all.iter().map(|c| c.alpha).fold(0.0, f64::max);
    Outcome {
        pass: chain.len() == 50 && banded.len() == 50 && violations == 0 && fit_over == 0,
        detail: format!(
            "{} chain + {} banded instances (max alpha {max_alpha:.3}), {rounds} rounds, {violations} bound violations, {fit_over} fitted rates above alpha",
            chain.len(),
            banded.len()
        ),
    }
}

fn omega_monotonicity() -> Outcome {
    let config = ExperimentConfig::convergence();
    let (runs, skipped) = convergence_runs(&config).unwrap();
    let mut good = 0;
    for &seed in &config.seeds {
        let mut rates: Vec<(usize, f64)> = runs
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| (r.omega, r.fitted_rate))
            .collect();
        rates.sort_by_key(|r| r.0);
        if rates.len() == config.sweep.len() && rates.windows(2).all(|w| w[1].1 <= w[0].1) {
            good += 1;
        }
    }
    let share = good as f64 / config.seeds.len() as f64;
    Outcome {
        pass: share >= 0.95,
        detail: format!(
            "{good}/{} seeds non-increasing over omega 0..3 ({} skipped, need 95%)",
            config.seeds.len(),
            skipped.len()
        ),
    }
}

fn scaling_slope() -> Outcome {
    let mut config = ExperimentConfig::scaling_rho();
    config.sweep = vec![0.1, 0.15, 0.2, 0.3, 0.4];
    config.repetitions = 10;
    let table = experiment_scaling_rho(&config).unwrap();
    let rho = table.column("rho").unwrap();
    let speedup = table.column("speedup").unwrap();
    let slope = fit_loglog_slope(&rho, &speedup);
    let points: Vec<String> = rho
        .iter()
        .zip(&speedup)
        .map(|(r, s)| format!("{r:.2}:{s:.1}"))
        .collect();
    Outcome {
        pass: (-3.5..=-2.0).contains(&slope),
        detail: format!(
            "N={} n+l={} slope {slope:.2} (window [-3.5, -2.0]); rho:speedup {}",
            config.n_sub,
            config.n + config.l,
            points.join(" ")
        ),
    }
}

fn bandwidth_lemma(corpus: &[Instance]) -> Outcome {
    let mut lemma_fail = 0;
    let mut violations = 0;
    let mut samples = 0;
    for inst in corpus {
        let g = build_graph(&inst.problem);
        let cons = constraint_partition(&g);
        let b_mc = graph_induced_bandwidth(
            &coupling_matrix(&inst.problem),
            &g,
            &cons,
            &problem_partition(&inst.problem, &g),
        );
        let d = decentralized_jacobian(&inst.problem, &inst.solution, false).unwrap();
        let b_dc = graph_induced_bandwidth(&d.system.dc, &g, &cons, &cons);
        if b_dc > 2 * b_mc {
            lemma_fail += 1;
        }
        for s in decay_check(&d.system.dc, &g).unwrap() {
            samples += 1;
            if s.measured > s.bound * (1.0 + 1e-9) + 1e-14 {
                violations += 1;
            }
        }
    }
    Outcome {
        pass: lemma_fail == 0 && violations == 0,
        detail: format!(
            "{} instances, {lemma_fail} with B_dC > 2 B_MC, {violations}/{samples} decay-bound violations",
            corpus.len()
        ),
    }
}

fn psd_primal_blocks(corpora: &[&[Instance]]) -> Outcome {
    let mut worst_asym: f64 = 0.0;
    let mut worst_eig = f64::INFINITY;
    let mut blocks = 0;
    for inst in corpora.iter().flat_map(|c| c.iter()) {
        let d = decentralized_jacobian(&inst.problem, &inst.solution, false).unwrap();
        for lj in &d.local_jacobians {
            let g = &lj.primal_block_inv;
            worst_asym = worst_asym.max(linalg::max_abs(&(g - g.transpose())));
            worst_eig = worst_eig.min(linalg::min_eigenvalue_sym(g));
            blocks += 1;
        }
    }
    Outcome {
        pass: worst_asym <= 1e-12 && worst_eig >= -1e-9,
        detail: format!(
            "{blocks} blocks, max asymmetry {worst_asym:.1e} (limit 1e-12), min eigenvalue {worst_eig:.2e} (limit -1e-9)"
        ),
    }
}

fn dc_sum(local: &[ccdiff::coupling::LocalTerms]) -> DMatrix<f64> {
    local
        .iter()
        .skip(1)
        .fold(local[0].dc.clone(), |acc, t| acc + &t.dc)
}

fn structural_identities(corpus: &[Instance]) -> Outcome {
    let mut gamma_err: f64 = 0.0;
    let mut matrix_err: f64 = 0.0;
    let mut decomp_err: f64 = 0.0;
    let mut schur_err: f64 = 0.0;
    let mut networks = 0;
    for (idx, inst) in corpus.iter().enumerate() {
        let (p, s) = (&inst.problem, &inst.solution);
        let d = decentralized_jacobian(p, s, false).unwrap();
        let ljs: &[LocalJacobian] = &d.local_jacobians;
        let sum = dc_sum(&d.system.local_terms);
        decomp_err = decomp_err.max(relative_error(&decompose_dc(p, s, ljs), &sum));
        schur_err = schur_err.max(relative_error(
            &schur_complement(p, s).unwrap(),
            &d.system.dc,
        ));
        for omega in [0, 1] {
            let Ok(mut net) = distnet::setup(p, s, ljs, omega, idx as u64) else {
                continue;
            };
            networks += 1;
            let mf = distnet::matrix_form(&net);
            for row in mf.gamma.row_iter() {
                gamma_err = gamma_err.max((row.sum() - 1.0).abs());
                gamma_err = gamma_err.max((row.abs().sum() - 1.0).abs());
            }
            let y0 = net.y.clone();
            net.round(None);
            matrix_err = matrix_err.max(relative_error(&net.y, &mf.apply(&y0, &d.system.q)));
        }
    }
    Outcome {
        pass: gamma_err <= 1e-12 && matrix_err <= 1e-12 && decomp_err <= 1e-10 && schur_err <= 1e-10,
        detail: format!(
            "{networks} networks: gamma row/norm error {gamma_err:.1e}, round vs matrix form {matrix_err:.1e}; decomposition {decomp_err:.1e}, Schur {schur_err:.1e}"
        ),
    }
}

fn chain_decay() -> Outcome {
    let config = ExperimentConfig::chain_decay();
    let (points, _) = chain_decay_points(&config).unwrap();
    let slopes: Vec<f64> = config
        .stiffness
        .iter()
        .map(|&s| chain_decay_slope(&points, s))
        .collect();
    let negative = slopes.iter().all(|&s| s < 0.0);
    let shallower = slopes.windows(2).all(|w| w[1].abs() < w[0].abs());
    let listed: Vec<String> = config
        .stiffness
        .iter()
        .zip(&slopes)
        .map(|(k, s)| format!("{k}:{s:.2}"))
        .collect();
    Outcome {
        pass: negative && shallower,
        detail: format!("stiffness:slope {}", listed.join(" ")),
    }
}

#[test]
fn acceptance_criteria() {
    let mut passed = Vec::new();
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        report(id, name, started, &outcome);
        passed.push((id, outcome.pass));
    };

    let random = random_corpus();
    let structured = structured_corpus();
    run(1, "oracle equivalence", &mut || oracle_equivalence(&random));
    run(2, "finite differences", &mut || finite_differences(&random));
    run(3, "consensus closed form", &mut consensus_closed_form);
    run(4, "contraction bound", &mut rate_bound);
    run(5, "omega monotonicity", &mut omega_monotonicity);
    run(6, "scaling slope", &mut scaling_slope);
    run(7, "bandwidth and decay", &mut || {
        bandwidth_lemma(&structured)
    });
    run(8, "PSD primal blocks", &mut || {
        psd_primal_blocks(&[&random, &structured])
    });
    run(9, "structural identities", &mut || {
        structural_identities(&random)
    });
    run(10, "chain decay", &mut chain_decay);

    let failed: Vec<usize> = passed.iter().filter(|p| !p.1).map(|p| p.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

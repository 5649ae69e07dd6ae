//! Closed-form and independent-oracle checks through the public API.

use ccdiff::coupling::{complexity_eta, coupling_ratio, decentralized_jacobian};
use ccdiff::distnet::{self, message_accounting};
use ccdiff::experiments::{experiment_scaling_n, ExperimentConfig};
use ccdiff::graph::{
    build_graph, constraint_partition, coupling_matrix, graph_induced_bandwidth, neighborhood,
    problem_partition,
};
use ccdiff::localdiff::{finite_diff_local, local_jacobian, local_kkt};
use ccdiff::model::{fixtures, generate_chain};
use ccdiff::solver::{solve, verify_assumptions, AssumptionTolerances, SolveOptions};
use nalgebra::DVector;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn scalar_box_solutions_and_sensitivities() {
    // x* = min(θ, b): active box gives (∂θ, ∂b) = (0, 1), inactive gives (1, 0).
    for (theta, x, lam, dtheta, db) in [(2.0, 1.0, 1.0, 0.0, 1.0), (0.5, 0.5, 0.0, 1.0, 0.0)] {
        let p = fixtures::scalar_box(theta, 1.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(close(s.x[0][0], x, 1e-9));
        assert!(close(s.lambda_local[0][0], lam, 1e-9));
        let lj = local_jacobian(&local_kkt(&p, &s, 0), 0).unwrap();
        assert!(close(lj.d_theta_i[(0, 0)], dtheta, 1e-9));
        assert!(close(lj.d_theta_i[(0, 1)], db, 1e-9));
    }
}

#[test]
fn local_jacobian_matches_finite_differences() {
    let p = fixtures::scalar_box(2.0, 1.0);
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let exact = local_jacobian(&local_kkt(&p, &s, 0), 0).unwrap();
    let fd = finite_diff_local(&p, 0, &DVector::zeros(0), &DVector::zeros(0), 1e-5).unwrap();
    assert!((exact.d_theta_i - fd.d_theta_i).amax() < 1e-6);

    let p = fixtures::consensus(1.0, 3.0, 2.0);
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let exact = local_jacobian(&local_kkt(&p, &s, 0), 0).unwrap();
    let fd = finite_diff_local(&p, 0, &s.nu, &s.lambda, 1e-5).unwrap();
    assert!((&exact.d_theta_i - &fd.d_theta_i).amax() < 1e-8);
    assert!((&exact.d_nu - &fd.d_nu).amax() < 1e-8);
    assert!(close(exact.d_theta_i[(0, 0)], 1.0, 1e-12));
    assert!(close(exact.d_nu[(0, 0)], -1.0, 1e-12));
}

#[test]
fn consensus_pipeline_closed_form() {
    // x₁* = (θ₁ − θ₂ + d)/2, ν* = (θ₁ + θ₂ − d)/2.
    let p = fixtures::consensus(1.0, 3.0, 2.0);
    let s = solve(&p, &SolveOptions::default()).unwrap();
    assert!(close(s.x[0][0], 0.0, 1e-10) && close(s.x[1][0], 2.0, 1e-10));
    assert!(close(s.nu[0], 1.0, 1e-10));
    let d = decentralized_jacobian(&p, &s, false).unwrap();
    let expect = [[0.5, -0.5, 0.5], [-0.5, 0.5, 0.5]];
    for (block, row) in d.jacobian.blocks.iter().zip(expect) {
        for (c, v) in row.iter().enumerate() {
            assert!(close(block[(0, c)], *v, 1e-12));
        }
    }
    assert!(close(d.system.dc[(0, 0)], 2.0, 1e-12));
}

#[test]
fn flat_subproblem_fails_local_second_order_check() {
    let p = fixtures::flat_second_subproblem(1.0);
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let r = verify_assumptions(&p, &s, &AssumptionTolerances::default());
    assert!(r.second_order_global_ok);
    assert!(!r.second_order_local_ok);
    assert_eq!(r.local_second_order_failures, vec![1]);
}

#[test]
fn complexity_model_values() {
    assert!(close(complexity_eta(1.0, 1), 0.25, 1e-15));
    assert!(close(coupling_ratio(10, 5, 4), 0.5, 1e-15));
    // For large N the rescaled ratio η (1 + 1/ρ)³ tends to one.
    for rho in [0.01, 0.05, 0.2] {
        let rescaled = complexity_eta(rho, 1_000_000) * (1.0 + 1.0 / rho).powi(3);
        assert!(close(rescaled, 1.0, 1e-3), "rho {rho}: {rescaled}");
    }
}

#[test]
fn hub_neighborhoods_match_illustration() {
    let g = build_graph(&fixtures::hub(1));
    assert_eq!(neighborhood(&g, 0, 0).v_omega, vec![0]);
    assert_eq!(neighborhood(&g, 0, 1).v_omega, vec![0, 1, 2]);
    assert_eq!(neighborhood(&g, 1, 0).v_omega, vec![0, 1, 2]);
}

#[test]
fn chain_bandwidths() {
    let p = generate_chain(12, 3, 0.5, 8).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let g = build_graph(&p);
    let cons = constraint_partition(&g);
    let b_mc = graph_induced_bandwidth(&coupling_matrix(&p), &g, &cons, &problem_partition(&p, &g));
    assert_eq!(b_mc, 1);
    let d = decentralized_jacobian(&p, &s, false).unwrap();
    assert!(graph_induced_bandwidth(&d.system.dc, &g, &cons, &cons) <= 2);
}

#[test]
fn chain_setup_payload_grows_with_omega() {
    let p = generate_chain(10, 2, 0.5, 3).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let d = decentralized_jacobian(&p, &s, false).unwrap();
    let total = |omega| {
        let net = distnet::setup(&p, &s, &d.local_jacobians, omega, 1).unwrap();
        message_accounting(&net).setup_scalars.iter().sum::<usize>()
    };
    assert!(total(1) > total(0));
    assert!(total(2) > total(1));
}

#[test]
fn chain_error_decays_geometrically() {
    let p = generate_chain(10, 2, 0.5, 2).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let d = decentralized_jacobian(&p, &s, false).unwrap();
    let mut net = distnet::setup(&p, &s, &d.local_jacobians, 1, 2).unwrap();
    let errors: Vec<f64> = (0..8)
        .map(|_| net.round(Some(&d.y)).error_inf.unwrap())
        .collect();
    assert!(
        errors.windows(2).all(|w| w[1] < w[0] || w[1] < 1e-13),
        "{errors:?}"
    );
}

#[test]
fn speedup_grows_with_subproblem_count() {
    let mut config = ExperimentConfig::scaling_n();
    config.sweep = vec![4.0, 16.0, 64.0];
    config.repetitions = 3;
    let table = experiment_scaling_n(&config).unwrap();
    let speedup = table.column("speedup").unwrap();
    assert!(speedup.windows(2).all(|w| w[1] > w[0]), "{speedup:?}");
}

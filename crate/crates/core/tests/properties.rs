//! Property tests over randomly drawn instances.

use ccdiff::coupling::{decentralized_jacobian, relative_error};
use ccdiff::distnet;
use ccdiff::graph::{
    build_graph, constraint_partition, coupling_matrix, decompose_dc, graph_induced_bandwidth,
    neighborhood, problem_partition, project_system,
};
use ccdiff::linalg;
use ccdiff::model::{generate_chain, generate_random, Problem, RandomConfig, Structure};
use ccdiff::solver::{sample_nondegenerate, solve, SolveOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn structure() -> impl Strategy<Value = Structure> {
    prop_oneof![
        Just(Structure::Dense),
        Just(Structure::Chain),
        (1usize..=2).prop_map(Structure::Banded)
    ]
}

fn config() -> impl Strategy<Value = RandomConfig> {
    (
        3usize..=8,
        1usize..=4,
        0usize..=3,
        0usize..=1,
        1usize..=4,
        0usize..=3,
        structure(),
        any::<u64>(),
    )
        .prop_map(|(n_sub, n, l, k, lh, lf, s, seed)| {
            RandomConfig::new(n_sub, n.max(k + 1), l, k, lh, lf, s, seed)
        })
}

fn verified(cfg: &RandomConfig) -> Option<(Problem, ccdiff::Solution)> {
    sample_nondegenerate(cfg, &SolveOptions::default())
        .ok()
        .map(|v| (v.problem, v.solution))
}

fn sub_of(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|j| big.binary_search(j).is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn theta_round_trip(cfg in config(), shift in -2.0f64..2.0) {
        let Ok(p) = generate_random(&cfg) else { return Err(TestCaseError::reject("invalid draw")) };
        let theta = p.theta_read();
        prop_assert_eq!(&p.theta_write(&theta).unwrap(), &p);
        let moved = theta.map(|v| v + shift);
        let back = p.theta_write(&moved).unwrap().theta_read();
        prop_assert!((back - moved).amax() < 1e-12);
    }

    #[test]
    fn json_round_trip(cfg in config()) {
        let Ok(p) = generate_random(&cfg) else { return Err(TestCaseError::reject("invalid draw")) };
        prop_assert_eq!(Problem::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn primal_blocks_are_psd(cfg in config()) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        for lj in &d.local_jacobians {
            let g = &lj.primal_block_inv;
            prop_assert!(linalg::max_abs(&(g - g.transpose())) <= 1e-12);
            prop_assert!(linalg::min_eigenvalue_sym(g) >= -1e-9);
        }
    }

    #[test]
    fn neighborhoods_nest_and_partition(cfg in config(), omega in 0usize..4) {
        let Ok(p) = generate_random(&cfg) else { return Err(TestCaseError::reject("invalid draw")) };
        let g = build_graph(&p);
        for k in 0..p.n_subproblems() {
            let a = neighborhood(&g, k, omega);
            let b = neighborhood(&g, k, omega + 1);
            prop_assert!(sub_of(&a.v0, &a.v_omega));
            prop_assert!(sub_of(&a.v_omega, &b.v_omega));
            prop_assert!(sub_of(&a.p_omega, &b.p_omega));
            prop_assert_eq!(a.v_omega.len() + a.exterior.len(), p.n_coupling());
            prop_assert!(a.exterior.iter().all(|j| a.v_omega.binary_search(j).is_err()));
        }
    }

    #[test]
    fn projection_equals_slicing(cfg in config(), omega in 0usize..3) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let g = build_graph(&p);
        for k in 0..p.n_subproblems() {
            let proj = neighborhood(&g, k, omega);
            let ps = project_system(&d.system.local_terms, &proj);
            let dc = &d.system.dc;
            prop_assert!(linalg::max_abs(&(ps.dc_k - linalg::submatrix(dc, &proj.v_omega, &proj.v_omega))) < 1e-12);
            prop_assert!(linalg::max_abs(&(ps.dc_minus_k - linalg::submatrix(dc, &proj.v_omega, &proj.exterior))) < 1e-12);
            prop_assert!(linalg::max_abs(&(ps.q_k - linalg::select_rows(&d.system.q, &proj.v_omega))) < 1e-12);
        }
    }

    #[test]
    fn bandwidth_of_dc_at_most_twice_coupling(cfg in config()) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let g = build_graph(&p);
        let cons = constraint_partition(&g);
        let b_mc = graph_induced_bandwidth(&coupling_matrix(&p), &g, &cons, &problem_partition(&p, &g));
        let b_dc = graph_induced_bandwidth(&d.system.dc, &g, &cons, &cons);
        prop_assert!(b_dc <= 2 * b_mc);
    }

    #[test]
    fn decomposition_matches_local_sum(cfg in config()) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        prop_assert!(relative_error(&decompose_dc(&p, &s, &d.local_jacobians), &d.system.dc) < 1e-10);
    }

    #[test]
    fn gamma_averages(cfg in config(), omega in 0usize..3) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let Ok(net) = distnet::setup(&p, &s, &d.local_jacobians, omega, 3) else { return Ok(()) };
        let gamma = distnet::matrix_form(&net).gamma;
        for row in gamma.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn central_solution_is_a_fixed_point(cfg in config(), omega in 0usize..3) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let Ok(mut net) = distnet::setup(&p, &s, &d.local_jacobians, omega, 5) else { return Ok(()) };
        net.reset(&d.y);
        net.round(None);
        prop_assert!(relative_error(&net.y, &d.y) < 1e-10);
    }

    #[test]
    fn saturating_radius_is_exact(horizon in 3usize..8, seed in any::<u64>()) {
        let p = generate_chain(horizon, 2, 0.5, seed).unwrap();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let mut net = distnet::setup(&p, &s, &d.local_jacobians, horizon, seed).unwrap();
        net.round(Some(&d.y));
        prop_assert!(relative_error(&net.y, &d.y) < 1e-10);
    }

    #[test]
    fn runs_are_deterministic(cfg in config(), omega in 0usize..2) {
        let Some((p, s)) = verified(&cfg) else { return Err(TestCaseError::reject("degenerate draw")) };
        let d = decentralized_jacobian(&p, &s, false).unwrap();
        let logs = |seed: u64| -> Option<(DMatrix<f64>, Vec<distnet::RoundLog>)> {
            let mut net = distnet::setup(&p, &s, &d.local_jacobians, omega, seed).ok()?;
            let logs = (0..3).map(|_| net.round(Some(&d.y)).without_timing()).collect();
            Some((net.y.clone(), logs))
        };
        prop_assert_eq!(logs(9), logs(9));
        prop_assert_eq!(generate_random(&cfg).ok(), generate_random(&cfg).ok());
    }
}

#[test]
fn theta_write_rejects_wrong_length() {
    let p = generate_random(&RandomConfig::new(3, 2, 1, 0, 1, 1, Structure::Dense, 1)).unwrap();
    assert!(p.theta_write(&DVector::zeros(p.theta_dim() + 1)).is_err());
}

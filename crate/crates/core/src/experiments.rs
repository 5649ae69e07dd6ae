//! Experiment drivers behind the `bench-*` commands.
//!
//! Each driver returns a [`Table`] whose CSV form starts with a
//! `# config-hash` comment line followed by a header row.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{self, complexity_eta, coupling_ratio, total_jacobian};
use crate::distnet::{self, RateExponent};
use crate::error::{Error, Result};
use crate::linalg;
use crate::localdiff;
use crate::model::{generate_chain, RandomConfig, Structure};
use crate::solver::{sample_nondegenerate, solve, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ScalingN,
    ScalingRho,
    Convergence,
    ChainDecay,
}

/// Parameters of one experiment. `sweep` holds `N` values for scaling-N,
/// `ρ` values for scaling-rho and `ω` values otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub sweep: Vec<f64>,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub tol: f64,
    /// Number of subproblems (scaling-rho, convergence).
    pub n_sub: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
    /// Coupling rows (scaling-N, convergence).
    pub lambda: usize,
    /// Maximum rounds of the distributed scheme.
    pub rounds: usize,
    /// Chain coupling stiffness levels (chain-decay).
    pub stiffness: Vec<f64>,
    /// Chain length (chain-decay).
    pub horizon: usize,
    /// Also time the decentralized path with parallel local work.
    pub parallel_local: bool,
}

impl ExperimentConfig {
    /// Speedup against `N` at `Λ = 2`.
    pub fn scaling_n() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::ScalingN,
            sweep: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            repetitions: 20,
            seeds: vec![1],
            tol: 1e-10,
            n_sub: 0,
            n: 4,
            l: 2,
            k: 1,
            lambda: 2,
            rounds: 0,
            stiffness: Vec::new(),
            horizon: 0,
            parallel_local: false,
        }
    }

    /// Speedup against `ρ` at fixed `N` and `n + l`.
    pub fn scaling_rho() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::ScalingRho,
            sweep: vec![0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4],
            repetitions: 20,
            seeds: vec![1],
            tol: 1e-10,
            n_sub: 100,
            n: 12,
            l: 8,
            k: 2,
            lambda: 0,
            rounds: 0,
            stiffness: Vec::new(),
            horizon: 0,
            parallel_local: false,
        }
    }

    /// Distributed convergence on `N = 50` subproblems with `l = k = 2`, each
    /// in two equality coupling rows.
    pub fn convergence() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Convergence,
            sweep: vec![0.0, 1.0, 2.0, 3.0],
            repetitions: 1,
            seeds: (1..=20).collect(),
            tol: 1e-10,
            n_sub: 50,
            n: 5,
            l: 2,
            k: 2,
            lambda: 50,
            rounds: 200,
            stiffness: Vec::new(),
            horizon: 0,
            parallel_local: false,
        }
    }

    /// One-round error against `ω` on time-coupled chains.
    pub fn chain_decay() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::ChainDecay,
            sweep: (0..=6).map(f64::from).collect(),
            repetitions: 1,
            seeds: vec![1, 2, 3],
            tol: 1e-10,
            n_sub: 0,
            n: 4,
            l: 0,
            k: 0,
            lambda: 0,
            rounds: 1,
            stiffness: vec![0.2, 0.6, 0.9],
            horizon: 120,
            parallel_local: false,
        }
    }

    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::ScalingN => Self::scaling_n(),
            ExperimentKind::ScalingRho => Self::scaling_rho(),
            ExperimentKind::Convergence => Self::convergence(),
            ExperimentKind::ChainDecay => Self::chain_decay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.sweep.is_empty() {
            return bad("sweep is empty");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("no seeds given");
        }
        if self.sweep.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("sweep values must be finite and non-negative");
        }
        let integral = matches!(
            self.kind,
            ExperimentKind::Convergence | ExperimentKind::ChainDecay
        ) || self.kind == ExperimentKind::ScalingN;
        if integral && self.sweep.iter().any(|v| v.fract() != 0.0) {
            return bad("sweep values must be integers for this experiment");
        }
        if self.kind == ExperimentKind::ChainDecay && self.stiffness.is_empty() {
            return bad("no stiffness levels given");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Experiment output. Columns listed in `timing_columns` carry wall-clock
/// values and are the only ones that may differ between identical runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub timing_columns: Vec<usize>,
    /// Instances skipped after solver failures.
    pub skipped: Vec<String>,
}

impl Table {
    fn new(config: &ExperimentConfig, header: &[&str], timing: &[&str]) -> Self {
        Table {
            config_hash: config.hash(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            timing_columns: timing
                .iter()
                .map(|t| {
                    header
                        .iter()
                        .position(|h| h == t)
                        .expect("timing column in header")
                })
                .collect(),
            skipped: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Copy with timing columns zeroed.
    pub fn without_timing(&self) -> Table {
        let mut t = self.clone();
        for row in &mut t.rows {
            for &c in &self.timing_columns {
                row[c] = 0.0;
            }
        }
        t
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# config-hash {}\n", self.config_hash);
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is UTF-8"));
        Ok(out)
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Log-log slope of `y` against `x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_slope(&lx, &ly)
}

/// Errors below this level are treated as converged and excluded from rate fits.
pub const RATE_FIT_FLOOR: f64 = 1e-12;

/// Geometric rate `exp(slope)` of a least-squares fit of `ln e_t` over the
/// rounds `t ≥ 1` whose relative error exceeds [`RATE_FIT_FLOOR`]. With a
/// single such round the one-step ratio `e_1/e_0` is used; with none the
/// rate is 0.
pub fn fitted_rate(errors: &[f64]) -> f64 {
    let e0 = match errors.first() {
        Some(&e) if e > 0.0 => e,
        _ => return 0.0,
    };
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &e)| e / e0 > RATE_FIT_FLOOR)
        .map(|(t, &e)| (t as f64, e.ln()))
        .collect();
    match pts.len() {
        0 => 0.0,
        1 => errors[1] / e0,
        _ => {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            fit_slope(&x, &y).exp()
        }
    }
}

/// Linear-interpolated percentile (`p` in `[0, 1]`) of unsorted data.
pub fn percentile(data: &[f64], p: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn opts(config: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        tol: config.tol,
        ..SolveOptions::default()
    }
}

fn timing_row(
    config: &ExperimentConfig,
    cfg: &RandomConfig,
    table: &mut Table,
) -> Result<Option<(f64, f64, Option<f64>)>> {
    let inst = match sample_nondegenerate(cfg, &opts(config)) {
        Ok(inst) => inst,
        Err(e) if e.is_numerical() => {
            table
                .skipped
                .push(format!("N={} lambda={}: {e}", cfg.n_sub, cfg.lambda_h));
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let t = coupling::time_paths(
        &inst.problem,
        &inst.solution,
        config.repetitions,
        config.parallel_local,
    )?;
    Ok(Some((
        t.central.as_secs_f64(),
        t.decentralized.as_secs_f64(),
        t.decentralized_parallel.map(|d| d.as_secs_f64()),
    )))
}

const SCALING_HEADER: [&str; 10] = [
    "N",
    "n",
    "l",
    "lambda",
    "rho",
    "t_central_s",
    "t_decentralized_s",
    "speedup",
    "eta_model",
    "t_decentralized_parallel_s",
];
const SCALING_TIMING: [&str; 4] = [
    "t_central_s",
    "t_decentralized_s",
    "speedup",
    "t_decentralized_parallel_s",
];

/// Central against decentralized single-column timing for each `N` in the
/// sweep at fixed `Λ`. Coupling rows touch every subproblem.
pub fn experiment_scaling_n(config: &ExperimentConfig) -> Result<Table> {
    config.validate()?;
    let mut table = Table::new(config, &SCALING_HEADER, &SCALING_TIMING);
    for (idx, &nv) in config.sweep.iter().enumerate() {
        let n_sub = nv as usize;
        let lambda = if n_sub == 1 { 0 } else { config.lambda };
        let seed = config.seeds[0].wrapping_add(1000 * idx as u64);
        let cfg = RandomConfig::new(
            n_sub,
            config.n,
            config.l,
            config.k,
            lambda,
            0,
            Structure::Dense,
            seed,
        );
        if let Some((tc, td, tp)) = timing_row(config, &cfg, &mut table)? {
            let rho = coupling_ratio(lambda, n_sub, config.n + config.l);
            table.rows.push(vec![
                n_sub as f64,
                config.n as f64,
                config.l as f64,
                lambda as f64,
                rho,
                tc,
                td,
                tc / td,
                complexity_eta(rho, n_sub),
                tp.unwrap_or(f64::NAN),
            ]);
        }
    }
    Ok(table)
}

/// Reference `ρ` for normalized columns.
pub const RHO_REFERENCE: f64 = 0.02;

/// Speedup against `ρ` at fixed `N` and `n + l`, with `Λ = round(ρ N (n+l))`
/// equality rows in a ring so each subproblem touches about `2Λ/N` rows.
///
/// Besides the raw speedup, rows carry the measured ratio `η = t_dec/t_central`,
/// its large-`N` limit `(1 + 1/ρ)⁻³`, and the rescaled ratio `η (1 + 1/ρ)³`.
/// Normalized columns divide by the row at `ρ = 0.02`, or by the smallest `ρ`
/// in the sweep when 0.02 is absent.
pub fn experiment_scaling_rho(config: &ExperimentConfig) -> Result<Table> {
    config.validate()?;
    let mut header = SCALING_HEADER.to_vec();
    header.extend([
        "eta_measured",
        "eta_asymptote",
        "speedup_normalized",
        "eta_inverse_normalized",
        "rescaled_ratio_normalized",
    ]);
    let mut timing = SCALING_TIMING.to_vec();
    timing.extend([
        "eta_measured",
        "speedup_normalized",
        "rescaled_ratio_normalized",
    ]);
    let mut table = Table::new(config, &header, &timing);
    let nl = config.n + config.l;
    for (idx, &rho_target) in config.sweep.iter().enumerate() {
        let lambda = ((rho_target * (config.n_sub * nl) as f64).round() as usize).max(1);
        let seed = config.seeds[0].wrapping_add(1000 * idx as u64);
        let cfg = RandomConfig::new(
            config.n_sub,
            config.n,
            config.l,
            config.k,
            lambda,
            0,
            Structure::Chain,
            seed,
        );
        if let Some((tc, td, tp)) = timing_row(config, &cfg, &mut table)? {
            let rho = coupling_ratio(lambda, config.n_sub, nl);
            table.rows.push(vec![
                config.n_sub as f64,
                config.n as f64,
                config.l as f64,
                lambda as f64,
                rho,
                tc,
                td,
                tc / td,
                complexity_eta(rho, config.n_sub),
                tp.unwrap_or(f64::NAN),
                td / tc,
                (1.0 + 1.0 / rho).powi(-3),
                0.0,
                0.0,
                0.0,
            ]);
        }
    }
    if let Some(reference) = reference_row(&table, RHO_REFERENCE) {
        let r0 = table.rows[reference].clone();
        let rescaled = |r: &[f64]| r[10] / r[11];
        for row in &mut table.rows {
            row[12] = row[7] / r0[7];
            row[13] = r0[8] / row[8];
            row[14] = rescaled(row) / rescaled(&r0);
        }
    }
    Ok(table)
}

fn reference_row(table: &Table, rho: f64) -> Option<usize> {
    let rhos: Vec<f64> = table.rows.iter().map(|r| r[4]).collect();
    rhos.iter()
        .position(|&r| (r - rho).abs() < 1e-12)
        .or_else(|| {
            rhos.iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
        })
}

/// One distributed run of the convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRun {
    pub seed: u64,
    pub omega: usize,
    pub alpha: f64,
    /// `‖ŷ_t − y*‖∞ / ‖ŷ_0 − y*‖∞` for `t = 0, 1, …`.
    pub errors: Vec<f64>,
    /// Per node, the same ratio restricted to the node's owned constraints.
    pub node_errors: Vec<Vec<f64>>,
    pub fitted_rate: f64,
    pub converged: bool,
}

/// Random instance with `N` subproblems in a ring of `Λ` equality rows.
pub fn convergence_config(config: &ExperimentConfig, seed: u64) -> RandomConfig {
    RandomConfig::new(
        config.n_sub,
        config.n,
        config.l,
        config.k,
        config.lambda,
        0,
        Structure::Chain,
        seed,
    )
}

/// Runs the distributed scheme for every seed and `ω` in the sweep.
pub fn convergence_runs(config: &ExperimentConfig) -> Result<(Vec<ConvergenceRun>, Vec<String>)> {
    config.validate()?;
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for &seed in &config.seeds {
        let inst = match sample_nondegenerate(&convergence_config(config, seed), &opts(config)) {
            Ok(inst) => inst,
            Err(e) if e.is_numerical() => {
                skipped.push(format!("seed {seed}: {e}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let reference = coupling::decentralized_jacobian(&inst.problem, &inst.solution, false)?;
        for &w in &config.sweep {
            let omega = w as usize;
            let mut net = distnet::setup(
                &inst.problem,
                &inst.solution,
                &reference.local_jacobians,
                omega,
                seed,
            )?;
            let alpha = distnet::rate_bound(&net, RateExponent::Final).alpha;
            let y_star = &reference.y;
            let owned: Vec<Vec<usize>> = net.nodes.iter().map(|nd| nd.proj.v0.clone()).collect();
            let e0 = linalg::max_abs(&(&net.y - y_star));
            let node_err = |y: &DMatrix<f64>| -> Vec<f64> {
                owned
                    .iter()
                    .map(|rows| linalg::max_abs(&linalg::select_rows(&(y - y_star), rows)) / e0)
                    .collect()
            };
            let mut errors = vec![1.0];
            let mut node_errors = vec![node_err(&net.y)];
            let mut converged = false;
            for _ in 0..config.rounds {
                let log = net.round(Some(y_star));
                errors.push(log.error_inf.unwrap_or(f64::NAN) / e0);
                node_errors.push(node_err(&net.y));
                if log.change_inf <= config.tol {
                    converged = true;
                    break;
                }
            }
            runs.push(ConvergenceRun {
                seed,
                omega,
                alpha,
                fitted_rate: fitted_rate(&errors),
                errors,
                node_errors,
                converged,
            });
        }
    }
    Ok((runs, skipped))
}

/// Per-round, per-node relative errors of [`convergence_runs`]. Node `-1`
/// marks the global error.
pub fn experiment_convergence(config: &ExperimentConfig) -> Result<Table> {
    let header = [
        "seed",
        "omega",
        "round",
        "node",
        "rel_err_inf",
        "alpha",
        "alpha_pow_t",
        "fitted_rate",
    ];
    let mut table = Table::new(config, &header, &[]);
    let (runs, skipped) = convergence_runs(config)?;
    table.skipped = skipped;
    for run in &runs {
        for (t, e) in run.errors.iter().enumerate() {
            let base = [run.seed as f64, run.omega as f64, t as f64];
            let tail = [run.alpha, run.alpha.powi(t as i32), run.fitted_rate];
            let mut push = |node: f64, err: f64| {
                let mut row = base.to_vec();
                row.extend([node, err]);
                row.extend(tail);
                table.rows.push(row);
            };
            push(-1.0, *e);
            for (k, ne) in run.node_errors[t].iter().enumerate() {
                push(k as f64, *ne);
            }
        }
    }
    Ok(table)
}

/// Single-round error summary for one stiffness level and `ω`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainDecayPoint {
    pub stiffness: f64,
    pub omega: usize,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

/// On chains of each stiffness, runs one round from `ŷ = 0` per `ω` and
/// summarizes, over nodes and seeds, the error of each node's total
/// sensitivity block relative to the largest entry of the reference block.
pub fn chain_decay_points(
    config: &ExperimentConfig,
) -> Result<(Vec<ChainDecayPoint>, Vec<String>)> {
    config.validate()?;
    let mut errs: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::new(); config.sweep.len()]; config.stiffness.len()];
    let mut skipped = Vec::new();
    for (si, &stiff) in config.stiffness.iter().enumerate() {
        for &seed in &config.seeds {
            let problem = generate_chain(config.horizon, config.n, stiff, seed)?;
            let solution = match solve(&problem, &opts(config)) {
                Ok(s) => s,
                Err(e) if e.is_numerical() => {
                    skipped.push(format!("stiffness {stiff} seed {seed}: {e}"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let ljs = localdiff::local_jacobians(&problem, &solution, true)?;
            let reference = coupling::decentralized_jacobian(&problem, &solution, true)?;
            let zero = DMatrix::zeros(problem.n_coupling(), problem.theta_dim());
            for (wi, &w) in config.sweep.iter().enumerate() {
                let mut net = distnet::setup(&problem, &solution, &ljs, w as usize, seed)?;
                net.reset(&zero);
                for _ in 0..config.rounds.max(1) {
                    net.round(None);
                }
                let approx = total_jacobian(&problem, &ljs, &net.y);
                for (a, r) in approx.blocks.iter().zip(&reference.jacobian.blocks) {
                    let scale = linalg::max_abs(r).max(f64::MIN_POSITIVE);
                    errs[si][wi].push(linalg::max_abs(&(a - r)) / scale);
                }
            }
        }
    }
    let mut points = Vec::new();
    for (si, &stiffness) in config.stiffness.iter().enumerate() {
        for (wi, &w) in config.sweep.iter().enumerate() {
            let e = &errs[si][wi];
            if e.is_empty() {
                continue;
            }
            points.push(ChainDecayPoint {
                stiffness,
                omega: w as usize,
                median: percentile(e, 0.5),
                p10: percentile(e, 0.1),
                p90: percentile(e, 0.9),
            });
        }
    }
    Ok((points, skipped))
}

/// Slope of `ln(median error)` against `ω`, skipping points below
/// [`RATE_FIT_FLOOR`].
pub fn chain_decay_slope(points: &[ChainDecayPoint], stiffness: f64) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.stiffness == stiffness && p.median > RATE_FIT_FLOOR)
        .map(|p| (p.omega as f64, p.median.ln()))
        .unzip();
    fit_slope(&x, &y)
}

pub fn experiment_chain_decay(config: &ExperimentConfig) -> Result<Table> {
    let header = [
        "stiffness",
        "omega",
        "median_err",
        "p10_err",
        "p90_err",
        "fitted_slope",
    ];
    let mut table = Table::new(config, &header, &[]);
    let (points, skipped) = chain_decay_points(config)?;
    table.skipped = skipped;
    for p in &points {
        table.rows.push(vec![
            p.stiffness,
            p.omega as f64,
            p.median,
            p.p10,
            p.p90,
            chain_decay_slope(&points, p.stiffness),
        ]);
    }
    Ok(table)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Table> {
    match config.kind {
        ExperimentKind::ScalingN => experiment_scaling_n(config),
        ExperimentKind::ScalingRho => experiment_scaling_rho(config),
        ExperimentKind::Convergence => experiment_convergence(config),
        ExperimentKind::ChainDecay => experiment_chain_decay(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_hash() {
        for kind in [
            ExperimentKind::ScalingN,
            ExperimentKind::ScalingRho,
            ExperimentKind::Convergence,
            ExperimentKind::ChainDecay,
        ] {
            let c = ExperimentConfig::default_for(kind);
            c.validate().unwrap();
            let back: ExperimentConfig =
                serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
            assert_eq!(c.hash().len(), 64);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = ExperimentConfig::scaling_n();
        c.sweep.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::convergence();
        c.repetitions = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::chain_decay();
        c.sweep = vec![0.5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn fits() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.5)).collect();
        assert!((fit_loglog_slope(&x, &y) + 2.5).abs() < 1e-12);
        let e: Vec<f64> = (0..10).map(|t| 0.3f64.powi(t)).collect();
        assert!((fitted_rate(&e) - 0.3).abs() < 1e-12);
        assert_eq!(fitted_rate(&[1.0, 0.0]), 0.0);
        assert!((percentile(&[3.0, 1.0, 2.0], 0.5) - 2.0).abs() < 1e-15);
        assert!((percentile(&[0.0, 10.0], 0.1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let mut c = ExperimentConfig::scaling_n();
        c.sweep = vec![1.0, 3.0];
        c.repetitions = 1;
        let t = experiment_scaling_n(&c).unwrap();
        assert_eq!(t.rows.len(), 2);
        let csv = t.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), format!("# config-hash {}", c.hash()));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("N,n,l,lambda,rho,t_central_s"));
        assert_eq!(lines.count(), 2);
    }
}

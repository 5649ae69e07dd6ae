use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Implicit differentiation of constraint-coupled quadratic programs.
#[derive(Debug, Parser)]
#[command(name = "ccdiff", version)]
struct Cli {
    /// Random seed for generators and distributed starts.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Solver KKT tolerance.
    #[arg(long, global = true, default_value_t = ccdiff::solver::DEFAULT_TOL)]
    tol: f64,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(short = 'o', long = "output", global = true)]
    output: Option<PathBuf>,
    /// Compute local Jacobians in parallel and report that timing separately.
    #[arg(long, global = true)]
    parallel_local: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a problem instance as JSON.
    Gen(GenArgs),
    /// Solve a problem and check the differentiability assumptions.
    Solve { problem: PathBuf },
    /// Total Jacobian of the primal solution.
    Diff {
        problem: PathBuf,
        solution: PathBuf,
        #[arg(long, value_enum, default_value_t = DiffMode::Decentralized)]
        mode: DiffMode,
    },
    /// Bipartite constraint graph, neighborhoods and bandwidths.
    Graph {
        problem: PathBuf,
        #[arg(long, default_value_t = 1)]
        omega: usize,
        /// Solution file; adds coupling-system bandwidths.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Run the distributed scheme on a simulated network.
    DistDiff(DistArgs),
    /// Speedup against the number of subproblems at fixed coupling.
    BenchScaling(BenchArgs),
    /// Speedup against the coupling ratio.
    BenchRho(BenchArgs),
    /// Distributed convergence for a sweep of overlap radii.
    BenchConvergence(BenchArgs),
    /// One-round error against overlap radius on time-coupled chains.
    BenchChain(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    Chain,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StructureArg {
    Dense,
    Chain,
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DiffMode {
    Central,
    Decentralized,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExponentArg {
    Final,
    Draft,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = Kind::Random)]
    kind: Kind,
    /// Number of subproblems (random).
    #[arg(long, default_value_t = 4)]
    n_sub: usize,
    /// Variables per subproblem.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Local inequalities per subproblem (random).
    #[arg(long, default_value_t = 2)]
    l: usize,
    /// Local equalities per subproblem (random).
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Coupling equality rows (random).
    #[arg(long, default_value_t = 2)]
    lambda_h: usize,
    /// Coupling inequality rows (random).
    #[arg(long, default_value_t = 1)]
    lambda_f: usize,
    #[arg(long, value_enum, default_value_t = StructureArg::Dense)]
    structure: StructureArg,
    /// Row window for banded structure.
    #[arg(long, default_value_t = 1)]
    bandwidth: usize,
    #[arg(long, default_value_t = ccdiff::model::DEFAULT_CURVATURE_FLOOR)]
    curvature_floor: f64,
    /// Coupling coefficient scale off each row's first subproblem (random).
    #[arg(long, default_value_t = 1.0)]
    neighbor_weight: f64,
    /// Chain length (chain).
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    /// Coupling stiffness in (0, 1] (chain).
    #[arg(long, default_value_t = 0.5)]
    buffer: f64,
    /// Unit-length balance-row vectors (chain).
    #[arg(long)]
    unit_carry: bool,
    /// Drop the local inequalities of every step (chain).
    #[arg(long)]
    no_local_inequalities: bool,
    /// Skip resampling of degenerate random instances.
    #[arg(long)]
    raw: bool,
}

#[derive(Debug, Args)]
struct DistArgs {
    problem: PathBuf,
    solution: PathBuf,
    #[arg(long, default_value_t = 1)]
    omega: usize,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    /// Stop once successive iterates differ by at most this much.
    #[arg(long, default_value_t = 1e-10)]
    round_tol: f64,
    #[arg(long, value_enum, default_value_t = ExponentArg::Final)]
    exponent: ExponentArg,
    /// Also write the per-round table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    n_sub: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Number of coupling rows (scaling and convergence).
    #[arg(long, alias = "fixed-lambda")]
    lambda: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Comma-separated chain stiffness levels.
    #[arg(long, value_delimiter = ',')]
    stiffness: Option<Vec<f64>>,
    #[arg(long)]
    horizon: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

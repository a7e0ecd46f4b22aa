use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use ebif::control::{
    closed_loop_simulate, default_stabilizer, steer_optimize, StabilizerConfig, SteerOptions, SteeringProblem,
    DEFAULT_GAIN_FLOOR,
};
use ebif::engine::{
    default_sample_points, ebif_run, extract_bilinear, verify_embedding, BilinearRealization, ConstantMode, EbifStatus,
    EmbeddingVerdict, NonlinearSystem,
};
use ebif::io::{
    load_schedule, write_closed_loop_csv, write_json, write_reach_csv, write_trajectory_pair_csv, RealizationFile,
    SteeringReport, SystemFile,
};
use ebif::reach::{adjoint_chain_for, commutation_check, reach_sample, DEFAULT_RANK_TOL};
use ebif::sim::{
    consistency_error, project_trajectory, simulate_nonlinear_rk4, simulate_piecewise_on_grid, ControlSchedule,
};
use ebif::Execution;

#[derive(Parser)]
#[command(name = "ebif", version, about = "Exact bilinearization of control-affine systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Lie-derivation chain and write the bilinear realization.
    Bilinearize(BilinearizeArgs),
    /// Simulate the nonlinear system and its bilinear realization side by side.
    Simulate(SimulateArgs),
    /// Sample the reachable set through the bilinear semigroup.
    Reach(ReachArgs),
    /// Closed-loop Lyapunov feedback designed on the bilinear realization.
    Stabilize(StabilizeArgs),
    /// Optimal steering with piecewise-constant controls.
    Steer(SteerArgs),
}

#[derive(Args)]
struct ChainArgs {
    /// Comma-separated seed functions (defaults to the file's gamma0, then to x1..xn).
    #[arg(long, value_delimiter = ',')]
    gamma0: Option<Vec<String>>,
    #[arg(long, default_value_t = ebif::engine::DEFAULT_MAX_DIM)]
    max_dim: usize,
    #[arg(long, default_value_t = ebif::engine::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Constant handling (defaults to the file's choice, then to offset).
    #[arg(long)]
    constants: Option<ConstantMode>,
}

#[derive(Args)]
struct SourceArgs {
    system: PathBuf,
    /// Realization file; computed from the system when absent.
    #[arg(long)]
    realization: Option<PathBuf>,
    #[command(flatten)]
    chain: ChainArgs,
}

#[derive(Args)]
struct BilinearizeArgs {
    system: PathBuf,
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Control schedule JSON; zero control over --t-final when absent.
    #[arg(long)]
    control: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReachArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    coeff_box: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    sequential: bool,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StabilizeArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Initial state (defaults to 0.125 in every coordinate).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    /// Equilibrium used to report the final error.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x_e: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20.0)]
    t_final: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Diagonal gains K (comma-separated); overrides the default K = cI.
    #[arg(long, value_delimiter = ',')]
    gains: Option<Vec<f64>>,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SteerArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    target: Vec<f64>,
    #[arg(long = "T", default_value_t = 5.0)]
    horizon: f64,
    #[arg(long, default_value_t = 6)]
    segments: usize,
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Iteration limit per optimizer start.
    #[arg(long, default_value_t = 500)]
    opt_iter: usize,
    #[arg(long)]
    u_bound: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    sequential: bool,
    /// Schedule JSON output.
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes 1 and 2.
enum Failure {
    Input(String),
    Cap(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Cap(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Cap(m) => f.write_str(m),
        }
    }
}

fn input<E: fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    // usage errors are input errors (exit 1); exit 2 is reserved for cap overruns
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Bilinearize(a) => bilinearize(a),
        Command::Simulate(a) => simulate(a),
        Command::Reach(a) => reach(a),
        Command::Stabilize(a) => stabilize(a),
        Command::Steer(a) => steer(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}

fn load_system(path: &Path) -> Result<(SystemFile, NonlinearSystem), Failure> {
    let file = SystemFile::load(path).map_err(input)?;
    let sys = file.to_system().map_err(input)?;
    Ok((file, sys))
}

fn chain_config(file: &SystemFile, chain: &ChainArgs) -> Result<ebif::engine::EbifConfig, Failure> {
    let mode = chain.constants.or(file.constants).unwrap_or_default();
    let cfg = match &chain.gamma0 {
        Some(gens) => {
            let mut f = file.clone();
            f.gamma0 = Some(gens.clone());
            f.config(mode)
        }
        None => file.config(mode),
    }
    .map_err(input)?;
    Ok(cfg.with_caps(chain.max_dim, chain.max_iter))
}

fn cap_message(status: EbifStatus, dims: &[usize]) -> Failure {
    Failure::Cap(format!("chain did not stabilize ({:?}); dims {:?}", status, dims))
}

fn compute_realization(file: &SystemFile, sys: &NonlinearSystem, chain: &ChainArgs) -> Result<BilinearRealization, Failure> {
    let cfg = chain_config(file, chain)?;
    let out = ebif_run(sys, &cfg).map_err(input)?;
    if out.status != EbifStatus::Stabilized {
        return Err(cap_message(out.status, &out.chain_dims));
    }
    extract_bilinear(sys, &out, &cfg).map_err(input)
}

fn load_source(src: &SourceArgs) -> Result<(NonlinearSystem, BilinearRealization), Failure> {
    let (file, sys) = load_system(&src.system)?;
    let real = match &src.realization {
        Some(p) => RealizationFile::load(p).map_err(input)?,
        None => compute_realization(&file, &sys, &src.chain)?,
    };
    if real.n() != sys.n || real.m() != sys.m() {
        return Err(Failure::Input(format!(
            "realization has n = {}, m = {} but the system has n = {}, m = {}",
            real.n(),
            real.m(),
            sys.n,
            sys.m()
        )));
    }
    Ok((sys, real))
}

fn check_len(what: &str, v: &[f64], n: usize) -> Outcome {
    if v.len() != n {
        return Err(Failure::Input(format!("{} has {} components, expected {}", what, v.len(), n)));
    }
    Ok(())
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn bilinearize(a: BilinearizeArgs) -> Outcome {
    let (file, sys) = load_system(&a.system)?;
    let cfg = chain_config(&file, &a.chain)?;
    let out = ebif_run(&sys, &cfg).map_err(input)?;
    println!("system: {}", sys.name);
    println!("status: {:?}", out.status);
    println!("chain dims: {:?}", out.chain_dims);
    if out.status != EbifStatus::Stabilized {
        return Err(cap_message(out.status, &out.chain_dims));
    }
    let real = extract_bilinear(&sys, &out, &cfg).map_err(input)?;
    if let Some(path) = &a.output {
        RealizationFile::save(&real, path).map_err(input)?;
    }
    let report = verify_embedding(&real, &default_sample_points(sys.n, 25, 42));
    println!("kStar: {}", real.k_star().map_or("-".into(), |k| k.to_string()));
    println!("r: {}", real.r());
    println!("constants: {}", real.constant_mode());
    println!(
        "embedding: {}",
        match report.verdict {
            EmbeddingVerdict::Embedding => "embedding",
            EmbeddingVerdict::NotVerified => "not verified",
        }
    );
    println!("basis: {}", real.psi().iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", "));
    if let Some(path) = &a.output {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let (sys, real) = load_source(&a.source)?;
    check_len("x0", &a.x0, sys.n)?;
    let sched = match (&a.control, a.t_final) {
        (Some(p), _) => load_schedule(p).map_err(input)?,
        (None, Some(t)) if t > 0.0 => ControlSchedule::constant(t, vec![0.0; sys.m()]).map_err(input)?,
        (None, Some(0.0)) => ControlSchedule::uniform(0.0, Vec::new()).map_err(input)?,
        _ => return Err(Failure::Input("need --control or a non-negative --t-final".into())),
    };
    let nl = simulate_nonlinear_rk4(&sys, &sched, &a.x0, a.dt).map_err(input)?;
    let lifted = simulate_piecewise_on_grid(&real, &sched, &a.x0, a.dt).map_err(input)?;
    let bl = project_trajectory(&real, &lifted).map_err(input)?;
    let err = consistency_error(&sys, &real, &sched, &a.x0, a.dt).map_err(input)?;
    println!("samples: {}", nl.len());
    println!("consistency error: {:.3e}", err);
    if let Some(path) = &a.output {
        write_trajectory_pair_csv(path, &nl, &bl).map_err(input)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn reach(a: ReachArgs) -> Outcome {
    let (sys, real) = load_source(&a.source)?;
    check_len("x0", &a.x0, sys.n)?;
    let span = adjoint_chain_for(&real, DEFAULT_RANK_TOL).map_err(input)?;
    let bs: Vec<_> = (0..real.m()).map(|i| real.augmented_b(i)).collect();
    let certified = commutation_check(&span, &bs);
    println!("dim h: {}", span.dim());
    println!("commutation hypothesis: {}", certified);
    let set = reach_sample(&real, &span, &a.x0, a.horizon, a.coeff_box, a.samples, a.seed, exec(a.sequential))
        .map_err(input)?;
    println!(
        "samples: {} ({})",
        set.samples.len(),
        if certified { "exact image" } else { "heuristic" }
    );
    if let Some(path) = &a.output {
        write_reach_csv(path, &set, span.dim(), sys.n).map_err(input)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn stabilize(a: StabilizeArgs) -> Outcome {
    let (sys, real) = load_source(&a.source)?;
    let x0 = a.x0.clone().unwrap_or_else(|| vec![0.125; sys.n]);
    check_len("x0", &x0, sys.n)?;
    if let Some(xe) = &a.x_e {
        check_len("x-e", xe, sys.n)?;
    }
    if sys.m() == 0 {
        return Err(Failure::Input("system has no control inputs".into()));
    }
    let choice = default_stabilizer(&real, a.epsilon, DEFAULT_GAIN_FLOOR).map_err(input)?;
    let cfg = match &a.gains {
        Some(g) => {
            check_len("gains", g, sys.m())?;
            let k = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(g));
            StabilizerConfig::new(choice.config.p.clone(), k, a.epsilon).map_err(input)?
        }
        None => choice.config.clone(),
    };
    println!(
        "P: {}",
        if choice.a_hurwitz { "Lyapunov solution (A Hurwitz)" } else { "identity (A not Hurwitz)" }
    );
    println!("gain bound: {:.6e}", choice.bound);
    println!("K diagonal: {:?}", cfg.k.diagonal().as_slice());
    let res = closed_loop_simulate(&sys, &real, &cfg, &x0, a.t_final, a.dt, a.x_e.as_deref()).map_err(input)?;
    println!("V non-increasing: {}", res.v_non_increasing);
    println!("final state: {:?}", res.trajectory.last_state());
    if let Some(e) = res.final_error {
        println!("final error: {:.6e}", e);
    }
    if let Some(path) = &a.output {
        write_closed_loop_csv(path, &res.trajectory, &res.controls, &res.v).map_err(input)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn steer(a: SteerArgs) -> Outcome {
    let (sys, real) = load_source(&a.source)?;
    check_len("x0", &a.x0, sys.n)?;
    check_len("target", &a.target, sys.n)?;
    let prob = SteeringProblem {
        x0: a.x0.clone(),
        target: a.target.clone(),
        horizon: a.horizon,
        segments: a.segments,
        u_bound: a.u_bound,
    };
    let opts = SteerOptions {
        starts: a.starts,
        max_iter: a.opt_iter,
        seed: a.seed,
        exec: exec(a.sequential),
        ..Default::default()
    };
    let t = Instant::now();
    let res = steer_optimize(&real, &prob, &opts).map_err(input)?;
    let wall = t.elapsed().as_secs_f64();
    println!("J*: {:.6e}", res.cost);
    println!("achieved: {:?}", res.endpoint);
    println!("iterations: {} (start {})", res.optimizer.iterations, res.optimizer.best_start);
    if res.optimizer.no_improvement {
        println!("warning: no start improved on its initial cost");
    }
    if let Some(path) = &a.output {
        write_json(path, &res.schedule).map_err(input)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &a.report {
        let report = SteeringReport {
            initial: prob.x0,
            target: prob.target,
            achieved: res.endpoint.clone(),
            cost: res.cost,
            iterations: res.optimizer.iterations,
            converged: res.optimizer.converged,
            best_start: res.optimizer.best_start,
            no_improvement: res.optimizer.no_improvement,
            wall_time: wall,
        };
        write_json(path, &report).map_err(input)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

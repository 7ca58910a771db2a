//! `sdot` — semi-discrete optimal transport on the unit square.
//!
//! Subcommands: `stipple` and `bluenoise` solve the two placement problems,
//! `add-point` re-solves a prior result with one extra site using both
//! outer solvers, and `check-derivatives` compares the analytic gradients
//! and Hessians against central finite differences.
//!
//! Exit codes: 0 success, 1 derivative-check failure, 2 bad input, 3 the
//! solver stopped short of tolerance (artifacts are still written).

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdot_cli::io::PointsFile;
use sdot_cli::{
    cmd_add_point, cmd_check_derivatives, parse_mode, run_problem, CheckConfig, CheckKind,
    CliError, RunConfig, RunSummary, SolverKind,
};
use sdot_core::{ProblemMode, SolverConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sdot",
    version,
    about = "Semi-discrete optimal transport: stippling and blue-noise sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Rayon thread count (0 = one per core). Results are bit-identical
    /// for any thread count: per-cell results reduce in a fixed order.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Place points so each carries the mass of its Voronoi cell
    Stipple(RunArgs),
    /// Place points with equal masses enforced through the dual potentials
    Bluenoise(RunArgs),
    /// Insert one seeded point into a prior result and re-solve with both solvers
    AddPoint(AddPointArgs),
    /// Compare analytic derivatives against central finite differences
    CheckDerivatives(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Lloyd,
    Newton,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Lloyd => SolverKind::Lloyd,
            SolverArg::Newton => SolverKind::Newton,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Stipple,
    Bluenoise,
}

impl From<ModeArg> for ProblemMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Stipple => ProblemMode::Stippling,
            ModeArg::Bluenoise => ProblemMode::BlueNoise,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Grayscale PNG/PGM density; omit for the uniform density
    #[arg(long)]
    input: Option<PathBuf>,
    /// Number of points
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Outer solver
    #[arg(long, value_enum, default_value_t = SolverArg::Newton)]
    solver: SolverArg,
    /// Seed for the initial positions (and the jitter, if requested)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Map luminance v to 1−v (put points where the image is dark)
    #[arg(long)]
    invert: bool,
    /// Treat pixels as corner samples of the bilinear grid instead of cell means
    #[arg(long)]
    pixels_are_corners: bool,
    /// ∞-norm target for the dual gradient
    #[arg(long, default_value_t = 1e-10)]
    dual_tol: f64,
    /// M-norm target for the outer gradient
    #[arg(long, default_value_t = 1e-9)]
    outer_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_outer: usize,
    /// Iteration budget of one dual solve
    #[arg(long, default_value_t = 100)]
    max_inner: usize,
    #[arg(long, default_value_t = 1e-4)]
    wolfe_c1: f64,
    /// Initial Levenberg–Marquardt σ (damping 1/σ)
    #[arg(long, default_value_t = 1.0)]
    lm_sigma0: f64,
    /// CG iteration cap; defaults to the system dimension 2n
    #[arg(long)]
    cg_max: Option<usize>,
    /// Relative residual target inside CG
    #[arg(long, default_value_t = 1e-10)]
    cg_tol: f64,
    /// Loosen the dual tolerance while the outer gradient is large
    #[arg(long)]
    inner_adaptive: bool,
    /// Nudge coincident sites apart instead of rejecting the input
    #[arg(long)]
    jitter_coincident: bool,
    /// Write an SVG rendering of the final configuration
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Fill the final Laguerre cells behind the dots in the SVG
    #[arg(long)]
    svg_cells: bool,
    /// Write the per-iteration trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Where to write points.json
    #[arg(long, default_value = "points.json")]
    points_out: PathBuf,
}

#[derive(Args)]
struct AddPointArgs {
    /// points.json from a prior run
    prior: PathBuf,
    /// Problem mode for the re-solve; defaults to the prior file's mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct CheckArgs {
    /// Size of the random configuration
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Check the two-site configuration with known closed forms instead
    #[arg(long)]
    two_point: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Grayscale PNG/PGM density; omit for the uniform density
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    pixels_are_corners: bool,
}

impl RunArgs {
    fn into_config(self, mode: ProblemMode) -> RunConfig {
        RunConfig {
            input: self.input,
            invert: self.invert,
            pixels_are_corners: self.pixels_are_corners,
            n: self.n,
            mode,
            solver_kind: self.solver.into(),
            seed: self.seed,
            jitter_coincident: self.jitter_coincident,
            solver: SolverConfig {
                mode,
                dual_tol: self.dual_tol,
                outer_tol: self.outer_tol,
                max_outer: self.max_outer,
                max_inner: self.max_inner,
                wolfe_c1: self.wolfe_c1,
                lm_sigma0: self.lm_sigma0,
                cg_max: self.cg_max,
                cg_tol: self.cg_tol,
                inner_adaptive: self.inner_adaptive,
            },
            points_out: self.points_out,
            trace_out: self.trace,
            svg_out: self.svg,
            svg_cells: self.svg_cells,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            std::process::exit(2);
        }
    }
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Stipple(args) => solve_and_report(args, ProblemMode::Stippling),
        Command::Bluenoise(args) => solve_and_report(args, ProblemMode::BlueNoise),
        Command::AddPoint(args) => add_point(args),
        Command::CheckDerivatives(args) => check_derivatives(args),
    }
}

fn print_summary(label: &str, summary: &RunSummary, cfg: &RunConfig) {
    let r = &summary.report;
    println!(
        "{label}: n={} {} ({}), {} outer iterations, objective {:.12e}, ‖∇G‖_M {:.3e}, {}",
        summary.points.n, cfg.mode, cfg.solver_kind, r.iterations, r.objective, r.grad_m_norm,
        r.termination
    );
}

fn solve_and_report(args: RunArgs, mode: ProblemMode) -> Result<i32, CliError> {
    let cfg = args.into_config(mode);
    let summary = run_problem(&cfg)?;
    print_summary("done", &summary, &cfg);
    println!("wrote {}", cfg.points_out.display());
    if let Some(p) = &cfg.trace_out {
        println!("wrote {}", p.display());
    }
    if let Some(p) = &cfg.svg_out {
        println!("wrote {}", p.display());
    }
    if summary.report.termination.is_converged() {
        Ok(0)
    } else {
        eprintln!(
            "solver stopped before reaching outer_tol ({}); artifacts written anyway",
            summary.report.termination
        );
        Ok(3)
    }
}

fn add_point(args: AddPointArgs) -> Result<i32, CliError> {
    let mode = match args.mode {
        Some(m) => m.into(),
        None => {
            let prior = PointsFile::load(&args.prior)?;
            parse_mode(&prior.mode).ok_or_else(|| {
                CliError::BadInput(format!("prior file has unknown mode {:?}", prior.mode))
            })?
        }
    };
    let prior_path = args.prior.clone();
    let cfg = args.run.into_config(mode);
    let outcome = cmd_add_point(&cfg, &prior_path)?;
    println!(
        "inserted point ({:.6}, {:.6}) into {}",
        outcome.inserted.x,
        outcome.inserted.y,
        prior_path.display()
    );
    let mut lloyd_cfg = cfg.clone();
    lloyd_cfg.solver_kind = SolverKind::Lloyd;
    let mut newton_cfg = cfg;
    newton_cfg.solver_kind = SolverKind::Newton;
    print_summary("lloyd", &outcome.lloyd, &lloyd_cfg);
    print_summary("newton", &outcome.newton, &newton_cfg);
    let both_ok = outcome.lloyd.report.termination.is_converged()
        && outcome.newton.report.termination.is_converged();
    Ok(if both_ok { 0 } else { 3 })
}

fn check_derivatives(args: CheckArgs) -> Result<i32, CliError> {
    let kind = if args.two_point {
        CheckKind::TwoPointSymmetric
    } else {
        CheckKind::Random { n: args.n }
    };
    let chk = CheckConfig {
        kind,
        seed: args.seed,
        step: args.step,
        input: args.input,
        invert: args.invert,
        pixels_are_corners: args.pixels_are_corners,
        ..CheckConfig::new(CheckKind::TwoPointSymmetric)
    };
    let outcome = cmd_check_derivatives(&chk)?;
    print!("{}", outcome.table);
    println!();
    for g in &outcome.groups {
        println!(
            "{:<12} scaled err {:>10.3e}  tol {:>7.1e}  {}",
            g.name,
            g.err,
            g.tol,
            if g.passed() { "ok" } else { "FAIL" }
        );
    }
    if outcome.passed() {
        println!("\nall derivative checks passed");
        Ok(0)
    } else {
        eprintln!("\nderivative check FAILED");
        Ok(1)
    }
}

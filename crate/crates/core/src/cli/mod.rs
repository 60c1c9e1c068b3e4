//! Command-line front end: `train`, `eval`, `scale-bench`, `oracle`, `check`.

mod check;
mod config;
mod scale;

pub use check::{format_table, run_checks, CheckOptions, CheckResult};
pub use config::{ProblemChoice, RunConfig};
pub use scale::{expert_width, loglog_slope, scale_bench, write_scale_csv, MemoryProbe, NoProbe, ScaleRow, SCALE_COLUMNS};

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::pde::{helmholtz_reference, ProblemSpec};
use crate::trainer::{
    build_density, build_model, evaluate, load_checkpoint, save_checkpoint, train, write_density_csv,
    write_error_csv, write_report_csv, Reference,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "pinn-balls", version, about = "Sparse ensembles of local PINNs")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file for `oracle`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write zeros instead of wall-clock and memory figures, so outputs are
    /// reproducible byte for byte.
    #[arg(long, global = true)]
    pub no_timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes report.csv, model.ckpt and density.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint against the reference; writes error.csv.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One LM update per (parameter count, ball count); writes scale.csv.
    ScaleBench {
        #[arg(long, value_delimiter = ',', default_value = "2000,4000,8000")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,50")]
        balls: Vec<usize>,
    },
    /// Generate or reuse a cached reference grid.
    Oracle {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 129)]
        resolution: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the invariant suite and print a pass/fail table.
    Check {
        /// Negative control for the partition-of-unity check.
        #[arg(long, hide = true)]
        corrupt_gate: bool,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, probe: &dyn MemoryProbe) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let outcome = match &cli.command {
        Command::Train { config } => cmd_train(&cli, config),
        Command::Eval { config, checkpoint } => cmd_eval(&cli, config, checkpoint),
        Command::ScaleBench { sizes, balls } => cmd_scale_bench(&cli, sizes, balls, probe),
        Command::Oracle { problem, resolution, config } => cmd_oracle(&cli, problem, *resolution, config.as_deref()),
        Command::Check { corrupt_gate } => cmd_check(&cli, *corrupt_gate),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => EXIT_CONFIG,
                Error::TrainingAborted { .. } | Error::UncoveredPoint { .. } | Error::SolverStall { .. } => EXIT_ABORT,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config { line: 0, message: format!("{}: {io}", path.display()) },
        other => other,
    })?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if cli.no_timing {
        cfg.train.record_wall_time = false;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn reference_for(problem: &ProblemSpec, n: usize) -> Result<Reference> {
    let (points, values) = problem.reference_grid(n)?;
    Ok(Reference { points, values })
}

fn cmd_train(cli: &Cli, path: &Path) -> Result<i32> {
    let cfg = load_config(cli, path)?;
    let problem = cfg.problem_spec()?;
    let mut model = build_model(&problem, cfg.n_balls, cfg.mlp_spec()?, cfg.coverage_factor, cfg.train.seed)?;
    let mut density = build_density(&problem, &model, &cfg.train)?;
    let reference = reference_for(&problem, cfg.eval_grid)?;
    let report = train(&problem, &mut model, &mut density, &cfg.train, Some(&reference))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_report_csv(&cfg.out_dir.join("report.csv"), &report.records)?;
    write_density_csv(&cfg.out_dir.join("density.csv"), &report.density)?;
    save_checkpoint(&model, &cfg.out_dir.join("model.ckpt"))?;
    if let Some(last) = report.records.last() {
        println!(
            "iterations {} loss {:.16e} rel_l2 {:.16e}",
            report.records.len(),
            last.loss,
            last.rel_l2.unwrap_or(f64::NAN)
        );
    }
    Ok(EXIT_OK)
}

fn cmd_eval(cli: &Cli, config: &Path, checkpoint: &Path) -> Result<i32> {
    let cfg = load_config(cli, config)?;
    let problem = cfg.problem_spec()?;
    let model = load_checkpoint(checkpoint)?;
    let reference = reference_for(&problem, cfg.eval_grid)?;
    let (rel, pred) = evaluate(&model, &reference)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_error_csv(&cfg.out_dir.join("error.csv"), problem.axis_names(), &reference, &pred)?;
    println!("rel_l2 {rel:.16e}");
    Ok(EXIT_OK)
}

fn cmd_scale_bench(cli: &Cli, sizes: &[usize], balls: &[usize], probe: &dyn MemoryProbe) -> Result<i32> {
    let cases: Vec<(usize, usize)> = sizes.iter().flat_map(|&s| balls.iter().map(move |&m| (s, m))).collect();
    let rows = scale_bench(&cases, cli.seed.unwrap_or(0), probe);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    write_scale_csv(&out.join("scale.csv"), &rows, !cli.no_timing)?;
    for r in &rows {
        println!("params {:>7} balls {:>4} nnz_j {:>7.3}% {}", r.n_params, r.n_balls, 100.0 * r.nnz_frac_j, r.status);
    }
    Ok(EXIT_OK)
}

fn oracle_problem(name: &str, config: Option<&Path>, cli: &Cli) -> Result<ProblemSpec> {
    if let Some(path) = config {
        return load_config(cli, path)?.problem_spec();
    }
    let choice = match name {
        "helmholtz" => ProblemChoice::Helmholtz { kx: 4.0, ky: 1.0 },
        "burgers" => ProblemChoice::Burgers { nu: 0.01 / std::f64::consts::PI },
        "poisson" => ProblemChoice::Poisson,
        "supervised" => ProblemChoice::Supervised,
        other => return Err(Error::Config { line: 0, message: format!("unknown problem `{other}`") }),
    };
    RunConfig { problem: choice, ..Default::default() }.problem_spec()
}

/// Ratio of successive sup-norm differences under grid doubling; about 4
/// for a second-order scheme.
pub fn helmholtz_self_convergence(problem: &ProblemSpec, cells: usize) -> Result<f64> {
    let u1 = helmholtz_reference(problem, cells)?;
    let u2 = helmholtz_reference(problem, 2 * cells)?;
    let u4 = helmholtz_reference(problem, 4 * cells)?;
    let (mut d12, mut d24) = (0.0f64, 0.0f64);
    for i in 0..=cells {
        for j in 0..=cells {
            d12 = d12.max((u1.node(i, j) - u2.node(2 * i, 2 * j)).abs());
            d24 = d24.max((u2.node(2 * i, 2 * j) - u4.node(4 * i, 4 * j)).abs());
        }
    }
    Ok(d12 / d24)
}

fn cmd_oracle(cli: &Cli, name: &str, n: usize, config: Option<&Path>) -> Result<i32> {
    let problem = oracle_problem(name, config, cli)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("oracle"));
    let (_, values, hit) = match problem.cached_reference_grid(n, &dir) {
        Ok(v) => v,
        Err(e @ (Error::QuadratureFailure { .. } | Error::SingularSystem(_))) => {
            eprintln!("oracle failure: {e}");
            return Ok(EXIT_ORACLE);
        }
        Err(e) => return Err(e),
    };
    println!("{} grid {n}x{n} in {} ({})", problem.kind.name(), dir.display(), if hit { "cache hit" } else { "written" });
    let ok = match problem.kind {
        crate::pde::ProblemKind::Helmholtz { .. } => {
            let ratio = helmholtz_self_convergence(&problem, 64)?;
            println!("self-convergence ratio {ratio:.6}");
            (3.5..4.5).contains(&ratio)
        }
        crate::pde::ProblemKind::Burgers { .. } => {
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            println!("max |u| {max:.16e}");
            max <= 1.0 + 1e-12
        }
        _ => true,
    };
    Ok(if ok { EXIT_OK } else { EXIT_ORACLE })
}

fn cmd_check(cli: &Cli, corrupt_gate: bool) -> Result<i32> {
    let results = run_checks(cli.seed.unwrap_or(0), CheckOptions { corrupt_gate });
    print!("{}", format_table(&results));
    Ok(if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_FAILURE })
}

use std::path::PathBuf;
use std::process::ExitCode;

use anchored_eq::diagnostics::{cancellation_check, density_ratio_max, value_bound_check};
use anchored_eq::experiments::{
    load_experiment, run_rate_sweep, run_single, thread_pool, write_sweep, Algorithm, Experiment,
    SingleOptions,
};
use anchored_eq::game::JointPolicy;
use anchored_eq::gane::solve_regularized_ne;
use anchored_eq::io::{self, load_game};
use anchored_eq::offline::{anchoring_constant, concentrability, sample_dataset};
use anchored_eq::regression::fit_model;
use anchored_eq::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status of a run whose equilibrium solve did not converge under `--strict`.
const EXIT_UNCONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "anchored-eq",
    version,
    about = "Offline learning of KL-anchored equilibria"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit rewards and solve the regularized Nash equilibrium for one dataset.
    RunGane(RunArgs),
    /// Fit rewards and run anchored mirror-descent self-play for one dataset.
    RunGamd(RunArgs),
    /// Sweep sample sizes and seeds, then fit log-log rates.
    RateSweep(SweepArgs),
    /// Audit the error decomposition of a Nash-pipeline solve.
    Diagnose(RunArgs),
    /// Print the concentrability and anchoring constants of a game.
    Coverage(SourceArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "game", required_unless_present = "game")]
    config: Option<PathBuf>,
    /// Game file, run with default experiment settings.
    #[arg(long)]
    game: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Sample size; defaults to the largest configured one.
    #[arg(long)]
    n: Option<usize>,
    /// Seed index within the sample size.
    #[arg(long, default_value_t = 0)]
    seed_index: usize,
    /// Read the dataset from a CSV instead of sampling it.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the sampled dataset.
    #[arg(long)]
    dump_data: bool,
    /// Write per-iteration trace and objectives (mirror descent only).
    #[arg(long)]
    trace: bool,
    /// Exit nonzero if the equilibrium solve does not converge.
    #[arg(long)]
    strict: bool,
    #[arg(long, env = "ANCHORED_EQ_THREADS")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Gane,
    Gamd,
    Both,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory; defaults to the config's `out`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    algorithm: Which,
    /// Exit nonzero if any cell's equilibrium solve did not converge.
    #[arg(long)]
    strict: bool,
    #[arg(long, env = "ANCHORED_EQ_THREADS")]
    threads: Option<usize>,
}

fn load(source: &SourceArgs) -> Result<Experiment> {
    let mut exp = match (&source.config, &source.game) {
        (Some(c), _) => load_experiment(c)?,
        (None, Some(g)) => Experiment::from_game(load_game(g)?),
        (None, None) => return Err(Error::InvalidArgument("pass --config or --game".into())),
    };
    if let Some(seed) = source.seed {
        exp.master_seed = seed;
    }
    Ok(exp)
}

fn single_options(args: &RunArgs, exp: &Experiment) -> Result<SingleOptions> {
    let dataset = match &args.data {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            Some(io::read_dataset(
                file,
                &exp.game.spec,
                &path.display().to_string(),
            )?)
        }
        None => None,
    };
    Ok(SingleOptions {
        n: args.n,
        seed_index: args.seed_index,
        dataset,
        write_trace: args.trace,
        write_dataset: args.dump_data,
    })
}

fn run(args: &RunArgs, algorithm: Algorithm) -> Result<ExitCode> {
    let exp = load(&args.source)?;
    let opts = single_options(args, &exp)?;
    let pool = thread_pool(args.threads)?;
    let res = pool.install(|| run_single(&exp, algorithm, &opts, &args.out))?;
    println!("{} true gap: {:.6e}", algorithm.name(), res.gap);
    for f in &res.files {
        println!("wrote {}", f.display());
    }
    if !res.converged {
        eprintln!("warning: equilibrium solve did not converge");
        if args.strict {
            return Ok(ExitCode::from(EXIT_UNCONVERGED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &SweepArgs) -> Result<ExitCode> {
    let exp = load(&args.source)?;
    exp.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| exp.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let pool = thread_pool(args.threads)?;
    let algorithms: &[Algorithm] = match args.algorithm {
        Which::Gane => &[Algorithm::Gane],
        Which::Gamd => &[Algorithm::Gamd],
        Which::Both => &[Algorithm::Gane, Algorithm::Gamd],
    };
    let mut results = Vec::new();
    for &a in algorithms {
        let r = run_rate_sweep(&exp, a, &pool)?;
        for w in &r.warnings {
            eprintln!("warning ({}): {w}", a.name());
        }
        println!("{}:", a.name());
        for p in &r.points {
            println!(
                "  n = {:>7}  mean gap = {:.6e}  se = {:.2e}  seeds = {}",
                p.n,
                p.mean_gap,
                p.std_err,
                p.gaps.len()
            );
        }
        if let Some(f) = r.fit {
            println!("  slope = {:.4}  intercept = {:.4}", f.slope, f.intercept);
        }
        results.push(r);
    }
    if let [g, m] = results.as_slice() {
        if let (Some(fg), Some(fm)) = (g.fit, m.fit) {
            let verdict = if fg.slope < fm.slope {
                "steeper"
            } else {
                "not steeper"
            };
            println!(
                "Nash-pipeline slope {:.4} is {verdict} than mirror-descent slope {:.4} (informational)",
                fg.slope, fm.slope
            );
        }
    }
    write_sweep(&out, &results)?;
    println!("wrote {}", out.display());
    let flagged = results
        .iter()
        .flat_map(|r| &r.points)
        .any(|p| p.flagged > 0);
    if flagged && args.strict {
        return Ok(ExitCode::from(EXIT_UNCONVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn diagnose(args: &RunArgs) -> Result<ExitCode> {
    let exp = load(&args.source)?;
    let spec = &exp.game.spec;
    let data = match single_options(args, &exp)?.dataset {
        Some(d) => d,
        None => {
            let n = args.n.or(exp.sample_sizes.last().copied()).unwrap_or(0);
            let seed = anchored_eq::experiments::cell_seed(exp.master_seed, n, args.seed_index);
            sample_dataset(spec, &exp.game.behavior, n, exp.noise_sigma, seed)?
        }
    };
    let pool = thread_pool(args.threads)?;
    let (report, model) = pool.install(|| -> Result<_> {
        let model = fit_model(&data, &exp.estimator)?;
        let report = solve_regularized_ne(&model, spec.reference(), spec.eta(), &exp.solver)?;
        Ok((report, model))
    })?;
    let check = cancellation_check(&report, &model, spec)?;
    if let Some(w) = &check.warning {
        eprintln!("warning: {w}");
    }
    let identity = check
        .rows
        .iter()
        .map(|r| r.identity_error())
        .fold(0.0, f64::max);
    println!("records: {}", data.len());
    println!(
        "solver residual: {:.3e} after {} sweeps",
        report.residual, report.iterations
    );
    println!("decomposition identity error: {identity:.3e}");
    println!(
        "cancellation: min slack {:.3e} (floor {:.3e}) {}",
        check.min_slack,
        check.floor,
        if check.holds() { "holds" } else { "VIOLATED" }
    );
    let ratios = density_ratio_max(&report.policy, spec.reference())?;
    let bound = spec.eta().exp();
    for (i, r) in ratios.iter().enumerate() {
        println!(
            "player {}: max density ratio {r:.6} (bound {bound:.6})",
            i + 1
        );
    }
    let profiles: [&dyn JointPolicy; 2] = [&report.policy, spec.reference()];
    let range = value_bound_check(spec.rewards(), spec.reference(), spec.eta(), &profiles)?;
    println!(
        "best-response values in [{:.6}, {:.6}]",
        range.min, range.max
    );

    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("diagnostics.csv");
    io::write_diagnostics(
        std::io::BufWriter::new(std::fs::File::create(&path)?),
        &check.rows,
    )?;
    println!("wrote {}", path.display());
    if (!report.converged || !check.holds()) && args.strict {
        return Ok(ExitCode::from(EXIT_UNCONVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn coverage(args: &SourceArgs) -> Result<ExitCode> {
    let exp = load(args)?;
    let spec = &exp.game.spec;
    let c = concentrability(spec, &exp.game.behavior);
    let lambda = anchoring_constant(spec.eta(), spec.num_players());
    println!("C_uni = {}", io::fmt_f64(c));
    println!("Lambda = {}", io::fmt_f64(lambda));
    if !c.is_finite() {
        eprintln!("warning: behavior distribution misses some reference-anchored deviations");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunGane(a) => run(a, Algorithm::Gane),
        Command::RunGamd(a) => run(a, Algorithm::Gamd),
        Command::RateSweep(a) => sweep(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Coverage(a) => coverage(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

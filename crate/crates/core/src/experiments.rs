//! Configuration-driven runs and statistical-rate sweeps.
//!
//! A sweep evaluates the true exploitability of each pipeline's output over a
//! grid of sample sizes and seeds, then fits `ln(mean gap)` against `ln(n)`.
//! Each `(n, seed_index)` cell gets its own dataset seed derived from the
//! master seed, so the set of cells alone determines every number written;
//! thread count and scheduling do not.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Deserialize;

use crate::diagnostics::gap_terms_report;
use crate::error::{Error, Result};
use crate::gamd::{run_gamd, TraceMode};
use crate::gane::{run_gane, SolverSettings};
use crate::io::{self, fmt_f64, GameBundle};
use crate::offline::{concentrability, sample_dataset, DEFAULT_NOISE_SIGMA};
use crate::regression::{fit_model, Estimator};
use crate::values::{cce_gap, ne_gap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Gane,
    Gamd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gane => "gane",
            Self::Gamd => "gamd",
        }
    }
}

/// Number of self-play iterations as a function of the sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationRule {
    Fixed(usize),
    /// `T = ceil(c * sqrt(n))`.
    SqrtN(f64),
}

impl IterationRule {
    pub fn iterations(self, n: usize) -> usize {
        match self {
            Self::Fixed(t) => t.max(1),
            Self::SqrtN(c) => ((c * (n as f64).sqrt()).ceil() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    #[default]
    Tabular,
    FiniteClass,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    game: PathBuf,
    #[serde(default)]
    estimator: EstimatorKind,
    class_file: Option<PathBuf>,
    #[serde(default = "default_sigma")]
    noise_sigma: f64,
    sample_sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    seeds_per_point: usize,
    #[serde(default)]
    master_seed: u64,
    out: Option<PathBuf>,
    #[serde(default)]
    gamd: GamdSection,
    #[serde(default)]
    solver: SolverSection,
}

fn default_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

fn default_seeds() -> usize {
    50
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GamdSection {
    #[serde(default = "default_rule")]
    rule: String,
    #[serde(default = "default_c")]
    c: f64,
    #[serde(default = "default_iterations")]
    iterations: usize,
}

impl Default for GamdSection {
    fn default() -> Self {
        Self {
            rule: default_rule(),
            c: default_c(),
            iterations: default_iterations(),
        }
    }
}

fn default_rule() -> String {
    "sqrt".into()
}

fn default_c() -> f64 {
    4.0
}

fn default_iterations() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_damping")]
    damping: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            damping: default_damping(),
            max_iter: default_max_iter(),
        }
    }
}

fn default_tol() -> f64 {
    SolverSettings::default().tol
}

fn default_damping() -> f64 {
    SolverSettings::default().damping
}

fn default_max_iter() -> usize {
    SolverSettings::default().max_iter
}

/// A fully resolved experiment: loaded game, estimator, and knobs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub game: GameBundle,
    pub estimator: Estimator,
    pub noise_sigma: f64,
    pub sample_sizes: Vec<usize>,
    pub seeds_per_point: usize,
    pub master_seed: u64,
    pub iteration_rule: IterationRule,
    pub solver: SolverSettings,
    pub out: Option<PathBuf>,
}

impl Experiment {
    /// Default settings around a loaded game: tabular regression, one
    /// sample size of 1024, and the default solver and iteration rule.
    pub fn from_game(game: GameBundle) -> Self {
        Self {
            game,
            estimator: Estimator::Tabular,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            sample_sizes: vec![1024],
            seeds_per_point: 1,
            master_seed: 0,
            iteration_rule: IterationRule::SqrtN(default_c()),
            solver: SolverSettings::default(),
            out: None,
        }
    }

    /// Checks the sweep invariants: at least two strictly increasing sample
    /// sizes and at least one seed per point.
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "at least two sample sizes are needed for a slope fit".into(),
            ));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "sample sizes must be strictly increasing".into(),
            ));
        }
        if self.seeds_per_point == 0 {
            return Err(Error::InvalidArgument(
                "seeds_per_point must be at least 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise_sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Loads an experiment config; relative paths resolve against its directory.
pub fn load_experiment(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_experiment(&text, &path.display().to_string(), base)
}

pub fn parse_experiment(text: &str, source_name: &str, base: &Path) -> Result<Experiment> {
    let err = |message: String| Error::Parse {
        source_name: source_name.to_string(),
        message,
    };
    let cfg: ConfigFile = toml::from_str(text).map_err(|e| err(e.to_string()))?;
    let game = io::load_game(&base.join(&cfg.game))?;
    let estimator = match cfg.estimator {
        EstimatorKind::Tabular => Estimator::Tabular,
        EstimatorKind::FiniteClass => {
            let class_path = cfg
                .class_file
                .as_ref()
                .ok_or_else(|| err("finite-class estimator needs class_file".into()))?;
            let class_path = base.join(class_path);
            let class_text = std::fs::read_to_string(&class_path)?;
            Estimator::FiniteClass(io::parse_function_classes(
                &class_text,
                &class_path.display().to_string(),
                &game.spec,
            )?)
        }
    };
    let iteration_rule = match cfg.gamd.rule.as_str() {
        "sqrt" => IterationRule::SqrtN(cfg.gamd.c),
        "fixed" => IterationRule::Fixed(cfg.gamd.iterations),
        other => {
            return Err(err(format!(
                "unknown gamd rule {other:?}, expected \"sqrt\" or \"fixed\""
            )))
        }
    };
    let exp = Experiment {
        game,
        estimator,
        noise_sigma: cfg.noise_sigma,
        sample_sizes: cfg.sample_sizes,
        seeds_per_point: cfg.seeds_per_point,
        master_seed: cfg.master_seed,
        iteration_rule,
        solver: SolverSettings {
            tol: cfg.solver.tol,
            damping: cfg.solver.damping,
            max_iter: cfg.solver.max_iter,
        },
        out: cfg.out.map(|o| base.join(o)),
    };
    exp.validate().map_err(|e| err(e.to_string()))?;
    Ok(exp)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset seed of sweep cell `(n, seed_index)`: SplitMix64 chained over the
/// master seed, `n` and the seed index.
pub fn cell_seed(master_seed: u64, n: usize, seed_index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ n as u64) ^ seed_index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub gap: f64,
    /// Always true for GAMD; for GANE whether the equilibrium solve converged.
    pub converged: bool,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub n: usize,
    pub mean_gap: f64,
    pub std_err: f64,
    /// Gaps of the cells used, in seed order.
    pub gaps: Vec<f64>,
    /// Cells excluded because their solve did not converge.
    pub flagged: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Sum of squared residuals in log space.
    pub residual: f64,
}

/// Ordinary least squares of `ln gap` on `ln n`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two points".into(),
        ));
    }
    for &(n, gap) in points {
        if !(gap > 0.0) || !(n > 0.0) {
            return Err(Error::CannotLog { n, gap });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all sample sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
    })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub algorithm: Algorithm,
    pub points: Vec<RatePoint>,
    pub cells: Vec<CellResult>,
    pub fit: Option<SlopeFit>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn mean_gaps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_gap).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].mean_gap < w[0].mean_gap)
    }
}

fn run_cell(
    exp: &Experiment,
    algorithm: Algorithm,
    n: usize,
    seed_index: usize,
) -> Result<CellResult> {
    let start = Instant::now();
    let spec = &exp.game.spec;
    let seed = cell_seed(exp.master_seed, n, seed_index);
    let data = sample_dataset(spec, &exp.game.behavior, n, exp.noise_sigma, seed)?;
    let (gap, converged) = match algorithm {
        Algorithm::Gane => {
            let out = run_gane(
                &data,
                spec.reference(),
                spec.eta(),
                &exp.estimator,
                &exp.solver,
            )?;
            (ne_gap(out.policy(), spec)?, out.report.converged)
        }
        Algorithm::Gamd => {
            let model = fit_model(&data, &exp.estimator)?;
            let rounds = exp.iteration_rule.iterations(n);
            let out = run_gamd(
                &model,
                spec.reference(),
                spec.eta(),
                rounds,
                TraceMode::Thin,
            )?;
            (cce_gap(&out.mixture, spec)?, true)
        }
    };
    Ok(CellResult {
        n,
        seed_index,
        seed,
        gap,
        converged,
        wall_time: start.elapsed(),
    })
}

fn aggregate(n: usize, cells: &[CellResult]) -> RatePoint {
    let used: Vec<&CellResult> = cells.iter().filter(|c| c.converged).collect();
    let gaps: Vec<f64> = used.iter().map(|c| c.gap).collect();
    let k = gaps.len() as f64;
    let mean_gap = if gaps.is_empty() {
        f64::NAN
    } else {
        gaps.iter().sum::<f64>() / k
    };
    let std_err = if gaps.len() > 1 {
        let var = gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    RatePoint {
        n,
        mean_gap,
        std_err,
        gaps,
        flagged: cells.len() - used.len(),
        wall_time: cells.iter().map(|c| c.wall_time).sum(),
    }
}

/// Thread pool for sweeps; `None` uses rayon's global default.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))
}

/// Runs every `(n, seed)` cell, aggregates per `n`, and fits the log-log slope.
pub fn run_rate_sweep(
    exp: &Experiment,
    algorithm: Algorithm,
    pool: &rayon::ThreadPool,
) -> Result<SweepResult> {
    exp.validate()?;
    let mut warnings = Vec::new();
    let coverage = concentrability(&exp.game.spec, &exp.game.behavior);
    if !coverage.is_finite() {
        warnings.push(
            "behavior distribution does not cover reference-anchored deviations (C_uni = inf)"
                .into(),
        );
    }
    let grid: Vec<(usize, usize)> = exp
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..exp.seeds_per_point).map(move |s| (n, s)))
        .collect();
    let cells = pool.install(|| {
        grid.par_iter()
            .map(|&(n, s)| run_cell(exp, algorithm, n, s))
            .collect::<Result<Vec<_>>>()
    })?;

    let points: Vec<RatePoint> = exp
        .sample_sizes
        .iter()
        .map(|&n| {
            let per_n: Vec<CellResult> = cells.iter().filter(|c| c.n == n).cloned().collect();
            aggregate(n, &per_n)
        })
        .collect();
    for p in &points {
        if p.flagged > 0 {
            warnings.push(format!(
                "n = {}: {} unconverged solve(s) excluded from the fit",
                p.n, p.flagged
            ));
        }
    }
    let fit_points: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.mean_gap.is_finite())
        .map(|p| (p.n as f64, p.mean_gap))
        .collect();
    let fit = match fit_slope(&fit_points) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("slope fit failed: {e}"));
            None
        }
    };
    Ok(SweepResult {
        algorithm,
        points,
        cells,
        fit,
        warnings,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `rate_points.csv`, `rate_cells.csv` and `rate_fit.csv`.
pub fn write_sweep(dir: &Path, results: &[SweepResult]) -> Result<()> {
    let mut points = Vec::new();
    let mut cells = Vec::new();
    let mut fits = Vec::new();
    for r in results {
        let name = r.algorithm.name().to_string();
        for p in &r.points {
            points.push(vec![
                name.clone(),
                p.n.to_string(),
                fmt_f64(p.mean_gap),
                fmt_f64(p.std_err),
                p.gaps.len().to_string(),
                p.flagged.to_string(),
            ]);
        }
        for c in &r.cells {
            cells.push(vec![
                name.clone(),
                c.n.to_string(),
                c.seed_index.to_string(),
                c.seed.to_string(),
                fmt_f64(c.gap),
                c.converged.to_string(),
            ]);
        }
        if let Some(f) = r.fit {
            fits.push(vec![
                name,
                fmt_f64(f.slope),
                fmt_f64(f.intercept),
                fmt_f64(f.residual),
            ]);
        }
    }
    io::write_table(
        create(dir, "rate_points.csv")?,
        &[
            "algorithm",
            "n",
            "mean_gap",
            "std_err",
            "seeds_used",
            "seeds_flagged",
        ],
        points,
    )?;
    io::write_table(
        create(dir, "rate_cells.csv")?,
        &["algorithm", "n", "seed_index", "seed", "gap", "converged"],
        cells,
    )?;
    io::write_table(
        create(dir, "rate_fit.csv")?,
        &["algorithm", "slope", "intercept", "residual"],
        fits,
    )?;
    Ok(())
}

/// Outcome of one `(n, seed)` run with its artifacts on disk.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub gap: f64,
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

/// Options for [`run_single`].
#[derive(Debug, Clone, Default)]
pub struct SingleOptions {
    /// Defaults to the largest configured sample size.
    pub n: Option<usize>,
    pub seed_index: usize,
    /// Use this dataset instead of sampling one.
    pub dataset: Option<crate::game::OfflineDataset>,
    pub write_trace: bool,
    pub write_dataset: bool,
}

/// Runs one cell and writes `policy.csv`, `values.csv` and `diagnostics.csv`.
pub fn run_single(
    exp: &Experiment,
    algorithm: Algorithm,
    opts: &SingleOptions,
    out: &Path,
) -> Result<SingleRun> {
    let spec = &exp.game.spec;
    let n = opts
        .n
        .unwrap_or_else(|| exp.sample_sizes.last().copied().unwrap_or(0));
    let data = match &opts.dataset {
        Some(d) => d.clone(),
        None => sample_dataset(
            spec,
            &exp.game.behavior,
            n,
            exp.noise_sigma,
            cell_seed(exp.master_seed, n, opts.seed_index),
        )?,
    };
    let mut files = Vec::new();
    let mut emit = |name: &str| -> Result<BufWriter<File>> {
        files.push(out.join(name));
        create(out, name)
    };
    if opts.write_dataset {
        io::write_dataset(emit("dataset.csv")?, &data)?;
    }
    let (gap, converged) = match algorithm {
        Algorithm::Gane => {
            let res = run_gane(
                &data,
                spec.reference(),
                spec.eta(),
                &exp.estimator,
                &exp.solver,
            )?;
            io::write_policy(emit("policy.csv")?, res.policy())?;
            io::write_values(emit("values.csv")?, &res.values)?;
            let rows = gap_terms_report(res.policy(), &res.model, spec)?;
            io::write_diagnostics(emit("diagnostics.csv")?, &rows)?;
            (ne_gap(res.policy(), spec)?, res.report.converged)
        }
        Algorithm::Gamd => {
            let model = fit_model(&data, &exp.estimator)?;
            let rounds = exp.iteration_rule.iterations(data.len().max(1));
            let mode = if opts.write_trace {
                TraceMode::Full
            } else {
                TraceMode::Thin
            };
            let res = run_gamd(&model, spec.reference(), spec.eta(), rounds, mode)?;
            io::write_policy(emit("policy.csv")?, &res.mixture)?;
            io::write_values(emit("values.csv")?, &res.values)?;
            let rows = gap_terms_report(&res.mixture, &model, spec)?;
            io::write_diagnostics(emit("diagnostics.csv")?, &rows)?;
            if let Some(trace) = &res.trace {
                io::write_trace(emit("trace.csv")?, trace)?;
                io::write_objectives(emit("objectives.csv")?, trace)?;
            }
            (cce_gap(&res.mixture, spec)?, true)
        }
    };
    Ok(SingleRun {
        gap,
        converged,
        files,
    })
}

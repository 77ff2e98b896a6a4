//! Command-line harness: generate problems, run phase one plus bundle Newton,
//! and batch seeded trials into an aggregate CSV.
//!
//! Exit codes: 0 on success, including every mathematical termination of the
//! method; 2 for configuration errors; 3 for I/O errors.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bundle_newton::pipeline::{
    record_max_eig_reference, run_pipeline, write_rows, PipelineConfig, TrialLabel, TrialSummary,
};
use bundle_newton::{Error, Family, Problem};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{
    parse_seeds, EtaSetting, ExperimentConfig, Format, PathChoice, Phase1Choice, PipelineSection,
    ProblemSection, VariantChoice,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(msg) => CliError::Io(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bundle-newton", version, about = "k-bundle Newton experiments")]
struct Cli {
    /// Directory for output files written without an explicit path.
    #[arg(long, global = true, env = "BUNDLE_NEWTON_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded problem as JSON.
    Generate(GenerateArgs),
    /// Run phase one and bundle Newton on one problem and write its CSV trace.
    Run(RunArgs),
    /// Run seeded trials, possibly in parallel, and write one summary row each.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    /// Dimension of the variable x.
    #[arg(long)]
    n: Option<usize>,
    /// Number of pieces (quartic families).
    #[arg(long)]
    k: Option<usize>,
    /// Matrix order (max-eig).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Multistart runs beyond (1, …, 1) used to record the max-eig reference value.
    #[arg(long, default_value_t = 2)]
    reference_starts: usize,
    /// Output file; defaults to a name built from the problem parameters.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, value_enum)]
    phase1: Option<Phase1Choice>,
    /// Proximal parameter of the bundle method.
    #[arg(long)]
    rho: Option<f64>,
    /// Sufficient-decrease parameter of the bundle method.
    #[arg(long)]
    beta: Option<f64>,
    /// Stopping tolerance of the bundle method.
    #[arg(long)]
    phase1_tolerance: Option<f64>,
    #[arg(long)]
    phase1_max_iterations: Option<usize>,
    /// Fixed bundle size; estimated from the phase-one candidates when omitted.
    #[arg(long)]
    bundle_size: Option<usize>,
    #[arg(long)]
    rank_tolerance: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<VariantChoice>,
    /// Weak-convexity shift: "dynamic" or a number.
    #[arg(long, value_parser = EtaSetting::parse)]
    eta: Option<EtaSetting>,
    #[arg(long, value_enum)]
    subproblem: Option<PathChoice>,
    #[arg(long)]
    epsilon_bar: Option<f64>,
    #[arg(long)]
    delta_bar: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Starting point as comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
}

impl PipelineArgs {
    fn section(&self) -> PipelineSection {
        PipelineSection {
            phase1: self.phase1,
            rho: self.rho,
            beta: self.beta,
            phase1_tolerance: self.phase1_tolerance,
            phase1_max_iterations: self.phase1_max_iterations,
            bundle_size: self.bundle_size,
            rank_tolerance: self.rank_tolerance,
            variant: self.variant,
            eta: self.eta.clone(),
            subproblem: self.subproblem,
            epsilon_bar: self.epsilon_bar,
            delta_bar: self.delta_bar,
            sigma: self.sigma,
            max_iterations: self.max_iterations,
            start: self.start.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Serialized problem to load instead of generating one.
    #[arg(long)]
    problem_file: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Trace file; defaults to a name built from the problem parameters.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Piece counts to sweep (quartic families), comma-separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Seeds as a half-open range `a..b` or a single seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Aggregate file; defaults to `bench-<family>-n<n>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Problem parameters after merging flags over the configuration file.
#[derive(Debug, Clone, Copy)]
struct ProblemSpec {
    family: Family,
    n: usize,
    k: usize,
    m: usize,
    seed: u64,
}

impl ProblemSpec {
    fn resolve(args: &ProblemArgs, file: &ProblemSection) -> Result<Self, CliError> {
        let missing = |what: &str| CliError::Config(format!("missing --{what} (or [problem] {what})"));
        let family = args.family.or(file.family).ok_or_else(|| missing("family"))?;
        let n = args.n.or(file.n).ok_or_else(|| missing("n"))?;
        let seed = args.seed.or(file.seed).ok_or_else(|| missing("seed"))?;
        let (k, m) = match family {
            Family::MaxEig => (0, args.m.or(file.m).ok_or_else(|| missing("m"))?),
            _ => (args.k.or(file.k).ok_or_else(|| missing("k"))?, 0),
        };
        Ok(Self { family, n, k, m, seed })
    }

    fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }

    fn generate(&self) -> Result<Problem, Error> {
        Problem::generate(self.family, self.n, self.k, self.m, self.seed)
    }

    fn stem(&self) -> String {
        match self.family {
            Family::MaxEig => format!("max-eig-m{}-n{}-seed{}", self.m, self.n, self.seed),
            f => format!("{f}-n{}-k{}-seed{}", self.n, self.k, self.seed),
        }
    }

    fn label(&self) -> TrialLabel {
        TrialLabel { family: self.family, n: self.n, k: self.k, m: self.m, seed: self.seed }
    }
}

fn output_path(explicit: Option<&PathBuf>, out_dir: &Path, default_name: String) -> Result<PathBuf, CliError> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;
    Ok(out_dir.join(default_name))
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))
}

fn cmd_generate(args: &GenerateArgs, out_dir: &Path) -> Result<(), CliError> {
    let file = ExperimentConfig::load(args.problem.config.as_deref())?;
    let spec = ProblemSpec::resolve(&args.problem, &file.problem)?;
    let mut problem = spec.generate()?;
    if let Problem::MaxEig(p) = &mut problem {
        record_max_eig_reference(p, args.reference_starts, spec.seed)?;
    }
    let path = output_path(args.out.as_ref(), out_dir, format!("{}.json", spec.stem()))?;
    fs::write(&path, problem.to_json()).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_run(args: &RunArgs, out_dir: &Path) -> Result<(), CliError> {
    let file = ExperimentConfig::load(args.problem.config.as_deref())?;
    let problem_path = args.problem_file.clone().or(file.problem.path.clone());
    let (problem, stem, label) = match problem_path {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
            let problem = Problem::from_json(&text)?;
            let stem = path.file_stem().map_or("problem".into(), |s| s.to_string_lossy().into_owned());
            (problem, stem, None)
        }
        None => {
            let spec = ProblemSpec::resolve(&args.problem, &file.problem)?;
            (spec.generate()?, spec.stem(), Some(spec.label()))
        }
    };
    let family = problem.family();
    let config = args.pipeline.section().or(file.pipeline).resolve(family)?;
    let _format = args.format.or(file.output.format).unwrap_or(Format::Csv);
    let explicit = args.out.clone().or(file.output.trace);
    let path = output_path(explicit.as_ref(), out_dir, format!("{stem}-trace.csv"))?;

    let result = run_pipeline(&problem, &config)?;
    result.write_csv(create(&path)?)?;
    let last = result.rows.last();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
    println!(
        "{} k={} calls={} best_f={:.3e} theta={} diam={} termination={} trace={}",
        label.map_or(family.to_string(), |l| format!("{} n={} seed={}", l.family, l.n, l.seed)),
        result.bundle_size.map_or("-".into(), |k| k.to_string()),
        result.oracle_calls,
        result.best_value(),
        fmt(last.and_then(|r| r.theta)),
        fmt(last.and_then(|r| r.diam)),
        result.termination(),
        path.display()
    );
    Ok(())
}

fn run_trial(spec: ProblemSpec, config: &PipelineConfig) -> TrialSummary {
    let label = spec.label();
    match spec.generate().and_then(|p| run_pipeline(&p, config)) {
        Ok(result) => TrialSummary::from_result(label, config, &result),
        Err(e) => TrialSummary::from_error(label, config, &e),
    }
}

fn cmd_bench(args: &BenchArgs, out_dir: &Path) -> Result<(), CliError> {
    let file = ExperimentConfig::load(args.problem.config.as_deref())?;
    let mut problem_args = ProblemArgs { config: None, seed: Some(0), ..args.problem };
    let ks = args.ks.clone().or(file.bench.ks.clone());
    if problem_args.k.is_none() && file.problem.k.is_none() {
        problem_args.k = ks.as_ref().and_then(|ks| ks.first().copied());
    }
    let base = ProblemSpec::resolve(&problem_args, &file.problem)?;
    let ks = match base.family {
        Family::MaxEig => vec![0],
        _ => ks.unwrap_or_else(|| vec![base.k]),
    };
    let seeds_text = args.seeds.clone().or(file.bench.seeds.clone()).or(args.problem.seed.map(|s| s.to_string()));
    let seeds = parse_seeds(seeds_text.as_deref().unwrap_or("0"))?;
    let config = args.pipeline.section().or(file.pipeline).resolve(base.family)?;
    config.validate(base.n)?;

    let specs: Vec<ProblemSpec> = ks
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&seed| ProblemSpec { seed, ..base.with_k(k) }))
        .collect();
    let threads = args.threads.or(file.bench.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    // `collect` keeps the input order, so the file does not depend on scheduling.
    let rows: Vec<TrialSummary> = pool.install(|| specs.par_iter().map(|&s| run_trial(s, &config)).collect());

    let path = output_path(args.out.as_ref(), out_dir, format!("bench-{}-n{}.csv", base.family, base.n))?;
    write_rows(create(&path)?, &rows)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    println!("{} trials ({failed} failed) -> {}", rows.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(args) => cmd_generate(args, &cli.out_dir),
        Command::Run(args) => cmd_run(args, &cli.out_dir),
        Command::Bench(args) => cmd_bench(args, &cli.out_dir),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bundle-newton: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

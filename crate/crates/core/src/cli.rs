//! `messi` command-line front end.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::cluster::{allocate_dims, apply_dims, em_multi_restart, EmOptions, Init};
use crate::error::MessiError;
use crate::evalgen::{frobenius_error, generate_planted, rate_to_budget, run_sweep, SweepSpec, SynthSpec};
use crate::io::{self, BundleMeta, ReportRow, BUNDLE_FORMAT_VERSION};
use crate::messi::{assemble_sparse, block_residuals, build_factorization, equal_budget_j, reconstruct};

#[derive(Debug, Parser)]
#[command(name = "messi", version, about = "Compress weight matrices by (k,j)-projective clustering")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only print errors on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster the rows of a matrix and write a factorization bundle.
    Compress(CompressArgs),
    /// Measure the reconstruction error of a bundle against its matrix.
    Evaluate(EvaluateArgs),
    /// Compare cluster counts at equal parameter budgets.
    Sweep(SweepArgs),
    /// Generate a planted-subspace matrix.
    Synth(SynthArgs),
    /// Print the structure of a bundle.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct EmArgs {
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Stop once the relative cost improvement falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value = "random-partition")]
    pub init: String,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("size").required(true).args(["j", "budget"])))]
pub struct CompressArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Subspace dimension.
    #[arg(long)]
    pub j: Option<usize>,
    /// Parameter budget; picks the largest j that fits.
    #[arg(long)]
    pub budget: Option<u64>,
    #[command(flatten)]
    pub em: EmArgs,
    /// Cost exponent; only 2 has an exact refit solver.
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    /// Redistribute the k*j dimensions among clusters by spectrum.
    #[arg(long)]
    pub dims_auto: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("budgets").required(true).args(["rate_list", "budget_list"])))]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub k_list: Vec<usize>,
    /// Target compression rates in (0, 1).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub rate_list: Vec<f64>,
    /// Absolute parameter budgets.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub budget_list: Vec<u64>,
    #[command(flatten)]
    pub em: EmArgs,
    /// Leave out the k = 1 (plain SVD) rows unless k-list has 1.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 120)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub k_true: usize,
    #[arg(long, default_value_t = 1)]
    pub j_true: usize,
    /// Gaussian noise standard deviation per coordinate.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the true cluster of every row.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] MessiError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl EmArgs {
    fn options(&self, seed: u64, q: f64) -> Result<EmOptions, CliError> {
        let init: Init = self.init.parse().map_err(|e: MessiError| usage(e.to_string()))?;
        let opts = EmOptions {
            restarts: self.restarts,
            max_iters: self.max_iters,
            rel_tol: self.tol,
            seed,
            init,
            q,
        };
        opts.validate().map_err(|e| usage(e.to_string()))?;
        if q != 2.0 {
            return Err(usage(format!(
                "--q {q}: only q = 2 has a refit solver; other exponents are supported for cost evaluation only"
            )));
        }
        Ok(opts)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("messi: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; returns what it prints on standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Compress(a) => compress(a, cli.seed),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a, cli.seed),
        Command::Synth(a) => synth(a, cli.seed),
        Command::Inspect(a) => inspect(a),
    })
}

fn compress(args: &CompressArgs, seed: u64) -> Result<String, CliError> {
    let opts = args.em.options(seed, args.q)?;
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if args.j == Some(0) {
        return Err(usage("--j must be at least 1"));
    }
    let a = io::load_matrix(&args.input)?;
    let (n, d) = a.shape();
    let j = match (args.j, args.budget) {
        (Some(j), _) => j,
        (None, Some(budget)) => equal_budget_j(n, d, args.k, budget)?,
        (None, None) => unreachable!("clap requires --j or --budget"),
    };
    if j > d {
        return Err(MessiError::Parameter(format!("j = {j} exceeds d = {d}")).into());
    }
    info!("clustering {n}x{d} rows into k = {} subspaces of dimension {j}", args.k);
    let mut clustering = em_multi_restart(&a, args.k, j, &opts)?;
    if args.dims_auto {
        let dims = allocate_dims(&a, &clustering.assignment, args.k, args.k * j)?;
        info!("allocated dims {dims:?}");
        clustering = apply_dims(&a, &clustering, &dims)?;
    }
    let f = build_factorization(&a, &clustering)?;
    let meta = BundleMeta {
        format_version: BUNDLE_FORMAT_VERSION,
        n,
        d,
        k: f.k(),
        dims: f.dims(),
        q: clustering.q,
        seed,
        cost: clustering.cost,
        iterations: clustering.iterations,
        converged: clustering.converged,
        params: f.param_count(),
        compression_rate: f.compression_rate(),
        cluster_sizes: f.cluster_sizes(),
        block_residuals: block_residuals(&a, &f)?,
    };
    io::save_bundle(&f, &meta, &args.output)?;
    info!("wrote bundle {}", args.output.display());
    let mut out = String::new();
    let _ = writeln!(out, "params={}", meta.params);
    let _ = writeln!(out, "compression_rate={}", io::format_real(meta.compression_rate));
    let _ = writeln!(out, "cost={}", io::format_real(meta.cost));
    let _ = writeln!(out, "iterations={}", meta.iterations);
    Ok(out)
}

fn evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let a = io::load_matrix(&args.input)?;
    let (f, meta) = io::load_bundle(&args.bundle)?;
    if a.shape() != (f.n(), f.d()) {
        return Err(MessiError::Parameter(format!(
            "matrix is {}x{} but bundle is {}x{}",
            a.rows(),
            a.cols(),
            f.n(),
            f.d()
        ))
        .into());
    }
    let (abs, rel) = frobenius_error(&a, &reconstruct(&f))?;
    let identity_gap = (abs * abs - meta.cost).abs() / meta.cost.max(f64::MIN_POSITIVE);
    let mut out = String::new();
    let _ = writeln!(out, "frobenius_error={}", io::format_real(abs));
    let _ = writeln!(out, "relative_error={}", io::format_real(rel));
    let _ = writeln!(out, "residual_identity_gap={}", io::format_real(identity_gap));
    if let Some(path) = &args.report {
        let row = ReportRow {
            k: meta.k,
            dims: meta.dims.clone(),
            params: meta.params,
            compression_rate: meta.compression_rate,
            frobenius_error: abs,
            relative_error: rel,
            iterations: meta.iterations,
            converged: meta.converged,
            seed: meta.seed,
        };
        io::write_report(&[row], path)?;
    }
    Ok(out)
}

fn sweep(args: &SweepArgs, seed: u64) -> Result<String, CliError> {
    let opts = args.em.options(seed, 2.0)?;
    if args.k_list.is_empty() {
        return Err(usage("--k-list must not be empty"));
    }
    if args.k_list.contains(&0) {
        return Err(usage("--k-list entries must be at least 1"));
    }
    if let Some(r) = args.rate_list.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(usage(format!("rate {r} outside (0, 1)")));
    }
    let a = io::load_matrix(&args.input)?;
    let (n, d) = a.shape();
    let budgets = if args.budget_list.is_empty() {
        args.rate_list
            .iter()
            .map(|&r| rate_to_budget(r, n, d))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        args.budget_list.clone()
    };
    let spec = SweepSpec {
        k_list: args.k_list.clone(),
        budgets,
        em: opts,
        include_baseline: !args.no_baseline,
    };
    info!("sweeping k in {:?} over budgets {:?}", spec.k_list, spec.budgets);
    let report = run_sweep(&a, &spec)?;
    io::write_report(&report.rows(), &args.output)?;
    Ok(format!("rows={}\n", report.cells.len()))
}

fn synth(args: &SynthArgs, seed: u64) -> Result<String, CliError> {
    let spec = SynthSpec {
        n: args.n,
        d: args.d,
        k_true: args.k_true,
        j_true: args.j_true,
        noise_sigma: args.noise,
        spread: args.spread,
        seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let (a, labels) = generate_planted(&spec)?;
    io::save_matrix(&a, &args.output)?;
    if let Some(path) = &args.labels {
        io::save_ids(&labels, path)?;
    }
    Ok(format!("rows={} cols={}\n", a.rows(), a.cols()))
}

fn inspect(args: &InspectArgs) -> Result<String, CliError> {
    let (f, meta) = io::load_bundle(&args.bundle)?;
    let sparse = assemble_sparse(&f);
    let dims = f.dims();
    for z in 0..f.n() {
        let (start, vals) = sparse.row_entries(z);
        let c = f.assignment()[z];
        if vals.len() != dims[c] || start != sparse.offsets[c] {
            return Err(MessiError::Format(format!(
                "row {z}: sparse pattern does not match cluster {c}"
            ))
            .into());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "format_version={}", meta.format_version);
    let _ = writeln!(out, "n={} d={} k={}", meta.n, meta.d, meta.k);
    let _ = writeln!(out, "q={} seed={}", meta.q, meta.seed);
    let _ = writeln!(out, "cost={}", io::format_real(meta.cost));
    let _ = writeln!(out, "iterations={} converged={}", meta.iterations, meta.converged);
    let _ = writeln!(out, "params={}", meta.params);
    let _ = writeln!(out, "compression_rate={}", io::format_real(meta.compression_rate));
    let _ = writeln!(out, "u_columns={} nnz={}", sparse.cols(), sparse.nnz());
    for (c, (size, j)) in f.cluster_sizes().iter().zip(&dims).enumerate() {
        let _ = writeln!(
            out,
            "cluster {c}: rows={size} dim={j} columns={}..{} nonzeros_per_row={j} residual={}",
            sparse.offsets[c],
            sparse.offsets[c] + j,
            io::format_real(meta.block_residuals[c])
        );
    }
    Ok(out)
}

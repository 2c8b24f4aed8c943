use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctmc_gradkit::bounds::{
    naive_bound, symmetric_gap_constants, thm1_certificate, thm2_certificate_with, thm3_certificate, BoundCertificate,
    SpectralGapConstants, Thm2Variant,
};
use ctmc_gradkit::ctmc_data::EndpointDataset;
use ctmc_gradkit::ensembles::{sample_rate_matrix, EnsembleFamily, RateEnsembleSpec, SeededRng};
use ctmc_gradkit::experiment::{default_ensemble, run_experiment, ExperimentConfig};
use ctmc_gradkit::gradients::{approx_derivative, exact_directional_derivative, generator_inverse, ApproxMode, Direction, GradMode, NormPair};
use ctmc_gradkit::io::{read_matrix_csv, write_matrix_csv};
use ctmc_gradkit::linalg::{matrix_exponential, validate_rate_matrix, Matrix, NormKind};
use ctmc_gradkit::mcmc::{run_chain, ChainConfig, EndpointPosterior, HmcConfig, PhyloPosterior, PhyloSampling, PriorSpec};
use ctmc_gradkit::phylo::{parse_newick, tree_loglik_and_grad, MixedEffectsGenerator, ObservationMatrix, PhyloModel, RootPrior};
use ctmc_gradkit::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Matrix-exponential derivatives, error certificates, and surrogate-gradient HMC for CTMC generators.
#[derive(Parser)]
#[command(name = "ctmc-gradkit", version)]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "CTMC_GRADKIT_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// exp(tQ) for a matrix read from CSV.
    Expm {
        #[arg(long)]
        q: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// Directional derivative of exp(tQ) along J.
    Grad(GradArgs),
    /// Error certificates for the first-order approximations.
    Bounds(BoundsArgs),
    /// Draw rate matrices from a random family.
    Ensemble(EnsembleArgs),
    /// HMC on endpoint-observed data.
    Hmc(HmcArgs),
    /// Tree likelihood and gradient, optionally followed by sampling.
    Phylo(PhyloArgs),
    /// Run a simulation study.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Naive,
    Corrected,
}

impl From<ModeArg> for GradMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => GradMode::Exact,
            ModeArg::Naive => GradMode::Naive,
            ModeArg::Corrected => GradMode::Corrected,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Frobenius,
    Operator,
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Frobenius => NormKind::Frobenius,
            NormArg::Operator => NormKind::Operator,
        }
    }
}

#[derive(Args)]
struct GradArgs {
    #[arg(long)]
    q: PathBuf,
    /// Direction matrix; defaults to the basis direction given by `--basis`.
    #[arg(long, conflicts_with = "basis")]
    j: Option<PathBuf>,
    /// Basis direction `i,j` (E_ij).
    #[arg(long, value_delimiter = ',')]
    basis: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Theorem {
    Naive,
    Thm1,
    Thm2,
    Thm3,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    q: PathBuf,
    /// Direction matrix (not needed for `thm3`).
    #[arg(long)]
    j: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    t: Vec<f64>,
    #[arg(long, value_enum)]
    theorem: Theorem,
    #[arg(long, value_enum, default_value = "frobenius")]
    norm: NormArg,
    /// Decay constants for `thm1` on non-symmetric generators.
    #[arg(long, requires = "kappa")]
    c0: Option<f64>,
    #[arg(long, requires = "c0")]
    kappa: Option<f64>,
    /// Spectral band for the `thm2` mu variant.
    #[arg(long, requires = "mu2")]
    mu1: Option<f64>,
    #[arg(long, requires = "mu1")]
    mu2: Option<f64>,
    /// Band centre and constant for `thm3`.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 3.0)]
    c: f64,
}

#[derive(Args)]
struct EnsembleArgs {
    /// JSON ensemble spec; overrides `--family` and `--dim`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "symmetric_iid")]
    family: String,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
}

/// JSON layout of an endpoint HMC run; every field can be overridden by a flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct HmcRun {
    data: Option<PathBuf>,
    dim: Option<usize>,
    #[serde(default = "default_prior")]
    prior: PriorSpec,
    #[serde(default)]
    update_scale: bool,
    #[serde(default = "default_iterations")]
    iterations: usize,
    #[serde(default = "default_warmup")]
    warmup: usize,
    #[serde(default = "one")]
    thin: usize,
    #[serde(default = "default_step")]
    step_size: f64,
    #[serde(default = "default_leapfrog")]
    n_leapfrog: usize,
    #[serde(default = "default_mode")]
    grad_mode: GradMode,
    #[serde(default = "default_target")]
    target_accept: f64,
}

fn default_prior() -> PriorSpec {
    PriorSpec::Normal { mean: 0.0, variance: 1.0 }
}
fn default_iterations() -> usize {
    20_000
}
fn default_warmup() -> usize {
    1_000
}
fn one() -> usize {
    1
}
fn default_step() -> f64 {
    0.1
}
fn default_leapfrog() -> usize {
    10
}
fn default_mode() -> GradMode {
    GradMode::Naive
}
fn default_target() -> f64 {
    0.8
}

#[derive(Args)]
struct HmcArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Endpoint CSV with header `initial,final,lag`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    n_leapfrog: Option<usize>,
    #[arg(long, value_enum)]
    grad_mode: Option<ModeArg>,
    #[arg(long)]
    target_accept: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RootArg {
    Uniform,
    Stationary,
}

#[derive(Args)]
struct PhyloArgs {
    /// Newick file.
    #[arg(long)]
    tree: PathBuf,
    /// Leaf states, CSV with header `leaf,state_index`.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    dim: usize,
    /// Predictor matrices as CSV files, one per fixed effect.
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<PathBuf>,
    /// Fixed effects; defaults to zeros.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Vec<f64>,
    /// Random effects, row-major over i != j; defaults to zeros.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "stationary")]
    root: RootArg,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Sampling settings as JSON (`PhyloSampling` layout).
    #[arg(long)]
    sampling: Option<PathBuf>,
    /// Post-warmup HMC iterations; zero only evaluates the gradient.
    #[arg(long, default_value_t = 0)]
    iterations: usize,
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    #[arg(long, default_value_t = 10)]
    n_leapfrog: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fig_app, low_dim, truth_mean or thm3_sweep.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    t_grid: Vec<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::UnknownExperiment(_)
        | Error::Io(_)
        | Error::NotSquare { .. }
        | Error::DimensionMismatch { .. }
        | Error::NegativeOffDiagonal(..)
        | Error::RowSumViolation(..)
        | Error::NotSymmetric(_) => 2,
        _ => 3,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    fs::write(path, serde_json::to_string_pretty(value).expect("json serializes"))?;
    Ok(())
}

fn report(value: serde_json::Value) {
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&value).expect("json serializes"));
}

fn read_generator(path: &Path) -> Result<Matrix, Error> {
    Ok(validate_rate_matrix(&read_matrix_csv(path)?, 1e-9)?.into_matrix())
}

fn expm(q: &Path, t: f64, out: &Path) -> Result<(), Error> {
    let p = matrix_exponential(&read_matrix_csv(q)?, t)?;
    let path = out.join("expm.csv");
    write_matrix_csv(&path, &p)?;
    report(json!({"file": path, "t": t}));
    Ok(())
}

fn grad(a: &GradArgs, out: &Path) -> Result<(), Error> {
    let q = read_generator(&a.q)?;
    let j = match (&a.j, a.basis.as_slice()) {
        (Some(path), _) => read_matrix_csv(path)?,
        (None, [i, k]) => Direction::basis(q.nrows(), *i, *k).matrix().clone(),
        _ => return Err(Error::InvalidArgument("give --j or --basis i,j".into())),
    };
    let exact = exact_directional_derivative(&q, &j, a.t)?;
    let mode = GradMode::from(a.mode);
    let value = match mode {
        GradMode::Exact => exact.clone(),
        GradMode::Naive => approx_derivative(&q, &j, a.t, ApproxMode::Naive, None)?,
        GradMode::Corrected => approx_derivative(&q, &j, a.t, ApproxMode::Corrected, Some(&generator_inverse(&q)?))?,
    };
    let path = out.join(format!("grad_{}.csv", mode.name()));
    write_matrix_csv(&path, &value)?;
    let err = NormPair::of(&(&value - &exact));
    report(json!({"file": path, "mode": mode.name(), "t": a.t,
        "error_vs_exact": {"frobenius": err.frobenius, "operator": err.operator}}));
    Ok(())
}

fn bounds(a: &BoundsArgs, out: &Path) -> Result<(), Error> {
    let q = read_generator(&a.q)?;
    let norm = NormKind::from(a.norm);
    if let Theorem::Thm3 = a.theorem {
        let rate = validate_rate_matrix(&q, 1e-9)?;
        let r = thm3_certificate(&rate, a.mu, a.c)?;
        let value = serde_json::to_value(r).expect("report serializes");
        write_json(&out.join("bounds.json"), &value)?;
        report(value);
        return Ok(());
    }
    let j = read_matrix_csv(a.j.as_ref().ok_or_else(|| Error::InvalidArgument("--j is required".into()))?)?;
    let asymmetry = (&q - q.transpose()).norm() / q.norm().max(f64::MIN_POSITIVE);
    let symmetric = asymmetry == 0.0;
    let qplus = generator_inverse(&q)?;
    let mut certs: Vec<BoundCertificate> = Vec::new();
    for &t in &a.t {
        let cert = match a.theorem {
            Theorem::Naive => naive_bound(&q, &j, t, norm)?,
            Theorem::Thm1 => {
                let gap = match (a.c0, a.kappa) {
                    (Some(c0), Some(kappa)) => SpectralGapConstants::new(c0, kappa, norm)?,
                    _ if symmetric => symmetric_gap_constants(qplus.decomposition(), norm)?,
                    _ => return Err(Error::InvalidArgument("non-symmetric generator needs --c0 and --kappa".into())),
                };
                thm1_certificate(&q, &qplus, &j, t, &gap, norm)?
            }
            Theorem::Thm2 => {
                if !symmetric {
                    return Err(Error::NotSymmetric(asymmetry));
                }
                let variant = match (a.mu1, a.mu2) {
                    (Some(mu1), Some(mu2)) => Thm2Variant::Mu { mu1, mu2 },
                    _ => Thm2Variant::Spectral,
                };
                thm2_certificate_with(&qplus, &j, t, norm, variant)?
            }
            Theorem::Thm3 => unreachable!(),
        };
        certs.push(cert);
    }
    let value = serde_json::to_value(&certs).expect("certificates serialize");
    write_json(&out.join("bounds.json"), &value)?;
    report(value);
    Ok(())
}

fn ensemble(a: &EnsembleArgs, seed: u64, out: &Path) -> Result<(), Error> {
    let spec: RateEnsembleSpec = match &a.config {
        Some(path) => read_json(path)?,
        None => default_ensemble(a.family.parse::<EnsembleFamily>()?, a.dim),
    };
    spec.validate()?;
    let mut files = Vec::new();
    for r in 0..a.replicates {
        let q = sample_rate_matrix(&spec, &SeededRng::new(seed, r as u64))?;
        let path = out.join(format!("ensemble_{r}.csv"));
        write_matrix_csv(&path, q.matrix())?;
        files.push(path);
    }
    report(json!({"spec": spec, "seed": seed, "files": files}));
    Ok(())
}

fn hmc(a: &HmcArgs, seed: u64, out: &Path) -> Result<(), Error> {
    let mut run: HmcRun = match &a.config {
        Some(path) => read_json(path)?,
        None => serde_json::from_value(json!({})).expect("defaults deserialize"),
    };
    run.data = a.data.clone().or(run.data);
    run.dim = a.dim.or(run.dim);
    run.iterations = a.iterations.unwrap_or(run.iterations);
    run.warmup = a.warmup.unwrap_or(run.warmup);
    run.thin = a.thin.unwrap_or(run.thin);
    run.step_size = a.step_size.unwrap_or(run.step_size);
    run.n_leapfrog = a.n_leapfrog.unwrap_or(run.n_leapfrog);
    run.grad_mode = a.grad_mode.map(GradMode::from).unwrap_or(run.grad_mode);
    run.target_accept = a.target_accept.unwrap_or(run.target_accept);

    let data_path = run.data.clone().ok_or_else(|| Error::InvalidArgument("--data is required".into()))?;
    let dim = run.dim.ok_or_else(|| Error::InvalidArgument("--dim is required".into()))?;
    let data = EndpointDataset::read_csv(&data_path, dim)?;
    let mut post = EndpointPosterior::new(data, run.prior)?;
    if run.update_scale {
        post = post.with_scale_updates()?;
    }
    let mut cfg = ChainConfig::new(HmcConfig::new(run.step_size, run.n_leapfrog), run.iterations, seed, run.grad_mode)
        .with_warmup(run.warmup)
        .with_thin(run.thin);
    cfg.target_accept = run.target_accept;
    let chain = run_chain(&mut post, &vec![0.0; dim * (dim - 1)], &cfg)?;
    let trace = out.join("trace.csv");
    chain.write_trace_csv(&trace)?;
    let diag = serde_json::to_value(chain.diagnostics()).expect("diagnostics serialize");
    write_json(&out.join("diagnostics.json"), &diag)?;
    report(json!({"trace": trace, "diagnostics": diag, "step_size": chain.step_size, "config": run}));
    Ok(())
}

fn phylo(a: &PhyloArgs, seed: u64, out: &Path) -> Result<(), Error> {
    let tree = parse_newick(&fs::read_to_string(&a.tree)?)?;
    let obs = ObservationMatrix::read_csv(&a.obs, &tree, a.dim)?;
    let predictors: Vec<Matrix> = a.predictors.iter().map(read_matrix_csv).collect::<Result<_, _>>()?;
    let theta = if a.theta.is_empty() { vec![0.0; predictors.len()] } else { a.theta.clone() };
    let epsilon = if a.epsilon.is_empty() { vec![0.0; a.dim * a.dim.saturating_sub(1)] } else { a.epsilon.clone() };
    let generator = MixedEffectsGenerator::new(predictors, theta, epsilon, a.gamma)?;
    let root = match a.root {
        RootArg::Uniform => RootPrior::Uniform,
        RootArg::Stationary => RootPrior::Stationary,
    };
    let model = PhyloModel::new(tree, obs, generator, root)?;
    let mode = GradMode::from(a.mode);
    let g = tree_loglik_and_grad(&model, mode)?;
    let mut summary = json!({"mode": mode.name(), "loglik": g.loglik, "grad_theta": g.theta,
        "grad_epsilon": g.epsilon, "grad_gamma": g.gamma});
    if a.iterations > 0 {
        let sampling: PhyloSampling = match &a.sampling {
            Some(path) => read_json(path)?,
            None => PhyloSampling::default(),
        };
        let init = model.generator.regression_params();
        let mut post = PhyloPosterior::new(model, sampling)?;
        let cfg = ChainConfig::new(HmcConfig::new(a.step_size, a.n_leapfrog), a.iterations, seed, mode).with_warmup(a.warmup);
        let chain = run_chain(&mut post, &init, &cfg)?;
        let trace = out.join("phylo_trace.csv");
        chain.write_trace_csv(&trace)?;
        let diag = serde_json::to_value(chain.diagnostics()).expect("diagnostics serialize");
        write_json(&out.join("phylo_diagnostics.json"), &diag)?;
        summary["trace"] = json!(trace);
        summary["diagnostics"] = diag;
        summary["step_size"] = json!(chain.step_size);
    }
    write_json(&out.join("phylo.json"), &summary)?;
    report(summary);
    Ok(())
}

fn experiment(a: &ExperimentArgs, seed: Option<u64>, out: &Path, out_given: bool) -> Result<(), Error> {
    let mut cfg = match (&a.config, &a.name) {
        (Some(path), _) => read_json::<ExperimentConfig>(path)?,
        (None, Some(name)) => ExperimentConfig::new(name),
        (None, None) => return Err(Error::InvalidArgument("give --config or --name".into())),
    };
    if let Some(name) = &a.name {
        cfg.name = name.clone();
    }
    if !a.dims.is_empty() {
        cfg.dims = a.dims.clone();
    }
    if !a.t_grid.is_empty() {
        cfg.t_grid = a.t_grid.clone();
    }
    if !a.alphas.is_empty() {
        cfg.alphas = a.alphas.clone();
    }
    cfg.replicates = a.replicates.or(cfg.replicates);
    cfg.iterations = a.iterations.or(cfg.iterations);
    cfg.warmup = a.warmup.or(cfg.warmup);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out_given || a.config.is_none() {
        cfg.output_dir = out.to_path_buf();
    }
    let artifacts = run_experiment(&cfg)?;
    report(serde_json::to_value(artifacts).expect("artifacts serialize"));
    Ok(())
}

fn run(cli: Cli, out_given: bool) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(0);
    if !matches!(cli.command, Command::Experiment(_)) {
        fs::create_dir_all(&cli.out)?;
    }
    match &cli.command {
        Command::Expm { q, t } => expm(q, *t, &cli.out),
        Command::Grad(a) => grad(a, &cli.out),
        Command::Bounds(a) => bounds(a, &cli.out),
        Command::Ensemble(a) => ensemble(a, seed, &cli.out),
        Command::Hmc(a) => hmc(a, seed, &cli.out),
        Command::Phylo(a) => phylo(a, seed, &cli.out),
        Command::Experiment(a) => experiment(a, cli.seed, &cli.out, out_given),
    }
}

fn main() -> ExitCode {
    let out_given = std::env::args().any(|a| a == "--out" || a.starts_with("--out="));
    let cli = Cli::parse();
    match run(cli, out_given) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

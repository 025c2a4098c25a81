mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use compactnet::analysis::{critical_quantities, hessian_ground_truth, restricted_eigenvalue, write_report_csv};
use compactnet::analysis::{DiagnosticEntry, Directions};
use compactnet::experiments::{
    gen_dataset, gen_sparse_teacher, init_weights, run_experiment, summarize, write_records_csv, Arm, ArmConstraint,
    ExperimentRecord, ExperimentSpec, InitMode,
};
use compactnet::linalg::{random_orthonormal_columns, singular_values, sym_min_eigen};
use compactnet::{
    covering_dimension, pgd_run, zeta, zeta_interval, ActivationKind, ConstraintSpec, CovModel, PgdConfig,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric { message: String, keys: Vec<String> },
    Other(String),
}

impl From<compactnet::Error> for CliError {
    fn from(e: compactnet::Error) -> Self {
        match e {
            compactnet::Error::Io(m) => CliError::Other(m),
            compactnet::Error::Diverged { iter, .. } | compactnet::Error::NonFinite { iter, .. } => CliError::Numeric {
                message: e.to_string(),
                keys: vec![format!("iter={iter}")],
            },
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "compactnet",
    version,
    about = "Teacher-student experiments and diagnostics for one-hidden-layer networks under low-dimensional constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep over sample sizes with a planted sparse teacher (arms: none, l1, l0).
    ExperimentSparse(SparseArgs),
    /// Sweep over sample sizes with a planted convolutional teacher.
    ExperimentCnn(CnnArgs),
    /// Single projected-gradient run on a sparse teacher; writes the loss trace.
    Train(TrainArgs),
    /// Hessian at the truth and theory constants for a random orthonormal teacher.
    AnalyzeHessian(HessianArgs),
    /// Print the covering dimension of a constraint set.
    Covdim(CovdimArgs),
    /// Print the Gaussian nonlinearity measure of an activation.
    Zeta(ZetaArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Full-size reference settings.
    Paper,
    /// Tiny settings that finish in seconds.
    Smoke,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with settings; keys are the snake_case field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the CSV output and manifest.json.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn parse_arm_constraint(s: &str) -> Result<ArmConstraint, String> {
    serde_json::from_value(json!(s.trim().to_ascii_lowercase())).map_err(|_| format!("unknown constraint '{s}'"))
}

#[derive(Args, Serialize)]
struct SparseArgs {
    #[serde(skip)]
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    /// Initialization: teacher plus noise (good) or noise alone (random).
    #[serde(skip)]
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Comma-separated arms, e.g. none,l1,l0.
    #[serde(skip)]
    #[arg(long, value_delimiter = ',', value_parser = parse_arm_constraint)]
    arms: Option<Vec<ArmConstraint>>,
    #[serde(skip)]
    #[command(flatten)]
    run: RunArgs,
    /// Trials run in parallel; results do not depend on it.
    #[serde(skip)]
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Master seed [fallback: COMPACTNET_SEED].
    #[serde(rename = "master_seed", skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    seed: Option<u64>,
    /// Input dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    p: Option<usize>,
    /// Hidden width.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    h: Option<usize>,
    /// Nonzeros per teacher row.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    s: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: SweepArgs,
}

#[derive(Args, Serialize)]
struct CnnArgs {
    #[serde(skip)]
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    #[serde(skip)]
    #[command(flatten)]
    run: RunArgs,
    /// Trials run in parallel; results do not depend on it.
    #[serde(skip)]
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Master seed [fallback: COMPACTNET_SEED].
    #[serde(rename = "master_seed", skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    seed: Option<u64>,
    /// Input dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    p: Option<usize>,
    /// Number of kernels.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    kernels: Option<usize>,
    /// Kernel width.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    width: Option<usize>,
    /// Stride between kernel positions.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: SweepArgs,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Comma-separated training-set sizes.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Test-set size.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    n_test: Option<usize>,
    /// Independent trials per sample size.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    trials: Option<usize>,
    /// Step size per input coordinate; the loss step is mu/p.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    mu: Option<f64>,
    /// Projected-gradient iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    iters: Option<usize>,
    /// sigmoid, tanh, erf, squared_relu, softplus, relu or identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    activation: Option<ActivationKind>,
}

#[derive(Copy, Clone, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum InitArg {
    Good,
    Random,
}

impl From<InitArg> for InitMode {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Good => InitMode::Good,
            InitArg::Random => InitMode::Random,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSettings {
    p: usize,
    h: usize,
    s: usize,
    n: usize,
    activation: ActivationKind,
    constraint: TrainConstraint,
    /// Sparsity budget, rank, or ball radius; defaults to the teacher's own value.
    budget: Option<f64>,
    init: InitMode,
    mu: f64,
    iters: usize,
    stop_tol: Option<f64>,
    seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            p: 40,
            h: 5,
            s: 4,
            n: 400,
            activation: ActivationKind::Tanh,
            constraint: TrainConstraint::L1,
            budget: None,
            init: InitMode::Good,
            mu: 0.5,
            iters: 500,
            stop_tol: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum TrainConstraint {
    None,
    L0,
    L1,
    Rank,
    Nuclear,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[serde(skip)]
    #[command(flatten)]
    run: RunArgs,
    /// Input dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    p: Option<usize>,
    /// Hidden width.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    h: Option<usize>,
    /// Nonzeros per teacher row.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    s: Option<usize>,
    /// Training-set size.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    n: Option<usize>,
    /// sigmoid, tanh, erf, squared_relu, softplus, relu or identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    activation: Option<ActivationKind>,
    /// Constraint set for the iterates.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, value_enum)]
    constraint: Option<TrainConstraint>,
    /// l0 budget, rank, or l1/nuclear radius (default: the teacher's value).
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    budget: Option<f64>,
    /// Initialization: teacher plus noise (good) or noise alone (random).
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Step size applied to the loss.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    mu: Option<f64>,
    /// Projected-gradient iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    iters: Option<usize>,
    /// Stop once the step norm falls below this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    stop_tol: Option<f64>,
    /// Seed for the teacher, data and initialization [fallback: COMPACTNET_SEED].
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HessianSettings {
    p: usize,
    h: usize,
    n: usize,
    activation: ActivationKind,
    /// Sparsity level of the restricted eigenvalue, if any.
    cone_s: Option<usize>,
    seed: u64,
}

impl Default for HessianSettings {
    fn default() -> Self {
        Self {
            p: 8,
            h: 3,
            n: 200,
            activation: ActivationKind::Tanh,
            cone_s: Some(2),
            seed: 0,
        }
    }
}

#[derive(Args, Serialize)]
struct HessianArgs {
    #[serde(skip)]
    #[command(flatten)]
    run: RunArgs,
    /// Input dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    p: Option<usize>,
    /// Hidden width.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    h: Option<usize>,
    /// Samples used for the empirical Hessian.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    n: Option<usize>,
    /// sigmoid, tanh, erf, squared_relu, softplus, relu or identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    activation: Option<ActivationKind>,
    /// Sparsity of the direction cone for the restricted eigenvalue.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    cone_s: Option<usize>,
    /// Seed for the teacher, data and initialization [fallback: COMPACTNET_SEED].
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, ValueEnum)]
enum CovConstraint {
    None,
    Conv,
    Sparse,
    L1,
    Subspace,
    Rank,
    Nuclear,
}

#[derive(Args)]
struct CovdimArgs {
    /// Constraint family.
    #[arg(long, value_enum)]
    constraint: CovConstraint,
    /// Number of kernels (conv).
    #[arg(long)]
    k: Option<usize>,
    /// Kernel width (conv).
    #[arg(long)]
    b: Option<usize>,
    /// Nonzeros (sparse, l1).
    #[arg(long)]
    s: Option<usize>,
    /// Hidden width.
    #[arg(long, default_value_t = 1)]
    h: usize,
    /// Input dimension.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Rank (rank, nuclear).
    #[arg(long)]
    r: Option<usize>,
    /// Subspace dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Also print the formula.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct ZetaArgs {
    /// sigmoid, tanh, erf, squared_relu, softplus, relu or identity.
    #[arg(long)]
    activation: ActivationKind,
    /// Scale of the Gaussian input.
    #[arg(long, conflicts_with_all = ["alpha", "beta"], required_unless_present_all = ["alpha", "beta"])]
    theta: Option<f64>,
    /// Lower end of a scale interval; prints the minimum over mixtures.
    #[arg(long, requires = "beta")]
    alpha: Option<f64>,
    /// Upper end of a scale interval.
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))
}

fn write_manifest(
    dir: &Path,
    config: serde_json::Value,
    seed: u64,
    started: chrono::DateTime<chrono::Utc>,
    t0: Instant,
) -> Result<(), CliError> {
    let manifest = json!({
        "config": config,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "started_at": started.to_rfc3339(),
        "duration_s": t0.elapsed().as_secs_f64(),
    });
    let file = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest).map_err(|e| CliError::Other(e.to_string()))
}

fn failed_keys(records: &[ExperimentRecord]) -> Vec<String> {
    records
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| {
            format!(
                "trial={} n={} constraint={} init={} ({})",
                r.trial, r.n, r.constraint, r.init, r.status
            )
        })
        .collect()
}

fn sweep(spec: ExperimentSpec, run: &RunArgs, jobs: usize) -> Result<(), CliError> {
    let started = chrono::Utc::now();
    let t0 = Instant::now();
    spec.validate()?;
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let records = run_experiment(&spec, jobs)?;
    create_out_dir(&run.out_dir)?;
    write_records_csv(&records, BufWriter::new(File::create(run.out_dir.join("records.csv"))?))?;
    let config = serde_json::to_value(&spec).map_err(|e| CliError::Other(e.to_string()))?;
    write_manifest(&run.out_dir, config, spec.master_seed, started, t0)?;

    println!(
        "{:>6} {:>6} {:>7} {:>10} {:>10} {:>8} {:>4}",
        "n", "arm", "init", "train", "test", "corr", "ok"
    );
    for s in summarize(&records) {
        println!(
            "{:>6} {:>6} {:>7} {:>10.3e} {:>10.3e} {:>8.4} {:>4}",
            s.n,
            s.constraint.to_string(),
            s.init.to_string(),
            s.train_loss,
            s.test_loss,
            s.corr,
            s.trials_ok
        );
    }
    let keys = failed_keys(&records);
    if !keys.is_empty() {
        return Err(CliError::Numeric {
            message: format!("{} run(s) failed; records.csv keeps them with NaN metrics", keys.len()),
            keys,
        });
    }
    Ok(())
}

fn experiment_sparse(args: SparseArgs) -> Result<(), CliError> {
    let init: Option<InitMode> = args.init.map(Into::into);
    let mut preset = ExperimentSpec::sparse_reference(init.unwrap_or(InitMode::Good));
    if args.preset == Preset::Smoke {
        preset.p = 20;
        preset.h = 4;
        preset.s = 3;
        preset.n_grid = vec![40, 80];
        preset.n_test = 100;
        preset.trials = 2;
        preset.iters = 200;
    }
    let mut spec = config::resolve(&preset, "master_seed", args.run.config.as_deref(), &args)?;
    if let Some(arms) = &args.arms {
        let init = init.unwrap_or(InitMode::Good);
        spec.arms = arms.iter().map(|&c| Arm::new(c, init)).collect();
    } else if let Some(init) = init {
        spec.arms.iter_mut().for_each(|a| a.init = init);
    }
    sweep(spec, &args.run, args.jobs)
}

fn experiment_cnn(args: CnnArgs) -> Result<(), CliError> {
    let mut preset = ExperimentSpec::cnn_reference();
    if args.preset == Preset::Smoke {
        preset.p = 21;
        preset.kernels = 2;
        preset.width = 5;
        preset.stride = 4;
        preset.n_grid = vec![30, 60];
        preset.n_test = 100;
        preset.trials = 2;
        preset.iters = 200;
    }
    let spec = config::resolve(&preset, "master_seed", args.run.config.as_deref(), &args)?;
    sweep(spec, &args.run, args.jobs)
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let started = chrono::Utc::now();
    let t0 = Instant::now();
    let cfg: TrainSettings = config::resolve(&TrainSettings::default(), "seed", args.run.config.as_deref(), &args)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wstar = gen_sparse_teacher(cfg.h, cfg.p, cfg.s, &mut rng)?;
    let o = DVector::from_element(cfg.h, 1.0);
    let data = gen_dataset(&wstar, &o, cfg.n, cfg.activation, &mut rng)?;
    let w0 = init_weights(cfg.init, &wstar, (1.0 / cfg.h as f64).sqrt(), &mut rng);
    let budget_count = |default: usize| -> Result<usize, CliError> {
        match cfg.budget {
            None => Ok(default),
            Some(b) if b >= 1.0 && b.fract() == 0.0 => Ok(b as usize),
            Some(b) => Err(CliError::Usage(format!(
                "budget {b} must be a positive integer for this constraint"
            ))),
        }
    };
    let constraint = match cfg.constraint {
        TrainConstraint::None => ConstraintSpec::None,
        TrainConstraint::L0 => ConstraintSpec::Sparsity {
            s: budget_count(cfg.h * cfg.s)?,
        },
        TrainConstraint::L1 => ConstraintSpec::L1Ball {
            radius: cfg.budget.unwrap_or_else(|| wstar.iter().map(|v| v.abs()).sum()),
        },
        TrainConstraint::Rank => ConstraintSpec::Rank {
            r: budget_count(cfg.h.min(cfg.p))?,
        },
        TrainConstraint::Nuclear => ConstraintSpec::NuclearBall {
            radius: cfg.budget.unwrap_or_else(|| singular_values(&wstar).sum()),
        },
    };
    constraint.validate(cfg.h, cfg.p)?;
    let w0 = constraint.project(&w0)?;
    let mut pgd = PgdConfig::new(cfg.mu, cfg.iters, constraint.clone());
    pgd.stop_tol = cfg.stop_tol;
    let trace = pgd_run(&pgd, &o, &w0, &data, cfg.activation, Some(&wstar))?;

    create_out_dir(&args.run.out_dir)?;
    trace.write_csv(BufWriter::new(File::create(args.run.out_dir.join("trace.csv"))?))?;
    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Other(e.to_string()))?;
    write_manifest(&args.run.out_dir, config, cfg.seed, started, t0)?;
    let last = trace.records.last().expect("trace has the initial record");
    println!(
        "constraint={constraint} iters={} loss={:.6e} dist_to_truth={:.6e}",
        trace.iters_run(),
        last.loss,
        last.dist_to_truth.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn analyze_hessian(args: HessianArgs) -> Result<(), CliError> {
    let started = chrono::Utc::now();
    let t0 = Instant::now();
    let cfg: HessianSettings = config::resolve(&HessianSettings::default(), "seed", args.run.config.as_deref(), &args)?;
    if cfg.h > cfg.p {
        return Err(CliError::Usage(format!("need h <= p, got h={} p={}", cfg.h, cfg.p)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wstar = random_orthonormal_columns(cfg.p, cfg.h, &mut rng)?.transpose();
    let o = DVector::from_element(cfg.h, 1.0);
    let data = gen_dataset(&wstar, &o, cfg.n, cfg.activation, &mut rng)?;
    let hess = hessian_ground_truth(&o, &wstar, &data, cfg.activation)?;

    let inputs = format!(
        "h={} p={} n={} activation={}",
        cfg.h,
        cfg.p,
        cfg.n,
        cfg.activation.name()
    );
    let seed = Some(cfg.seed);
    let mut entries = vec![DiagnosticEntry::new(
        "hessian_min_eig",
        sym_min_eigen(&hess).0,
        inputs.clone(),
        seed,
    )];
    if let Some(s) = cfg.cone_s {
        let re = restricted_eigenvalue(&hess, &Directions::SparseCone { s })?;
        let label = if re.exhaustive { "exhaustive" } else { "sampled" };
        entries.push(DiagnosticEntry::new(
            "restricted_eig_sparse",
            re.value,
            format!("{inputs} s={s} {label}"),
            seed,
        ));
    }
    match critical_quantities(&o, &wstar, cfg.activation, cfg.n) {
        Ok(q) => entries.extend(q.entries(seed)),
        Err(e) => eprintln!("theory constants skipped: {e}"),
    }

    create_out_dir(&args.run.out_dir)?;
    write_report_csv(
        &entries,
        BufWriter::new(File::create(args.run.out_dir.join("report.csv"))?),
    )?;
    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Other(e.to_string()))?;
    write_manifest(&args.run.out_dir, config, cfg.seed, started, t0)?;
    for e in &entries {
        println!("{:<22} {:.6e}", e.quantity, e.value);
    }
    Ok(())
}

fn covdim(args: CovdimArgs) -> Result<(), CliError> {
    let need = |v: Option<usize>, flag: &str| {
        v.ok_or_else(|| CliError::Usage(format!("--{flag} is required for this constraint")))
    };
    let model = match args.constraint {
        CovConstraint::None => CovModel::Unconstrained,
        CovConstraint::Conv => CovModel::Conv {
            k: need(args.k, "k")?,
            b: need(args.b, "b")?,
        },
        CovConstraint::Sparse => CovModel::Sparse { s: need(args.s, "s")? },
        CovConstraint::L1 => CovModel::L1 { s: need(args.s, "s")? },
        CovConstraint::Subspace => CovModel::Subspace { d: need(args.d, "d")? },
        CovConstraint::Rank | CovConstraint::Nuclear => CovModel::Rank { r: need(args.r, "r")? },
    };
    let res = covering_dimension(model, args.h, args.p)?;
    if args.verbose {
        println!("{} = {}", res.formula, res.value);
    } else {
        println!("{}", res.value);
    }
    Ok(())
}

fn zeta_cmd(args: ZetaArgs) -> Result<(), CliError> {
    let value = match (args.theta, args.alpha, args.beta) {
        (Some(theta), _, _) => zeta(args.activation, theta)?,
        (None, Some(a), Some(b)) => zeta_interval(args.activation, a, b)?,
        _ => return Err(CliError::Usage("give --theta or both --alpha and --beta".into())),
    };
    println!("{value}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ExperimentSparse(a) => experiment_sparse(a),
        Command::ExperimentCnn(a) => experiment_cnn(a),
        Command::Train(a) => train(a),
        Command::AnalyzeHessian(a) => analyze_hessian(a),
        Command::Covdim(a) => covdim(a),
        Command::Zeta(a) => zeta_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric { message, keys }) => {
            eprintln!("numeric failure: {message}");
            for k in keys {
                eprintln!("  {k}");
            }
            ExitCode::from(3)
        }
        Err(CliError::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

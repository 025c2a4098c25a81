//! Teacher–student experiments: planted sparse or convolutional teachers,
//! Gaussian data, good or random initialization, PGD under several
//! constraints, and the per-trial metrics.
//!
//! Every trial derives its own seed from the master seed. Within a trial the
//! teacher, test set, training set and initialization noise come from separate
//! ChaCha streams, so a larger `n` extends the training set instead of
//! redrawing it and all arms of a trial share the same teacher and noise.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::cnn::{fc_from_kernels, kernels_from_fc, ConvGeometry, ConvObjective, KernelBank};
use crate::constraints::ConstraintSpec;
use crate::error::{Error, Result};
use crate::linalg::gaussian_matrix;
use crate::model::{self, Dataset, OutputVector, WeightMatrix};
use crate::pgd::{run_objectives, FcObjective, PgdConfig};

const STREAM_TEACHER: u64 = 0;
const STREAM_TEST: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_INIT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sparse,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Good,
    Random,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Good => "good",
            InitMode::Random => "random",
        })
    }
}

/// Constraint used by an experiment arm. Its parameters are fixed per trial:
/// the ℓ1 radius is the teacher's own `‖W*‖₁` and the ℓ0 budget is `s·h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmConstraint {
    None,
    L1,
    L0,
    Conv,
}

impl fmt::Display for ArmConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmConstraint::None => "none",
            ArmConstraint::L1 => "l1",
            ArmConstraint::L0 => "l0",
            ArmConstraint::Conv => "conv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub constraint: ArmConstraint,
    pub init: InitMode,
}

impl Arm {
    pub fn new(constraint: ArmConstraint, init: InitMode) -> Self {
        Self { constraint, init }
    }
}

/// Full description of a sweep.
///
/// `mu` is given per input coordinate: the step applied to the `1/(2n)` loss
/// is `mu / p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub family: Family,
    pub p: usize,
    /// Hidden width (sparse family).
    pub h: usize,
    /// Nonzeros per teacher row (sparse family).
    pub s: usize,
    pub kernels: usize,
    pub width: usize,
    pub stride: usize,
    pub n_grid: Vec<usize>,
    pub n_test: usize,
    pub trials: usize,
    pub arms: Vec<Arm>,
    pub activation: ActivationKind,
    pub mu: f64,
    pub iters: usize,
    pub master_seed: u64,
}

impl ExperimentSpec {
    /// Sparse teacher, good initialization: `p = 80, h = 20, s = 8`,
    /// `n = 100, 200, …, 1000`.
    pub fn sparse_reference(init: InitMode) -> Self {
        let n_grid = match init {
            InitMode::Good => (1..=10).map(|k| 100 * k).collect(),
            InitMode::Random => (1..=10).map(|k| 200 * k).collect(),
        };
        Self {
            family: Family::Sparse,
            p: 80,
            h: 20,
            s: 8,
            kernels: 0,
            width: 0,
            stride: 0,
            n_grid,
            n_test: 1000,
            trials: 20,
            arms: [ArmConstraint::None, ArmConstraint::L1, ArmConstraint::L0]
                .into_iter()
                .map(|c| Arm::new(c, init))
                .collect(),
            activation: ActivationKind::Relu,
            mu: 5.0,
            iters: 2000,
            master_seed: 0,
        }
    }

    /// Convolutional teacher: `p = 81, b = 15, stride 6, k = 4`, so `r = 12`.
    pub fn cnn_reference() -> Self {
        Self {
            family: Family::Cnn,
            p: 81,
            h: 0,
            s: 0,
            kernels: 4,
            width: 15,
            stride: 6,
            n_grid: (1..=10).map(|k| 50 * k).collect(),
            n_test: 1000,
            trials: 20,
            arms: vec![
                Arm::new(ArmConstraint::None, InitMode::Random),
                Arm::new(ArmConstraint::Conv, InitMode::Random),
                Arm::new(ArmConstraint::Conv, InitMode::Good),
            ],
            activation: ActivationKind::Relu,
            mu: 1.0,
            iters: 2000,
            master_seed: 0,
        }
    }

    pub fn geometry(&self) -> Result<ConvGeometry> {
        ConvGeometry::new(self.kernels, self.width, self.stride, self.p)
    }

    /// Hidden width of the fully-connected form.
    pub fn hidden(&self) -> Result<usize> {
        match self.family {
            Family::Sparse => Ok(self.h),
            Family::Cnn => Ok(self.geometry()?.hidden()),
        }
    }

    /// Step applied to the loss, `mu / p`.
    pub fn step_size(&self) -> f64 {
        self.mu / self.p as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::domain("p must be positive"));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials must be at least 1"));
        }
        if self.n_test < 2 {
            return Err(Error::domain("n_test must be at least 2"));
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::domain("n grid must be non-empty with every n >= 2"));
        }
        if self.arms.is_empty() {
            return Err(Error::domain("no experiment arms"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) || self.iters == 0 {
            return Err(Error::domain("mu must be positive and iters at least 1"));
        }
        match self.family {
            Family::Sparse => {
                if self.h == 0 || self.s == 0 || self.s > self.p {
                    return Err(Error::domain(format!(
                        "sparse teacher needs h >= 1 and 1 <= s <= p, got h={} s={}",
                        self.h, self.s
                    )));
                }
                if self.arms.iter().any(|a| a.constraint == ArmConstraint::Conv) {
                    return Err(Error::domain("conv constraint needs the cnn family"));
                }
            }
            Family::Cnn => {
                self.geometry()?;
                if self
                    .arms
                    .iter()
                    .any(|a| matches!(a.constraint, ArmConstraint::L1 | ArmConstraint::L0))
                {
                    return Err(Error::domain("l1/l0 arms are defined for the sparse family"));
                }
            }
        }
        Ok(())
    }
}

/// One `(trial, n, arm)` outcome. Losses are normalized; `recovery_err` is
/// `‖Ŵ − W*‖_F / ‖W*‖_F`. Failed runs carry `status = "error: …"` and NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub trial: usize,
    pub n: usize,
    pub constraint: ArmConstraint,
    pub init: InitMode,
    pub train_loss: f64,
    pub test_loss: f64,
    pub corr: f64,
    pub recovery_err: f64,
    pub iters: usize,
    pub seed: u64,
    pub status: String,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// SplitMix64 finalizer applied to `master + trial`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut z = master.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `h × p` teacher with exactly `s` nonzeros per row at uniform positions and
/// `N(0, p/(hs))` values, so `E‖W*x‖² = ‖x‖²`.
pub fn gen_sparse_teacher<R: Rng + ?Sized>(h: usize, p: usize, s: usize, rng: &mut R) -> Result<WeightMatrix> {
    if h == 0 || s == 0 || s > p {
        return Err(Error::domain(format!(
            "need h >= 1 and 1 <= s <= p, got h={h} s={s} p={p}"
        )));
    }
    let std = (p as f64 / (h * s) as f64).sqrt();
    let mut w = DMatrix::zeros(h, p);
    for i in 0..h {
        let support = sample(rng, p, s);
        for j in support.iter() {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            w[(i, j)] = std * g;
        }
    }
    Ok(w)
}

/// Kernels with i.i.d. `N(0, p/(hb))` entries where `h = k·r`.
pub fn gen_cnn_teacher<R: Rng + ?Sized>(geometry: &ConvGeometry, rng: &mut R) -> Result<KernelBank> {
    geometry.validate()?;
    let std = (geometry.input_dim as f64 / (geometry.hidden() * geometry.width) as f64).sqrt();
    KernelBank::new(gaussian_matrix(geometry.kernels, geometry.width, std, rng), *geometry)
}

/// `n` standard Gaussian inputs with noiseless labels `oᵀσ(W*x)`.
pub fn gen_dataset<R: Rng + ?Sized>(
    teacher: &WeightMatrix,
    o: &OutputVector,
    n: usize,
    kind: ActivationKind,
    rng: &mut R,
) -> Result<Dataset> {
    let x = gaussian_matrix(n, teacher.ncols(), 1.0, rng);
    let y = model::predict(o, teacher, &x, kind)?;
    Dataset::new(x, y)
}

/// `W* + Z` (good) or `Z` (random) with `Z` i.i.d. `N(0, noise_std²)`.
pub fn init_weights<R: Rng + ?Sized>(
    mode: InitMode,
    teacher: &WeightMatrix,
    noise_std: f64,
    rng: &mut R,
) -> WeightMatrix {
    let z = gaussian_matrix(teacher.nrows(), teacher.ncols(), noise_std, rng);
    match mode {
        InitMode::Good => teacher + z,
        InitMode::Random => z,
    }
}

fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.mean();
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `var(y − ŷ) / var(y)` with unbiased sample variances.
pub fn normalized_loss(predictions: &DVector<f64>, labels: &DVector<f64>) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    let vy = sample_variance(labels);
    if !(vy > 0.0) {
        return Err(Error::domain("labels have zero variance"));
    }
    Ok(sample_variance(&(labels - predictions)) / vy)
}

/// Mean over rows of `W*` of the largest signed cosine with any row of `Ŵ`.
pub fn correlation(truth: &WeightMatrix, estimate: &WeightMatrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::shape("W* and Ŵ differ in shape"));
    }
    let est_norms: Vec<f64> = estimate.row_iter().map(|r| r.norm()).collect();
    let mut total = 0.0;
    for (i, row) in truth.row_iter().enumerate() {
        let nr = row.norm();
        if nr == 0.0 {
            return Err(Error::domain(format!("row {i} of W* is zero")));
        }
        let best = estimate
            .row_iter()
            .zip(&est_norms)
            .map(|(e, &ne)| if ne == 0.0 { 0.0 } else { row.dot(&e) / (nr * ne) })
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / truth.nrows() as f64)
}

struct Trial {
    teacher: WeightMatrix,
    bank: Option<KernelBank>,
    test: Dataset,
    train: Dataset,
    noise: WeightMatrix,
    seed: u64,
}

fn build_trial(spec: &ExperimentSpec, trial: usize, n: usize) -> Result<Trial> {
    let seed = trial_seed(spec.master_seed, trial);
    let h = spec.hidden()?;
    let o = DVector::from_element(h, 1.0);
    let mut teacher_rng = stream(seed, STREAM_TEACHER);
    let (teacher, bank, noise_std) = match spec.family {
        Family::Sparse => (
            gen_sparse_teacher(spec.h, spec.p, spec.s, &mut teacher_rng)?,
            None,
            (1.0 / spec.h as f64).sqrt(),
        ),
        Family::Cnn => {
            let g = spec.geometry()?;
            let bank = gen_cnn_teacher(&g, &mut teacher_rng)?;
            let std = (spec.p as f64 / (spec.width * spec.kernels) as f64).sqrt();
            (fc_from_kernels(&bank), Some(bank), std)
        }
    };
    let test = gen_dataset(
        &teacher,
        &o,
        spec.n_test,
        spec.activation,
        &mut stream(seed, STREAM_TEST),
    )?;
    let train = gen_dataset(&teacher, &o, n, spec.activation, &mut stream(seed, STREAM_TRAIN))?;
    let noise = gaussian_matrix(h, spec.p, noise_std, &mut stream(seed, STREAM_INIT));
    Ok(Trial {
        teacher,
        bank,
        test,
        train,
        noise,
        seed,
    })
}

/// Runs one arm and returns `(Ŵ, iterations)`.
fn fit(spec: &ExperimentSpec, arm: Arm, t: &Trial) -> Result<(WeightMatrix, usize)> {
    let h = t.teacher.nrows();
    let o = DVector::from_element(h, 1.0);
    let w0 = match arm.init {
        InitMode::Good => &t.teacher + &t.noise,
        InitMode::Random => t.noise.clone(),
    };
    let mu = spec.step_size();
    if arm.constraint == ArmConstraint::Conv {
        // Projected FC steps with rate μ equal kernel steps with rate μ/r.
        let bank = t
            .bank
            .as_ref()
            .ok_or_else(|| Error::domain("conv arm without a kernel teacher"))?;
        let g = *bank.geometry();
        let k0 = kernels_from_fc(&w0, &g)?;
        let o_conv = DMatrix::from_element(g.kernels, g.positions, 1.0);
        let obj = ConvObjective::new(g, o_conv, &t.train, spec.activation)?;
        let cfg = PgdConfig::new(mu / g.positions as f64, spec.iters, ConstraintSpec::None);
        let trace = run_objectives(&cfg, &k0, std::slice::from_ref(&obj), None)?;
        let what = fc_from_kernels(&KernelBank::new(trace.final_w.clone(), g)?);
        return Ok((what, trace.iters_run()));
    }
    let constraint = match arm.constraint {
        ArmConstraint::None => ConstraintSpec::None,
        ArmConstraint::L1 => ConstraintSpec::L1Ball {
            radius: t.teacher.iter().map(|v| v.abs()).sum(),
        },
        ArmConstraint::L0 => ConstraintSpec::Sparsity { s: spec.s * spec.h },
        ArmConstraint::Conv => unreachable!(),
    };
    let w0 = constraint.project(&w0)?;
    let obj = FcObjective {
        o: &o,
        data: &t.train,
        kind: spec.activation,
    };
    let cfg = PgdConfig::new(mu, spec.iters, constraint);
    let trace = run_objectives(&cfg, &w0, std::slice::from_ref(&obj), None)?;
    let iters = trace.iters_run();
    Ok((trace.final_w, iters))
}

fn evaluate(spec: &ExperimentSpec, t: &Trial, what: &WeightMatrix) -> Result<(f64, f64, f64, f64)> {
    let o = DVector::from_element(what.nrows(), 1.0);
    let train_pred = model::predict(&o, what, t.train.inputs(), spec.activation)?;
    let test_pred = model::predict(&o, what, t.test.inputs(), spec.activation)?;
    let train = normalized_loss(&train_pred, t.train.labels())?;
    let test = normalized_loss(&test_pred, t.test.labels())?;
    let corr = correlation(&t.teacher, what)?;
    let rec = (what - &t.teacher).norm() / t.teacher.norm();
    Ok((train, test, corr, rec))
}

/// Runs a single `(trial, n, arm)` cell. Failures become error records.
pub fn run_cell(spec: &ExperimentSpec, trial: usize, n: usize, arm: Arm) -> ExperimentRecord {
    let seed = trial_seed(spec.master_seed, trial);
    let outcome = build_trial(spec, trial, n).and_then(|t| {
        let (what, iters) = fit(spec, arm, &t)?;
        let metrics = evaluate(spec, &t, &what)?;
        Ok((metrics, iters, t.seed))
    });
    let (train_loss, test_loss, corr, recovery_err, iters, status) = match outcome {
        Ok(((a, b, c, d), iters, _)) => (a, b, c, d, iters, "ok".to_string()),
        Err(e) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0, format!("error: {e}")),
    };
    ExperimentRecord {
        trial,
        n,
        constraint: arm.constraint,
        init: arm.init,
        train_loss,
        test_loss,
        corr,
        recovery_err,
        iters,
        seed,
        status,
    }
}

/// Runs every `(n, arm, trial)` cell, ordered by that key. With `jobs > 1`
/// the cells run on a thread pool; the records are identical either way.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let cells: Vec<(usize, Arm, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| {
            spec.arms
                .iter()
                .flat_map(move |&arm| (0..spec.trials).map(move |t| (n, arm, t)))
        })
        .collect();
    if jobs <= 1 {
        return Ok(cells.iter().map(|&(n, arm, t)| run_cell(spec, t, n, arm)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(|&(n, arm, t)| run_cell(spec, t, n, arm)).collect()))
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record([
        "trial",
        "n",
        "constraint",
        "init",
        "train_loss",
        "test_loss",
        "corr",
        "recovery_err",
        "iters",
        "seed",
        "status",
    ])?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Trial means for one `(n, constraint, init)` group, over successful trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub constraint: ArmConstraint,
    pub init: InitMode,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub corr: f64,
    pub recovery_err: f64,
}

/// Groups records by `(n, constraint, init)` in first-seen order.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<Summary> {
    let mut out: Vec<Summary> = Vec::new();
    let mut sums: Vec<[f64; 4]> = Vec::new();
    for r in records {
        let idx = match out
            .iter()
            .position(|s| s.n == r.n && s.constraint == r.constraint && s.init == r.init)
        {
            Some(i) => i,
            None => {
                out.push(Summary {
                    n: r.n,
                    constraint: r.constraint,
                    init: r.init,
                    trials_ok: 0,
                    trials_failed: 0,
                    train_loss: f64::NAN,
                    test_loss: f64::NAN,
                    corr: f64::NAN,
                    recovery_err: f64::NAN,
                });
                sums.push([0.0; 4]);
                out.len() - 1
            }
        };
        if r.is_ok() {
            out[idx].trials_ok += 1;
            let s = &mut sums[idx];
            s[0] += r.train_loss;
            s[1] += r.test_loss;
            s[2] += r.corr;
            s[3] += r.recovery_err;
        } else {
            out[idx].trials_failed += 1;
        }
    }
    for (s, t) in out.iter_mut().zip(&sums) {
        if s.trials_ok > 0 {
            let k = s.trials_ok as f64;
            s.train_loss = t[0] / k;
            s.test_loss = t[1] / k;
            s.corr = t[2] / k;
            s.recovery_err = t[3] / k;
        }
    }
    out
}

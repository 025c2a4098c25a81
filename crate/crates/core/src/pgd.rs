//! Projected gradient descent `W ← P_C(W − μ∇L(W))`.
//!
//! The drivers work on any [`Objective`], so the same loop runs the
//! fully-connected model, the kernel-space CNN and the collapsed layer of the
//! random-activation network.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::constraints::ConstraintSpec;
use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::model::{self, Dataset, OutputVector, WeightMatrix};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// A differentiable loss over a parameter matrix.
pub trait Objective {
    fn loss_and_gradient(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>;

    fn loss(&self, w: &DMatrix<f64>) -> Result<f64> {
        self.loss_and_gradient(w).map(|(l, _)| l)
    }
}

/// Squared loss of `oᵀσ(Wx)` on a fixed dataset.
#[derive(Debug, Clone, Copy)]
pub struct FcObjective<'a> {
    pub o: &'a OutputVector,
    pub data: &'a Dataset,
    pub kind: ActivationKind,
}

impl Objective for FcObjective<'_> {
    fn loss_and_gradient(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        model::loss_and_gradient(self.o, w, self.data, self.kind)
    }

    fn loss(&self, w: &DMatrix<f64>) -> Result<f64> {
        model::loss(self.o, w, self.data, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSchedule {
    /// Every step uses the full dataset.
    Single,
    /// The data is split into `K` equal batches; step `i` (1-based) uses
    /// batch `min(i, K)`.
    FreshBatches(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub mu: f64,
    pub max_iters: usize,
    pub constraint: ConstraintSpec,
    /// Early exit once a step moves the iterate by at most this much in
    /// Frobenius norm. `None` runs the full budget.
    pub stop_tol: Option<f64>,
    pub batch_schedule: BatchSchedule,
}

impl PgdConfig {
    pub fn new(mu: f64, max_iters: usize, constraint: ConstraintSpec) -> Self {
        Self {
            mu,
            max_iters,
            constraint,
            stop_tol: None,
            batch_schedule: BatchSchedule::Single,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!(
                "learning rate must be positive, got {}",
                self.mu
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::domain("max_iters must be at least 1"));
        }
        if let Some(tol) = self.stop_tol {
            if !(tol >= 0.0) {
                return Err(Error::domain(format!("stop_tol must be non-negative, got {tol}")));
            }
        }
        if self.batch_schedule == BatchSchedule::FreshBatches(0) {
            return Err(Error::domain("batch count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PgdRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub dist_to_truth: Option<f64>,
}

/// One record per visited iterate `W_0, W_1, …`; the loss and gradient are
/// those of the batch used for the step taken from that iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdTrace {
    pub records: Vec<PgdRecord>,
    pub final_w: DMatrix<f64>,
    pub stopped_early: bool,
}

impl PgdTrace {
    /// Number of steps taken.
    pub fn iters_run(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["iter", "loss", "grad_norm", "dist_to_truth"])?;
        for r in &self.records {
            wtr.write_record([
                r.iter.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.grad_norm),
                r.dist_to_truth.map_or(String::new(), |d| format!("{d:e}")),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `P_C(W − μ·grad)`.
pub fn pgd_step(w: &WeightMatrix, grad: &WeightMatrix, mu: f64, spec: &ConstraintSpec) -> Result<WeightMatrix> {
    step_at(0, w, grad, mu, spec)
}

fn step_at(iter: usize, w: &DMatrix<f64>, grad: &DMatrix<f64>, mu: f64, spec: &ConstraintSpec) -> Result<DMatrix<f64>> {
    if w.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "iterate is {}x{} but gradient is {}x{}",
            w.nrows(),
            w.ncols(),
            grad.nrows(),
            grad.ncols()
        )));
    }
    if !all_finite(grad) {
        return Err(Error::NonFinite { what: "gradient", iter });
    }
    let moved = w - grad * mu;
    if !all_finite(&moved) {
        return Err(Error::NonFinite { what: "iterate", iter });
    }
    spec.project(&moved)
}

/// Plain PGD on a fixed dataset.
pub fn pgd_run(
    cfg: &PgdConfig,
    o: &OutputVector,
    w0: &WeightMatrix,
    data: &Dataset,
    kind: ActivationKind,
    truth: Option<&WeightMatrix>,
) -> Result<PgdTrace> {
    if cfg.batch_schedule != BatchSchedule::Single {
        return Err(Error::domain(
            "pgd_run needs the single-batch schedule; use pgd_run_batched",
        ));
    }
    let obj = FcObjective { o, data, kind };
    run_objectives(cfg, w0, std::slice::from_ref(&obj), truth)
}

/// PGD with `K` fresh batches: the data is cut into `K` contiguous blocks and
/// step `i` uses block `min(i, K)`.
pub fn pgd_run_batched(
    cfg: &PgdConfig,
    o: &OutputVector,
    w0: &WeightMatrix,
    data: &Dataset,
    kind: ActivationKind,
    truth: Option<&WeightMatrix>,
) -> Result<PgdTrace> {
    let k = match cfg.batch_schedule {
        BatchSchedule::Single => 1,
        BatchSchedule::FreshBatches(k) => k,
    };
    if k == 0 || !data.n().is_multiple_of(k) {
        return Err(Error::domain(format!(
            "{} samples cannot be split into {k} equal batches",
            data.n()
        )));
    }
    let size = data.n() / k;
    let batches = (0..k)
        .map(|b| data.slice(b * size..(b + 1) * size))
        .collect::<Result<Vec<_>>>()?;
    let objs: Vec<FcObjective> = batches.iter().map(|d| FcObjective { o, data: d, kind }).collect();
    run_objectives(cfg, w0, &objs, truth)
}

/// Runs PGD where step `i` (1-based) differentiates `objectives[min(i, K) − 1]`.
/// A single objective gives the fixed-dataset iteration.
pub fn run_objectives<O: Objective>(
    cfg: &PgdConfig,
    w0: &DMatrix<f64>,
    objectives: &[O],
    truth: Option<&DMatrix<f64>>,
) -> Result<PgdTrace> {
    cfg.validate()?;
    if objectives.is_empty() {
        return Err(Error::domain("no objective to minimize"));
    }
    if let Some(t) = truth {
        if t.shape() != w0.shape() {
            return Err(Error::shape("ground truth and initial iterate differ in shape"));
        }
    }
    if !all_finite(w0) {
        return Err(Error::NonFinite {
            what: "initial iterate",
            iter: 0,
        });
    }
    let batch = |iter: usize| &objectives[iter.min(objectives.len() - 1)];
    let mut w = w0.clone();
    let mut records = Vec::with_capacity(cfg.max_iters + 1);
    let mut stopped_early = false;
    for iter in 0..=cfg.max_iters {
        let (loss, grad) = batch(iter).loss_and_gradient(&w)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { iter, loss });
        }
        records.push(PgdRecord {
            iter,
            loss,
            grad_norm: grad.norm(),
            dist_to_truth: truth.map(|t| (&w - t).norm()),
        });
        if iter == cfg.max_iters || stopped_early {
            break;
        }
        let next = step_at(iter, &w, &grad, cfg.mu, &cfg.constraint)?;
        if let Some(tol) = cfg.stop_tol {
            stopped_early = (&next - &w).norm() <= tol;
        }
        w = next;
    }
    Ok(PgdTrace {
        records,
        final_w: w,
        stopped_early,
    })
}

/// Least-squares slope of `ln(dist²)` against the iteration index, over the
/// records whose distance is positive and above `floor`. Returns `None` when
/// fewer than two such points exist or the trace has no distances.
pub fn log_linear_rate(trace: &PgdTrace, floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = trace
        .records
        .iter()
        .filter_map(|r| r.dist_to_truth.map(|d| (r.iter as f64, d)))
        .filter(|(_, d)| *d > floor && *d > 0.0)
        .map(|(i, d)| (i, (d * d).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(
        seed: u64,
        h: usize,
        p: usize,
        n: usize,
        kind: ActivationKind,
    ) -> (OutputVector, WeightMatrix, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = DVector::from_element(h, 1.0);
        let w = gaussian_matrix(h, p, (1.0 / h as f64).sqrt(), &mut rng);
        let x = gaussian_matrix(n, p, 1.0, &mut rng);
        let y = model::predict(&o, &w, &x, kind).unwrap();
        (o, w, Dataset::new(x, y).unwrap())
    }

    #[test]
    fn step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = gaussian_matrix(3, 4, 1.0, &mut rng);
        let g = gaussian_matrix(3, 4, 1.0, &mut rng);
        let spec = ConstraintSpec::Sparsity { s: 5 };
        assert_eq!(pgd_step(&w, &g, 0.0, &spec).unwrap(), spec.project(&w).unwrap());
        assert_eq!(pgd_step(&w, &g, 0.3, &ConstraintSpec::None).unwrap(), &w - &g * 0.3);
        assert_eq!(
            pgd_step(&w, &g, 0.3, &spec).unwrap(),
            spec.project(&(&w - &g * 0.3)).unwrap()
        );
        let mut bad = g.clone();
        bad[(1, 1)] = f64::NAN;
        assert!(matches!(pgd_step(&w, &bad, 0.1, &spec), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn fixed_point_at_truth() {
        let (o, w, data) = instance(2, 3, 5, 40, ActivationKind::Tanh);
        let cfg = PgdConfig::new(0.5, 20, ConstraintSpec::None);
        let trace = pgd_run(&cfg, &o, &w, &data, ActivationKind::Tanh, Some(&w)).unwrap();
        assert_eq!(trace.records.len(), 21);
        assert!(trace
            .records
            .iter()
            .all(|r| r.loss == 0.0 && r.dist_to_truth == Some(0.0)));
    }

    #[test]
    fn divergence_is_reported() {
        let (o, w, data) = instance(3, 3, 5, 40, ActivationKind::Identity);
        let cfg = PgdConfig::new(1e3, 200, ConstraintSpec::None);
        let w0 = DMatrix::zeros(3, 5);
        let err = pgd_run(&cfg, &o, &w0, &data, ActivationKind::Identity, Some(&w)).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }

    #[test]
    fn batched_schedule_uses_min_i_k() {
        let (o, _, data) = instance(4, 2, 3, 30, ActivationKind::Sigmoid);
        let mut cfg = PgdConfig::new(0.2, 6, ConstraintSpec::None);
        cfg.batch_schedule = BatchSchedule::FreshBatches(3);
        let w0 = DMatrix::from_element(2, 3, 0.1);
        let trace = pgd_run_batched(&cfg, &o, &w0, &data, ActivationKind::Sigmoid, None).unwrap();

        let batches: Vec<Dataset> = (0..3).map(|b| data.slice(b * 10..(b + 1) * 10).unwrap()).collect();
        let mut w = w0.clone();
        for step in 1..=6usize {
            let d = &batches[step.min(3) - 1];
            let (l, g) = model::loss_and_gradient(&o, &w, d, ActivationKind::Sigmoid).unwrap();
            assert_eq!(trace.records[step - 1].loss, l);
            w = &w - g * 0.2;
        }
        assert_eq!(trace.final_w, w);

        cfg.batch_schedule = BatchSchedule::FreshBatches(7);
        assert!(pgd_run_batched(&cfg, &o, &w0, &data, ActivationKind::Sigmoid, None).is_err());
    }

    #[test]
    fn stop_tol_exits_early() {
        let (o, w, data) = instance(5, 2, 3, 50, ActivationKind::Identity);
        let mut cfg = PgdConfig::new(0.5, 10_000, ConstraintSpec::None);
        cfg.stop_tol = Some(1e-12);
        let w0 = DMatrix::zeros(2, 3);
        let trace = pgd_run(&cfg, &o, &w0, &data, ActivationKind::Identity, Some(&w)).unwrap();
        assert!(trace.stopped_early);
        assert!(trace.iters_run() < 10_000);
    }

    #[test]
    fn trace_csv_layout() {
        let (o, w, data) = instance(6, 2, 3, 10, ActivationKind::Tanh);
        let cfg = PgdConfig::new(0.1, 2, ConstraintSpec::None);
        let trace = pgd_run(&cfg, &o, &w, &data, ActivationKind::Tanh, None).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,loss,grad_norm,dist_to_truth"));
        assert!(lines.next().unwrap().ends_with(','));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(PgdConfig::new(0.0, 5, ConstraintSpec::None).validate().is_err());
        assert!(PgdConfig::new(0.1, 0, ConstraintSpec::None).validate().is_err());
        let mut cfg = PgdConfig::new(0.1, 5, ConstraintSpec::None);
        cfg.batch_schedule = BatchSchedule::FreshBatches(0);
        assert!(cfg.validate().is_err());
    }
}

//! One-hidden-layer network `y = oᵀσ(Wx)`: predictions, the `1/(2n)` squared
//! loss and its gradient with respect to `W`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

/// Hidden-layer weights, `h × p`.
pub type WeightMatrix = DMatrix<f64>;

/// Output-layer weights, length `h`.
pub type OutputVector = DVector<f64>;

/// Inputs (rows `x_i`) and labels `y_i`. A transposed copy of the inputs is
/// kept so that both products in the gradient are plain matrix products.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    inputs_t: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::domain("dataset must contain at least one sample"));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        let inputs_t = inputs.transpose();
        Ok(Self {
            inputs,
            inputs_t,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn p(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.inputs.row(i).transpose()
    }

    /// Contiguous block of samples.
    pub fn slice(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start >= rows.end || rows.end > self.n() {
            return Err(Error::shape(format!("sample range {rows:?} outside 0..{}", self.n())));
        }
        let len = rows.end - rows.start;
        Dataset::new(
            self.inputs.rows(rows.start, len).into_owned(),
            self.labels.rows(rows.start, len).into_owned(),
        )
    }

    /// Same inputs, new labels.
    pub fn with_labels(&self, labels: DVector<f64>) -> Result<Self> {
        Dataset::new(self.inputs.clone(), labels)
    }
}

fn check_shapes(o: &OutputVector, w: &WeightMatrix, p: usize) -> Result<()> {
    if w.nrows() == 0 || w.ncols() == 0 {
        return Err(Error::shape("weight matrix must be at least 1x1"));
    }
    if o.len() != w.nrows() {
        return Err(Error::shape(format!(
            "output vector has length {} but W has {} rows",
            o.len(),
            w.nrows()
        )));
    }
    if w.ncols() != p {
        return Err(Error::shape(format!(
            "W has {} columns but inputs have dimension {p}",
            w.ncols()
        )));
    }
    Ok(())
}

/// `oᵀσ(Wx)` for a single input.
pub fn forward(o: &OutputVector, w: &WeightMatrix, x: &DVector<f64>, kind: ActivationKind) -> Result<f64> {
    check_shapes(o, w, x.len())?;
    let z = w * x;
    Ok(z.iter().zip(o.iter()).map(|(&zi, &oi)| oi * kind.eval(zi)).sum())
}

/// Predictions for every row of `inputs`.
pub fn predict(
    o: &OutputVector,
    w: &WeightMatrix,
    inputs: &DMatrix<f64>,
    kind: ActivationKind,
) -> Result<DVector<f64>> {
    check_shapes(o, w, inputs.ncols())?;
    let pre = w * inputs.transpose();
    Ok(predict_from_preactivations(o, &pre, kind))
}

fn predict_from_preactivations(o: &OutputVector, pre: &DMatrix<f64>, kind: ActivationKind) -> DVector<f64> {
    let (h, n) = pre.shape();
    let mut out = DVector::zeros(n);
    for j in 0..n {
        let col = pre.column(j);
        let mut acc = 0.0;
        for i in 0..h {
            acc += o[i] * kind.eval(col[i]);
        }
        out[j] = acc;
    }
    out
}

/// `L(W) = (1/2n) Σ (y_i − oᵀσ(Wx_i))²`.
pub fn loss(o: &OutputVector, w: &WeightMatrix, data: &Dataset, kind: ActivationKind) -> Result<f64> {
    check_shapes(o, w, data.p())?;
    let pre = w * &data.inputs_t;
    let pred = predict_from_preactivations(o, &pre, kind);
    let n = data.n() as f64;
    Ok(pred
        .iter()
        .zip(data.labels.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (2.0 * n))
}

/// `∇L(W) = (1/n) Σ_j r_j (o ⊙ σ'(Wx_j)) x_jᵀ` with `r_j = oᵀσ(Wx_j) − y_j`.
pub fn gradient(o: &OutputVector, w: &WeightMatrix, data: &Dataset, kind: ActivationKind) -> Result<WeightMatrix> {
    loss_and_gradient(o, w, data, kind).map(|(_, g)| g)
}

/// Loss and gradient from a single pass over the data.
pub fn loss_and_gradient(
    o: &OutputVector,
    w: &WeightMatrix,
    data: &Dataset,
    kind: ActivationKind,
) -> Result<(f64, WeightMatrix)> {
    check_shapes(o, w, data.p())?;
    let n = data.n();
    let h = w.nrows();
    let mut pre = w * &data.inputs_t;
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for j in 0..n {
        let mut col = pre.column_mut(j);
        let mut pred = 0.0;
        for i in 0..h {
            pred += o[i] * kind.eval(col[i]);
        }
        let r = pred - data.labels[j];
        total += r * r;
        let scale = r * inv_n;
        for i in 0..h {
            col[i] = scale * o[i] * kind.deriv(col[i]);
        }
    }
    let grad = pre * &data.inputs;
    Ok((total * 0.5 * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, h: usize, p: usize, n: usize) -> (OutputVector, WeightMatrix, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = gaussian_matrix(h, 1, 1.0, &mut rng).column(0).into_owned();
        let w = gaussian_matrix(h, p, 0.5, &mut rng);
        let x = gaussian_matrix(n, p, 1.0, &mut rng);
        let y = gaussian_matrix(n, 1, 1.0, &mut rng).column(0).into_owned();
        (o, w, Dataset::new(x, y).unwrap())
    }

    #[test]
    fn forward_reference_points() {
        let o = DVector::from_vec(vec![2.0]);
        let w = DMatrix::zeros(1, 2);
        let x = DVector::from_vec(vec![0.3, -7.0]);
        assert!((forward(&o, &w, &x, ActivationKind::Sigmoid).unwrap() - 1.0).abs() < 1e-15);

        let o = DVector::from_vec(vec![1.0, 1.0]);
        let w = DMatrix::identity(2, 2);
        let x = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(forward(&o, &w, &x, ActivationKind::SquaredRelu).unwrap(), 1.0);
    }

    #[test]
    fn identity_forward_is_bilinear_form() {
        let (o, w, data) = random_instance(1, 4, 6, 3);
        let x = data.sample(0);
        let got = forward(&o, &w, &x, ActivationKind::Identity).unwrap();
        let mut want = 0.0;
        for i in 0..4 {
            for j in 0..6 {
                want += o[i] * w[(i, j)] * x[j];
            }
        }
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn shape_errors() {
        let (o, w, data) = random_instance(2, 3, 4, 5);
        let bad_o = DVector::zeros(2);
        assert!(matches!(
            loss(&bad_o, &w, &data, ActivationKind::Tanh),
            Err(Error::Shape(_))
        ));
        let bad_x = DVector::zeros(5);
        assert!(forward(&o, &w, &bad_x, ActivationKind::Tanh).is_err());
        assert!(Dataset::new(DMatrix::zeros(3, 2), DVector::zeros(2)).is_err());
        assert!(matches!(
            Dataset::new(DMatrix::zeros(0, 2), DVector::zeros(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn loss_matches_naive_loop() {
        let (o, w, data) = random_instance(3, 5, 7, 30);
        let got = loss(&o, &w, &data, ActivationKind::Tanh).unwrap();
        let mut want = 0.0;
        for j in 0..data.n() {
            let r = data.labels()[j] - forward(&o, &w, &data.sample(j), ActivationKind::Tanh).unwrap();
            want += r * r;
        }
        want /= 2.0 * data.n() as f64;
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn single_sample_loss_is_half_squared_residual() {
        let o = DVector::from_vec(vec![1.0]);
        let w = DMatrix::from_element(1, 1, 1.0);
        let data = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_vec(vec![4.0])).unwrap();
        // prediction σ(1) = 1 for squared relu, residual 3
        let l = loss(&o, &w, &data, ActivationKind::SquaredRelu).unwrap();
        assert!((l - 4.5).abs() < 1e-15);
        // hand chain rule: (1 − 4)·σ'(1)·x = −3·2·1
        let g = gradient(&o, &w, &data, ActivationKind::SquaredRelu).unwrap();
        assert!((g[(0, 0)] + 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_and_gradient_at_ground_truth() {
        let (o, w, data) = random_instance(4, 3, 5, 20);
        let labels = predict(&o, &w, data.inputs(), ActivationKind::Softplus).unwrap();
        let data = data.with_labels(labels).unwrap();
        let (l, g) = loss_and_gradient(&o, &w, &data, ActivationKind::Softplus).unwrap();
        assert!(l < 1e-28);
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn loss_invariant_to_hidden_permutation() {
        let (o, w, data) = random_instance(5, 4, 3, 25);
        let perm = [2usize, 0, 3, 1];
        let wp = DMatrix::from_fn(4, 3, |i, j| w[(perm[i], j)]);
        let op = DVector::from_fn(4, |i, _| o[perm[i]]);
        let a = loss(&o, &w, &data, ActivationKind::Sigmoid).unwrap();
        let b = loss(&op, &wp, &data, ActivationKind::Sigmoid).unwrap();
        assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn identity_gradient_matches_linear_regression_form() {
        // With σ = id the model is y = xᵀβ, β = Wᵀo, and ∇_W = o ∇_βᵀ.
        let (o, w, data) = random_instance(6, 3, 4, 40);
        let g = gradient(&o, &w, &data, ActivationKind::Identity).unwrap();
        let beta = w.transpose() * &o;
        let x = data.inputs();
        let grad_beta = x.transpose() * (x * &beta - data.labels()) / data.n() as f64;
        let want = &o * grad_beta.transpose();
        assert!((g - want).norm() < 1e-10);
    }
}

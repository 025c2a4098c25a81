//! Deep networks with random ±1 activations.
//!
//! Layer `i` maps `R^{h_i} → R^{h_{i+1}}` and is followed by an entrywise
//! multiplication with a frozen Rademacher mask `r_{i+1}` that is drawn once
//! per sample. For fixed masks the network is linear in its input and in any
//! single layer, so learning layer `ℓ` with the others known reduces to a
//! bilinear regression `y = ôᵀ W_ℓ x̂`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::analysis::network_condition_number;
use crate::constraints::ConstraintSpec;
use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal_columns, spectral_norm};
use crate::pgd::{run_objectives, Objective, PgdConfig, PgdTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct RandActNetwork {
    layers: Vec<DMatrix<f64>>,
    o: DVector<f64>,
    /// `masks[l]` is the `n × h_{l+1}` matrix of signs applied after layer `l`.
    masks: Vec<DMatrix<f64>>,
}

impl RandActNetwork {
    pub fn new(layers: Vec<DMatrix<f64>>, o: DVector<f64>, masks: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].nrows(),
                    i + 1,
                    pair[1].ncols()
                )));
            }
        }
        let last = layers.last().expect("non-empty");
        if o.len() != last.nrows() {
            return Err(Error::shape(format!(
                "output vector has length {} but the last layer has {} rows",
                o.len(),
                last.nrows()
            )));
        }
        if masks.len() != layers.len() {
            return Err(Error::shape(format!(
                "{} layers need {} masks, got {}",
                layers.len(),
                layers.len(),
                masks.len()
            )));
        }
        let n = masks[0].nrows();
        for (l, (m, w)) in masks.iter().zip(&layers).enumerate() {
            if m.nrows() != n || m.ncols() != w.nrows() {
                return Err(Error::shape(format!(
                    "mask {} is {}x{}, expected {n}x{}",
                    l + 1,
                    m.nrows(),
                    m.ncols(),
                    w.nrows()
                )));
            }
            if m.iter().any(|v| *v != 1.0 && *v != -1.0) {
                return Err(Error::domain(format!("mask {} has entries other than ±1", l + 1)));
            }
        }
        Ok(Self { layers, o, masks })
    }

    /// Draws fresh Rademacher masks for `n` samples.
    pub fn with_random_masks<R: Rng + ?Sized>(
        layers: Vec<DMatrix<f64>>,
        o: DVector<f64>,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let masks = layers.iter().map(|w| rademacher_matrix(n, w.nrows(), rng)).collect();
        Self::new(layers, o, masks)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn samples(&self) -> usize {
        self.masks[0].nrows()
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }

    pub fn output(&self) -> &DVector<f64> {
        &self.o
    }

    /// Mask applied to the output of layer `l` for one sample.
    pub fn mask(&self, l: usize, sample: usize) -> DVector<f64> {
        self.masks[l].row(sample).transpose()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }
}

fn rademacher_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    m
}

pub fn rademacher_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    rademacher_matrix(len, 1, rng).column(0).into_owned()
}

/// Layers with orthonormal rows or columns (whichever the shape allows) for
/// widths `dims = [h_0, …, h_D]`.
pub fn orthonormal_layers<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::domain("need at least two positive widths"));
    }
    dims.windows(2)
        .map(|w| {
            let (cols, rows) = (w[0], w[1]);
            if rows <= cols {
                random_orthonormal_columns(cols, rows, rng).map(|q| q.transpose())
            } else {
                random_orthonormal_columns(rows, cols, rng)
            }
        })
        .collect()
}

/// Samples orthonormal layers and a Rademacher output vector, redrawing until
/// the condition number of layer `ell` is at most `max_kappa`.
pub fn sample_conditioned_network<R: Rng + ?Sized>(
    dims: &[usize],
    ell: usize,
    n: usize,
    max_kappa: f64,
    max_tries: usize,
    rng: &mut R,
) -> Result<RandActNetwork> {
    if ell + 1 >= dims.len() {
        return Err(Error::domain(format!(
            "layer {ell} does not exist for {} widths",
            dims.len()
        )));
    }
    for _ in 0..max_tries {
        let layers = orthonormal_layers(dims, rng)?;
        let o = rademacher_vector(dims[dims.len() - 1], rng);
        match network_condition_number(&layers, &o, ell) {
            Ok(k) if k <= max_kappa => return RandActNetwork::with_random_masks(layers, o, n, rng),
            Ok(_) | Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Condition(format!(
        "no draw with layer condition number <= {max_kappa} in {max_tries} tries"
    )))
}

/// `oᵀ(r_D ⊙ W_{D−1}(… r_1 ⊙ W_0 x))` for sample `i`.
pub fn randact_forward(net: &RandActNetwork, sample: usize, x: &DVector<f64>) -> Result<f64> {
    if sample >= net.samples() {
        return Err(Error::domain(format!(
            "sample {sample} has no masks ({} drawn)",
            net.samples()
        )));
    }
    if x.len() != net.input_dim() {
        return Err(Error::shape(format!(
            "input has length {}, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let v = push_forward(net, sample, x, net.depth());
    Ok(net.o.dot(&v))
}

/// Applies layers `0..upto` with their masks.
fn push_forward(net: &RandActNetwork, sample: usize, x: &DVector<f64>, upto: usize) -> DVector<f64> {
    let mut v = x.clone();
    for l in 0..upto {
        v = (&net.layers[l] * v).component_mul(&net.masks[l].row(sample).transpose());
    }
    v
}

/// `r_{ℓ+1} ⊙ W_{ℓ+1}ᵀ(… r_{D−1} ⊙ W_{D−1}ᵀ(r_D ⊙ o))`.
fn pull_back(net: &RandActNetwork, sample: usize, ell: usize) -> DVector<f64> {
    let d = net.depth();
    let mut v = net.o.component_mul(&net.masks[d - 1].row(sample).transpose());
    for l in (ell + 1..d).rev() {
        v = (net.layers[l].transpose() * v).component_mul(&net.masks[l - 1].row(sample).transpose());
    }
    v
}

/// Labels of the network on the rows of `inputs` (row `i` uses sample `i`'s masks).
pub fn randact_labels(net: &RandActNetwork, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
    if inputs.nrows() > net.samples() {
        return Err(Error::shape(format!(
            "{} inputs but only {} mask sets",
            inputs.nrows(),
            net.samples()
        )));
    }
    let mut y = DVector::zeros(inputs.nrows());
    for i in 0..inputs.nrows() {
        y[i] = randact_forward(net, i, &inputs.row(i).transpose())?;
    }
    Ok(y)
}

/// Regression problem for one layer with every other layer and all masks fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProblem {
    pub ell: usize,
    /// Row `i` is `x̂_i`, the input seen by layer `ℓ`.
    pub xhat: DMatrix<f64>,
    /// Row `i` is `ô_i`, the effective output weights of layer `ℓ`.
    pub ohat: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// Collapses the network around layer `ell` for the given inputs and labels.
pub fn collapse_layer(
    net: &RandActNetwork,
    ell: usize,
    inputs: &DMatrix<f64>,
    labels: &DVector<f64>,
) -> Result<LayerProblem> {
    if ell >= net.depth() {
        return Err(Error::domain(format!(
            "layer {ell} out of range for depth {}",
            net.depth()
        )));
    }
    let n = inputs.nrows();
    if n == 0 || n != labels.len() {
        return Err(Error::shape(format!("{n} inputs and {} labels", labels.len())));
    }
    if n > net.samples() {
        return Err(Error::shape(format!("{n} inputs but only {} mask sets", net.samples())));
    }
    if inputs.ncols() != net.input_dim() {
        return Err(Error::shape(format!(
            "inputs have dimension {}, network expects {}",
            inputs.ncols(),
            net.input_dim()
        )));
    }
    let w = &net.layers[ell];
    let mut xhat = DMatrix::zeros(n, w.ncols());
    let mut ohat = DMatrix::zeros(n, w.nrows());
    for i in 0..n {
        let x = inputs.row(i).transpose();
        xhat.set_row(i, &push_forward(net, i, &x, ell).transpose());
        ohat.set_row(i, &pull_back(net, i, ell).transpose());
    }
    Ok(LayerProblem {
        ell,
        xhat,
        ohat,
        labels: labels.clone(),
    })
}

impl LayerProblem {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Shape `h_{ℓ+1} × h_ℓ` of the unknown layer.
    pub fn layer_shape(&self) -> (usize, usize) {
        (self.ohat.ncols(), self.xhat.ncols())
    }

    fn residuals(&self, u: &DMatrix<f64>) -> Result<DVector<f64>> {
        if u.shape() != self.layer_shape() {
            return Err(Error::shape(format!(
                "candidate is {}x{}, layer is {:?}",
                u.nrows(),
                u.ncols(),
                self.layer_shape()
            )));
        }
        let ux = &self.xhat * u.transpose();
        Ok(DVector::from_fn(self.n(), |i, _| {
            ux.row(i).dot(&self.ohat.row(i)) - self.labels[i]
        }))
    }
}

impl Objective for LayerProblem {
    fn loss_and_gradient(&self, u: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let r = self.residuals(u)?;
        let n = self.n() as f64;
        let mut scaled = self.ohat.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= r[i] / n;
        }
        Ok((r.norm_squared() / (2.0 * n), scaled.transpose() * &self.xhat))
    }
}

/// `(1/n) Σ_i (ô_iᵀ U x̂_i − y_i) ô_i x̂_iᵀ`.
pub fn randact_gradient(problem: &LayerProblem, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    problem.loss_and_gradient(u).map(|(_, g)| g)
}

pub fn randact_loss(problem: &LayerProblem, u: &DMatrix<f64>) -> Result<f64> {
    problem.loss_and_gradient(u).map(|(l, _)| l)
}

/// PGD on the collapsed layer problem.
pub fn randact_pgd(
    problem: &LayerProblem,
    spec: &ConstraintSpec,
    mu: f64,
    iters: usize,
    w0: &DMatrix<f64>,
    truth: Option<&DMatrix<f64>>,
) -> Result<PgdTrace> {
    let cfg = PgdConfig::new(mu, iters, spec.clone());
    run_objectives(&cfg, w0, std::slice::from_ref(problem), truth)
}

/// `γ̄_ℓ = ∏_{k≠ℓ} ‖W_k‖² · max_i |o_i|²`, the output layer counted as `diag(o)`.
pub fn gamma_bar(net: &RandActNetwork, ell: usize) -> f64 {
    let layers: f64 = net
        .layers
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != ell)
        .map(|(_, w)| spectral_norm(w).powi(2))
        .product();
    layers * net.o.amax().powi(2)
}

/// Step size `1/(6qγ̄_ℓ)` with `q = max(1, h_ℓh_{ℓ+1} ln(h_ℓh_{ℓ+1}) / n)`.
pub fn theory_step(net: &RandActNetwork, ell: usize, n: usize) -> Result<f64> {
    if ell >= net.depth() || n == 0 {
        return Err(Error::domain("layer index out of range or n = 0"));
    }
    let m = (net.layers[ell].nrows() * net.layers[ell].ncols()) as f64;
    let q = (m * m.ln() / n as f64).max(1.0);
    let g = gamma_bar(net, ell);
    if g <= 0.0 {
        return Err(Error::Degenerate("a known layer or the output vector is zero".into()));
    }
    Ok(1.0 / (6.0 * q * g))
}

//! Convolutional layers viewed as weight-shared fully-connected layers.
//!
//! A bank of `k` kernels of width `b` slides over `r` windows
//! `[ℓ·stride, ℓ·stride + b)` of the input. Its fully-connected form `FC(K)` has
//! `h = k·r` rows ordered kernel-major: row `i·r + ℓ` holds kernel `i` at
//! offset `ℓ·stride`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::model::{Dataset, WeightMatrix};
use crate::pgd::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernels: usize,
    pub width: usize,
    pub stride: usize,
    pub input_dim: usize,
    pub positions: usize,
}

impl ConvGeometry {
    /// Valid (unpadded) convolution: `r = ⌊(p − b)/stride⌋ + 1`.
    pub fn new(kernels: usize, width: usize, stride: usize, input_dim: usize) -> Result<Self> {
        if width == 0 || width > input_dim {
            return Err(Error::Geometry(format!(
                "kernel width {width} must be in 1..={input_dim}"
            )));
        }
        if stride == 0 {
            return Err(Error::Geometry("stride must be at least 1".into()));
        }
        let positions = (input_dim - width) / stride + 1;
        Self::with_positions(kernels, width, stride, input_dim, positions)
    }

    pub fn with_positions(
        kernels: usize,
        width: usize,
        stride: usize,
        input_dim: usize,
        positions: usize,
    ) -> Result<Self> {
        let g = Self {
            kernels,
            width,
            stride,
            input_dim,
            positions,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels == 0 {
            return Err(Error::Geometry("need at least one kernel".into()));
        }
        if self.width == 0 || self.width > self.input_dim {
            return Err(Error::Geometry(format!(
                "kernel width {} must be in 1..={}",
                self.width, self.input_dim
            )));
        }
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be at least 1".into()));
        }
        if self.positions == 0 {
            return Err(Error::Geometry("need at least one window position".into()));
        }
        let last_end = (self.positions - 1) * self.stride + self.width;
        if last_end > self.input_dim {
            return Err(Error::Geometry(format!(
                "window {} ends at {last_end}, past input length {}",
                self.positions - 1,
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Hidden width `h = k·r` of the fully-connected form.
    pub fn hidden(&self) -> usize {
        self.kernels * self.positions
    }

    /// Dimension `k·b` of the convolutional subspace.
    pub fn subspace_dim(&self) -> usize {
        self.kernels * self.width
    }

    fn offset(&self, l: usize) -> usize {
        l * self.stride
    }
}

/// Kernels as the rows of a `k × b` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    kernels: DMatrix<f64>,
    geometry: ConvGeometry,
}

impl KernelBank {
    pub fn new(kernels: DMatrix<f64>, geometry: ConvGeometry) -> Result<Self> {
        geometry.validate()?;
        if kernels.shape() != (geometry.kernels, geometry.width) {
            return Err(Error::shape(format!(
                "kernel matrix is {}x{}, geometry expects {}x{}",
                kernels.nrows(),
                kernels.ncols(),
                geometry.kernels,
                geometry.width
            )));
        }
        Ok(Self { kernels, geometry })
    }

    pub fn kernels(&self) -> &DMatrix<f64> {
        &self.kernels
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }
}

/// Output weights `o_{i,ℓ}` as a `k × r` matrix. Flattened row-major it lines
/// up with the rows of `FC(K)`.
pub type ConvOutputWeights = DMatrix<f64>;

pub fn fc_from_kernels(bank: &KernelBank) -> WeightMatrix {
    fc_from_kernel_matrix(&bank.kernels, &bank.geometry)
}

fn fc_from_kernel_matrix(k: &DMatrix<f64>, g: &ConvGeometry) -> WeightMatrix {
    let mut w = DMatrix::zeros(g.hidden(), g.input_dim);
    for i in 0..g.kernels {
        for l in 0..g.positions {
            let row = i * g.positions + l;
            let off = g.offset(l);
            for j in 0..g.width {
                w[(row, off + j)] = k[(i, j)];
            }
        }
    }
    w
}

/// Averages the `r` copies of every kernel entry in `W`. This is the
/// coordinate map of the orthogonal projection onto the conv subspace.
pub fn kernels_from_fc(w: &WeightMatrix, g: &ConvGeometry) -> Result<DMatrix<f64>> {
    g.validate()?;
    if w.shape() != (g.hidden(), g.input_dim) {
        return Err(Error::shape(format!(
            "W is {}x{}, conv geometry needs {}x{}",
            w.nrows(),
            w.ncols(),
            g.hidden(),
            g.input_dim
        )));
    }
    let r = g.positions as f64;
    let mut k = DMatrix::zeros(g.kernels, g.width);
    for i in 0..g.kernels {
        for j in 0..g.width {
            let mut acc = 0.0;
            for l in 0..g.positions {
                acc += w[(i * g.positions + l, g.offset(l) + j)];
            }
            k[(i, j)] = acc / r;
        }
    }
    Ok(k)
}

/// Orthogonal projection of a `kr × p` matrix onto `{FC(K)}`.
pub fn project_conv(w: &WeightMatrix, g: &ConvGeometry) -> Result<WeightMatrix> {
    let k = kernels_from_fc(w, g)?;
    Ok(fc_from_kernel_matrix(&k, g))
}

/// Orthonormal basis of the conv subspace as an `hp × kb` matrix. Column
/// `i·b + j` is `vec(M^{i,j})/√r`, where `M^{i,j}` has ones at every copy of
/// kernel entry `(i, j)`.
pub fn conv_subspace_basis(g: &ConvGeometry) -> Result<DMatrix<f64>> {
    g.validate()?;
    let p = g.input_dim;
    let scale = 1.0 / (g.positions as f64).sqrt();
    let mut basis = DMatrix::zeros(g.hidden() * p, g.subspace_dim());
    for i in 0..g.kernels {
        for j in 0..g.width {
            let col = i * g.width + j;
            for l in 0..g.positions {
                basis[((i * g.positions + l) * p + g.offset(l) + j, col)] = scale;
            }
        }
    }
    Ok(basis)
}

fn check_cnn_shapes(bank: &KernelBank, o: &ConvOutputWeights, p: usize) -> Result<()> {
    let g = &bank.geometry;
    if o.shape() != (g.kernels, g.positions) {
        return Err(Error::shape(format!(
            "output weights are {}x{}, expected {}x{}",
            o.nrows(),
            o.ncols(),
            g.kernels,
            g.positions
        )));
    }
    if p != g.input_dim {
        return Err(Error::shape(format!(
            "input has length {p}, geometry expects {}",
            g.input_dim
        )));
    }
    Ok(())
}

/// `Σ_i Σ_ℓ o_{i,ℓ} σ(k_iᵀ x^ℓ)` where `x^ℓ` is window `ℓ` of `x`.
pub fn cnn_forward(bank: &KernelBank, o: &ConvOutputWeights, x: &DVector<f64>, kind: ActivationKind) -> Result<f64> {
    check_cnn_shapes(bank, o, x.len())?;
    let g = &bank.geometry;
    let mut y = 0.0;
    for i in 0..g.kernels {
        for l in 0..g.positions {
            let patch = x.rows(g.offset(l), g.width);
            let z = bank.kernels.row(i).transpose().dot(&patch);
            y += o[(i, l)] * kind.eval(z);
        }
    }
    Ok(y)
}

/// CNN loss `(1/2n) Σ_j (y_CNN(K, x_j) − y_j)²` and its gradient with respect
/// to the `k × b` kernel matrix.
pub fn cnn_loss_and_gradient(
    bank: &KernelBank,
    o: &ConvOutputWeights,
    data: &Dataset,
    kind: ActivationKind,
) -> Result<(f64, DMatrix<f64>)> {
    ConvObjective::new(bank.geometry, o.clone(), data, kind)?.loss_and_gradient(&bank.kernels)
}

/// CNN squared loss as a function of the `k × b` kernel matrix. All input
/// windows are extracted once into an `(n·r) × b` patch matrix (row `j·r + ℓ`
/// is window `ℓ` of sample `j`). A kernel step with rate `μ/r` reproduces the
/// projected fully-connected step with rate `μ`.
#[derive(Debug, Clone)]
pub struct ConvObjective {
    geometry: ConvGeometry,
    o: ConvOutputWeights,
    patches: DMatrix<f64>,
    labels: DVector<f64>,
    kind: ActivationKind,
}

impl ConvObjective {
    pub fn new(geometry: ConvGeometry, o: ConvOutputWeights, data: &Dataset, kind: ActivationKind) -> Result<Self> {
        geometry.validate()?;
        let g = &geometry;
        if o.shape() != (g.kernels, g.positions) {
            return Err(Error::shape(format!(
                "output weights are {}x{}, expected {}x{}",
                o.nrows(),
                o.ncols(),
                g.kernels,
                g.positions
            )));
        }
        if data.p() != g.input_dim {
            return Err(Error::shape(format!(
                "inputs have dimension {}, geometry expects {}",
                data.p(),
                g.input_dim
            )));
        }
        let x = data.inputs();
        let r = g.positions;
        let patches = DMatrix::from_fn(data.n() * r, g.width, |row, c| x[(row / r, g.offset(row % r) + c)]);
        Ok(Self {
            geometry,
            o,
            patches,
            labels: data.labels().clone(),
            kind,
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }
}

impl Objective for ConvObjective {
    fn loss_and_gradient(&self, k: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let g = &self.geometry;
        if k.shape() != (g.kernels, g.width) {
            return Err(Error::shape(format!(
                "kernel matrix is {}x{}, geometry expects {}x{}",
                k.nrows(),
                k.ncols(),
                g.kernels,
                g.width
            )));
        }
        let (n, r) = (self.labels.len(), g.positions);
        let mut pre = &self.patches * k.transpose();
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        for j in 0..n {
            let mut pred = 0.0;
            for l in 0..r {
                for i in 0..g.kernels {
                    pred += self.o[(i, l)] * self.kind.eval(pre[(j * r + l, i)]);
                }
            }
            let resid = pred - self.labels[j];
            total += resid * resid;
            let scale = resid * inv_n;
            for l in 0..r {
                for i in 0..g.kernels {
                    let z = &mut pre[(j * r + l, i)];
                    *z = scale * self.o[(i, l)] * self.kind.deriv(*z);
                }
            }
        }
        Ok((total * 0.5 * inv_n, pre.transpose() * &self.patches))
    }
}

pub fn cnn_gradient(
    bank: &KernelBank,
    o: &ConvOutputWeights,
    data: &Dataset,
    kind: ActivationKind,
) -> Result<DMatrix<f64>> {
    cnn_loss_and_gradient(bank, o, data, kind).map(|(_, g)| g)
}

pub fn cnn_loss(bank: &KernelBank, o: &ConvOutputWeights, data: &Dataset, kind: ActivationKind) -> Result<f64> {
    cnn_loss_and_gradient(bank, o, data, kind).map(|(l, _)| l)
}

/// Full `p × p` circulant matrix whose row `ℓ` is the zero-padded kernel
/// cyclically shifted by `ℓ`.
pub fn circulant(kernel: &[f64], p: usize) -> Result<DMatrix<f64>> {
    if kernel.is_empty() || kernel.len() > p {
        return Err(Error::Geometry(format!(
            "kernel width {} must be in 1..={p}",
            kernel.len()
        )));
    }
    let mut c = DMatrix::zeros(p, p);
    for l in 0..p {
        for (j, &v) in kernel.iter().enumerate() {
            c[(l, (l + j) % p)] = v;
        }
    }
    Ok(c)
}

/// `(min_m |f_m|, max_m |f_m|)` for the length-`p` DFT `f` of the zero-padded
/// kernel. These bracket the singular values of the full circulant and of any
/// row subsample of it, including `FC` of a single kernel.
pub fn circulant_singular_bounds(kernel: &[f64], p: usize) -> Result<(f64, f64)> {
    if kernel.is_empty() || kernel.len() > p {
        return Err(Error::Geometry(format!(
            "kernel width {} must be in 1..={p}",
            kernel.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for m in 0..p {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in kernel.iter().enumerate() {
            let angle = -2.0 * PI * ((m * t) % p) as f64 / p as f64;
            re += v * angle.cos();
            im += v * angle.sin();
        }
        let modulus = re.hypot(im);
        lo = lo.min(modulus);
        hi = hi.max(modulus);
    }
    Ok((lo, hi))
}

//! Constraint sets `C`, Euclidean projections `P_C` and covering dimensions.
//!
//! All projections are with respect to the Frobenius norm. Entry-wise
//! constraints (sparsity, ℓ1) act on the row-major flattening `vec(W)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cnn::{project_conv, ConvGeometry};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, singular_values, svd, unvec_rows, vec_rows};
use crate::model::WeightMatrix;

/// Orthonormal basis of a linear subspace of `h × p` matrices, stored as the
/// `hp × d` matrix whose columns are `vec(B_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
    h: usize,
    p: usize,
}

impl SubspaceBasis {
    /// Columns must be orthonormal to within 1e-10.
    pub fn new(basis: DMatrix<f64>, h: usize, p: usize) -> Result<Self> {
        if basis.nrows() != h * p {
            return Err(Error::shape(format!(
                "basis has {} rows, expected h*p = {}",
                basis.nrows(),
                h * p
            )));
        }
        if basis.ncols() == 0 {
            return Err(Error::domain("subspace must have dimension >= 1"));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::identity(basis.ncols(), basis.ncols())).amax();
        if err > 1e-10 {
            return Err(Error::domain(format!(
                "basis columns are not orthonormal (max Gram error {err:e})"
            )));
        }
        Ok(Self { basis, h, p })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.p)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Coordinates `Bᵀ vec(W)`.
    pub fn coordinates(&self, w: &WeightMatrix) -> DVector<f64> {
        self.basis.transpose() * vec_rows(w)
    }

    pub fn project(&self, w: &WeightMatrix) -> WeightMatrix {
        let v = &self.basis * self.coordinates(w);
        unvec_rows(&v, self.h, self.p).expect("shape checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSpec {
    None,
    /// At most `s` nonzero entries over the whole matrix.
    Sparsity {
        s: usize,
    },
    L1Ball {
        radius: f64,
    },
    Rank {
        r: usize,
    },
    NuclearBall {
        radius: f64,
    },
    Subspace(SubspaceBasis),
    /// Weight sharing of a convolutional layer in its fully-connected form.
    Conv(ConvGeometry),
}

impl fmt::Display for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintSpec::None => write!(f, "none"),
            ConstraintSpec::Sparsity { s } => write!(f, "l0(s={s})"),
            ConstraintSpec::L1Ball { radius } => write!(f, "l1(tau={radius})"),
            ConstraintSpec::Rank { r } => write!(f, "rank(r={r})"),
            ConstraintSpec::NuclearBall { radius } => write!(f, "nuclear(tau={radius})"),
            ConstraintSpec::Subspace(b) => write!(f, "subspace(d={})", b.dim()),
            ConstraintSpec::Conv(g) => write!(f, "conv(k={},b={},stride={})", g.kernels, g.width, g.stride),
        }
    }
}

impl ConstraintSpec {
    pub fn is_convex(&self) -> bool {
        !matches!(self, ConstraintSpec::Sparsity { .. } | ConstraintSpec::Rank { .. })
    }

    /// Checks the parameters against an `h × p` weight matrix.
    pub fn validate(&self, h: usize, p: usize) -> Result<()> {
        match self {
            ConstraintSpec::None => Ok(()),
            ConstraintSpec::Sparsity { s } => {
                if *s > h * p {
                    Err(Error::domain(format!("sparsity {s} exceeds h*p = {}", h * p)))
                } else {
                    Ok(())
                }
            }
            ConstraintSpec::L1Ball { radius } | ConstraintSpec::NuclearBall { radius } => {
                if *radius > 0.0 && radius.is_finite() {
                    Ok(())
                } else {
                    Err(Error::domain(format!("radius must be positive, got {radius}")))
                }
            }
            ConstraintSpec::Rank { r } => {
                if *r > h.min(p) {
                    Err(Error::domain(format!("rank {r} exceeds min(h, p) = {}", h.min(p))))
                } else {
                    Ok(())
                }
            }
            ConstraintSpec::Subspace(b) => {
                if b.shape() == (h, p) {
                    Ok(())
                } else {
                    Err(Error::shape(format!(
                        "subspace is over {:?} matrices, W is {h}x{p}",
                        b.shape()
                    )))
                }
            }
            ConstraintSpec::Conv(g) => {
                if g.hidden() == h && g.input_dim == p {
                    Ok(())
                } else {
                    Err(Error::shape(format!(
                        "conv geometry needs {}x{} weights, W is {h}x{p}",
                        g.hidden(),
                        g.input_dim
                    )))
                }
            }
        }
    }

    /// Euclidean projection onto the constraint set.
    pub fn project(&self, w: &WeightMatrix) -> Result<WeightMatrix> {
        if !all_finite(w) {
            return Err(Error::domain("cannot project a matrix with non-finite entries"));
        }
        let (h, p) = w.shape();
        self.validate(h, p)?;
        Ok(match self {
            ConstraintSpec::None => w.clone(),
            ConstraintSpec::Sparsity { s } => map_flat(w, |v| hard_threshold(v, *s)),
            ConstraintSpec::L1Ball { radius } => map_flat(w, |v| project_l1_ball(v, *radius)),
            ConstraintSpec::Rank { r } => truncate_rank(w, *r),
            ConstraintSpec::NuclearBall { radius } => project_nuclear_ball(w, *radius),
            ConstraintSpec::Subspace(b) => b.project(w),
            ConstraintSpec::Conv(g) => project_conv(w, g)?,
        })
    }

    /// Whether `w` satisfies the constraint up to `tol`.
    pub fn contains(&self, w: &WeightMatrix, tol: f64) -> bool {
        let (h, p) = w.shape();
        if self.validate(h, p).is_err() {
            return false;
        }
        match self {
            ConstraintSpec::None => true,
            ConstraintSpec::Sparsity { s } => w.iter().filter(|v| **v != 0.0).count() <= *s,
            ConstraintSpec::L1Ball { radius } => w.iter().map(|v| v.abs()).sum::<f64>() <= radius + tol,
            ConstraintSpec::Rank { r } => {
                let sv = singular_values(w);
                *r >= sv.len() || sv[*r] <= tol * sv[0].max(f64::MIN_POSITIVE)
            }
            ConstraintSpec::NuclearBall { radius } => singular_values(w).sum() <= radius + tol,
            ConstraintSpec::Subspace(_) | ConstraintSpec::Conv(_) => match self.project(w) {
                Ok(pw) => (pw - w).norm() <= tol * w.norm().max(1.0),
                Err(_) => false,
            },
        }
    }

    /// Table row for the covering dimension. ℓ1 and nuclear balls need the
    /// sparsity (resp. rank) of the ground truth they are centred on.
    pub fn cov_model(&self, truth_complexity: Option<usize>) -> Result<CovModel> {
        Ok(match self {
            ConstraintSpec::None => CovModel::Unconstrained,
            ConstraintSpec::Sparsity { s } => CovModel::Sparse { s: *s },
            ConstraintSpec::L1Ball { .. } => CovModel::L1 {
                s: truth_complexity
                    .ok_or_else(|| Error::domain("l1 covering dimension needs the number of nonzeros"))?,
            },
            ConstraintSpec::Rank { r } => CovModel::Rank { r: *r },
            ConstraintSpec::NuclearBall { .. } => CovModel::Rank {
                r: truth_complexity.ok_or_else(|| Error::domain("nuclear covering dimension needs the rank"))?,
            },
            ConstraintSpec::Subspace(b) => CovModel::Subspace { d: b.dim() },
            ConstraintSpec::Conv(g) => CovModel::Conv {
                k: g.kernels,
                b: g.width,
            },
        })
    }
}

fn map_flat<F: FnOnce(&[f64]) -> Vec<f64>>(w: &WeightMatrix, f: F) -> WeightMatrix {
    let (h, p) = w.shape();
    let v = vec_rows(w);
    let out = f(v.as_slice());
    DMatrix::from_row_slice(h, p, &out)
}

/// Keeps the `s` largest-magnitude entries. Ties at the cutoff go to the
/// lowest index.
pub fn hard_threshold(v: &[f64], s: usize) -> Vec<f64> {
    if s >= v.len() {
        return v.to_vec();
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; v.len()];
    for &i in &order[..s] {
        out[i] = v[i];
    }
    out
}

/// Projection onto `{x : ‖x‖₁ ≤ radius}` by soft-thresholding at the level
/// found from the sorted cumulative sums of `|v|`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (k + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

fn truncate_rank(w: &WeightMatrix, r: usize) -> WeightMatrix {
    let mut d = svd(w);
    for k in r..d.singular_values.len() {
        d.singular_values[k] = 0.0;
    }
    d.recompose()
}

fn project_nuclear_ball(w: &WeightMatrix, radius: f64) -> WeightMatrix {
    let mut d = svd(w);
    if d.singular_values.sum() <= radius {
        return w.clone();
    }
    let projected = project_l1_ball(d.singular_values.as_slice(), radius);
    for (s, v) in d.singular_values.iter_mut().zip(projected) {
        *s = v;
    }
    d.recompose()
}

/// Low-dimensional model families with known covering dimensions. The values
/// hold up to a constant factor; logarithms are natural.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CovModel {
    Unconstrained,
    Conv { k: usize, b: usize },
    Sparse { s: usize },
    L1 { s: usize },
    Subspace { d: usize },
    Rank { r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovDimResult {
    pub value: f64,
    pub model: CovModel,
    /// Human-readable formula that produced `value`.
    pub formula: &'static str,
}

pub fn covering_dimension(model: CovModel, h: usize, p: usize) -> Result<CovDimResult> {
    if h == 0 || p == 0 {
        return Err(Error::domain("h and p must be positive"));
    }
    let hp = (h * p) as f64;
    let (value, formula) = match model {
        CovModel::Unconstrained => (hp, "h*p"),
        CovModel::Conv { k, b } => ((k * b) as f64, "k*b"),
        CovModel::Sparse { s } | CovModel::L1 { s } => {
            if s == 0 || s > h * p {
                return Err(Error::domain(format!("sparsity {s} must be in 1..={}", h * p)));
            }
            let s = s as f64;
            (s * (6.0 * hp / s).ln(), "s*ln(6hp/s)")
        }
        CovModel::Subspace { d } => (d as f64, "d"),
        CovModel::Rank { r } => ((r * h) as f64, "r*h"),
    };
    Ok(CovDimResult { value, model, formula })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn l1_examples() {
        let spec = ConstraintSpec::L1Ball { radius: 2.0 };
        let w = m(1, 2, &[0.5, 0.5]);
        assert_eq!(spec.project(&w).unwrap(), w);
        let out = spec.project(&m(1, 2, &[3.0, 1.0])).unwrap();
        assert!((out - m(1, 2, &[2.0, 0.0])).norm() < 1e-15);
        let out = spec.project(&m(1, 2, &[-3.0, 1.0])).unwrap();
        assert!((out - m(1, 2, &[-2.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn sparsity_examples_and_ties() {
        let spec = ConstraintSpec::Sparsity { s: 2 };
        let out = spec.project(&m(1, 3, &[3.0, 1.0, -2.0])).unwrap();
        assert_eq!(out, m(1, 3, &[3.0, 0.0, -2.0]));
        // equal magnitudes at the cutoff keep the lowest flattened index
        let out = spec.project(&m(2, 2, &[1.0, -5.0, 1.0, 1.0])).unwrap();
        assert_eq!(out, m(2, 2, &[1.0, -5.0, 0.0, 0.0]));
        // global, not per row
        let out = spec.project(&m(2, 2, &[9.0, 8.0, 0.1, 0.2])).unwrap();
        assert_eq!(out, m(2, 2, &[9.0, 8.0, 0.0, 0.0]));
    }

    #[test]
    fn rank_and_subspace_examples() {
        let spec = ConstraintSpec::Rank { r: 1 };
        let out = spec.project(&m(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((out - m(2, 2, &[3.0, 0.0, 0.0, 0.0])).norm() < 1e-14);

        let basis = SubspaceBasis::new(m(2, 1, &[1.0, 0.0]), 1, 2).unwrap();
        let out = ConstraintSpec::Subspace(basis).project(&m(1, 2, &[2.0, 3.0])).unwrap();
        assert!((out - m(1, 2, &[2.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn nuclear_ball_shrinks_singular_values() {
        let spec = ConstraintSpec::NuclearBall { radius: 2.0 };
        let out = spec.project(&m(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((out - m(2, 2, &[2.0, 0.0, 0.0, 0.0])).norm() < 1e-13);
        let inside = m(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(spec.project(&inside).unwrap(), inside);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let w = DMatrix::zeros(2, 3);
        assert!(ConstraintSpec::Sparsity { s: 7 }.project(&w).is_err());
        assert!(ConstraintSpec::Rank { r: 3 }.project(&w).is_err());
        assert!(ConstraintSpec::L1Ball { radius: 0.0 }.project(&w).is_err());
        assert!(SubspaceBasis::new(DMatrix::from_element(6, 1, 1.0), 2, 3).is_err());
        let mut bad = w.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(ConstraintSpec::None.project(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn covering_dimension_table() {
        let none = covering_dimension(CovModel::Unconstrained, 20, 80).unwrap();
        assert_eq!(none.value, 1600.0);
        let conv = covering_dimension(CovModel::Conv { k: 4, b: 15 }, 48, 81).unwrap();
        assert_eq!(conv.value, 60.0);
        let sparse = covering_dimension(CovModel::Sparse { s: 160 }, 20, 80).unwrap();
        assert!((sparse.value - 160.0 * 60f64.ln()).abs() < 1e-9);
        assert!((sparse.value - 655.09).abs() < 0.01);
        let l1 = covering_dimension(CovModel::L1 { s: 160 }, 20, 80).unwrap();
        assert_eq!(l1.value, sparse.value);
        assert_eq!(covering_dimension(CovModel::Rank { r: 2 }, 20, 80).unwrap().value, 40.0);
        assert_eq!(
            covering_dimension(CovModel::Subspace { d: 6 }, 3, 8).unwrap().value,
            6.0
        );
        assert!(ConstraintSpec::L1Ball { radius: 1.0 }.cov_model(None).is_err());
    }
}

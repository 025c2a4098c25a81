//! Small dense helpers on top of nalgebra.
//!
//! Weight matrices are flattened row-major throughout the crate, so index
//! `i * p + j` of `vec(W)` is entry `(i, j)`. This matches the Kronecker
//! ordering `d ⊗ x` used by the Hessian features.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major flattening of an `h × p` matrix.
pub fn vec_rows(w: &DMatrix<f64>) -> DVector<f64> {
    let (h, p) = w.shape();
    DVector::from_fn(h * p, |k, _| w[(k / p, k % p)])
}

/// Inverse of [`vec_rows`].
pub fn unvec_rows(v: &DVector<f64>, h: usize, p: usize) -> Result<DMatrix<f64>> {
    if v.len() != h * p {
        return Err(Error::shape(format!("cannot reshape length {} into {h}x{p}", v.len())));
    }
    Ok(DMatrix::from_fn(h, p, |i, j| v[i * p + j]))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Thin SVD `m = U diag(s) Vᵀ` with `s` descending. `U` is `rows × k` and
/// `Vᵀ` is `k × cols` for `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    pub fn recompose(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * &self.v_t
    }
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD. Slower than bidiagonal QR but accurate
/// on rank-deficient inputs, which nalgebra 0.35's `SVD` is not.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    if m.nrows() < m.ncols() {
        let t = svd(&m.transpose());
        return Svd {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        };
    }
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    let (x, y) = (a[(r, i)], a[(r, j)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (x, y) = (a[(r, i)], a[(r, j)]);
                    a[(r, i)] = c * x - s * y;
                    a[(r, j)] = s * x + c * y;
                }
                for r in 0..n {
                    let (x, y) = (v[(r, i)], v[(r, j)]);
                    v[(r, i)] = c * x - s * y;
                    v[(r, j)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|k| a.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::zeros(rows, n);
    let mut v_t = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            u.set_column(k, &(a.column(src) / norms[src]));
        }
        v_t.set_row(k, &v.column(src).transpose());
    }
    Svd {
        u,
        singular_values: DVector::from_iterator(n, order.iter().map(|&k| norms[k])),
        v_t,
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    svd(m).singular_values
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m)[0]
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue and its eigenvector.
pub fn sym_min_eigen(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .expect("non-empty matrix");
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Orthonormalizes the columns of `m` (thin QR). Fails if the columns are
/// numerically dependent.
pub fn orthonormal_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::domain(format!(
            "{cols} columns cannot be orthonormal in dimension {rows}"
        )));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let scale = m.norm().max(1.0);
    for k in 0..cols {
        if r[(k, k)].abs() < 1e-12 * scale {
            return Err(Error::Condition("columns are linearly dependent".into()));
        }
    }
    Ok(qr.q())
}

/// Random `rows × cols` matrix with orthonormal columns (Haar-like via QR of
/// a Gaussian matrix).
pub fn random_orthonormal_columns<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let g = gaussian_matrix(rows, cols, 1.0, rng);
    orthonormal_columns(&g)
}

/// Matrix with i.i.d. `N(0, std²)` entries, filled row by row.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let g: f64 = rng.sample(StandardNormal);
            m[(i, j)] = std * g;
        }
    }
    m
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vec_roundtrip_is_row_major() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec_rows(&w);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unvec_rows(&v, 2, 3).unwrap(), w);
        assert!(unvec_rows(&v, 4, 2).is_err());
    }

    #[test]
    fn singular_values_descend() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let s = singular_values(&m);
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_rank_deficient_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (rows, cols, rank) in [(4, 6, 2), (6, 4, 1), (5, 5, 3), (3, 3, 0)] {
            let m = gaussian_matrix(rows, rank, 1.0, &mut rng) * gaussian_matrix(rank, cols, 1.0, &mut rng);
            let d = svd(&m);
            assert!((d.recompose() - &m).amax() < 1e-12);
            let s = &d.singular_values;
            assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
            assert!(s.iter().skip(rank).all(|v| *v < 1e-12));
            let vvt = &d.v_t * d.v_t.transpose();
            assert!((vvt - DMatrix::identity(s.len(), s.len())).amax() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthonormal_columns(7, 3, &mut rng).unwrap();
        let g = q.transpose() * &q;
        assert!((g - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!(orthonormal_columns(&DMatrix::from_element(3, 2, 1.0)).is_err());
    }
}

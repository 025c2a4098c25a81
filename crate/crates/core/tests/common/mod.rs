//! Shared generators and independent reference implementations.

#![allow(dead_code)]

use compactnet::cnn::{fc_from_kernels, ConvGeometry, KernelBank};
use compactnet::linalg::{gaussian_matrix, spectral_norm};
use compactnet::{ActivationKind, Dataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector<R: Rng>(len: usize, std: f64, rng: &mut R) -> DVector<f64> {
    gaussian_matrix(len, 1, std, rng).column(0).into_owned()
}

pub fn random_dataset<R: Rng>(n: usize, p: usize, rng: &mut R) -> Dataset {
    let x = gaussian_matrix(n, p, 1.0, rng);
    let y = gaussian_vector(n, 1.0, rng);
    Dataset::new(x, y).unwrap()
}

pub fn pick_smooth<R: Rng>(rng: &mut R) -> ActivationKind {
    let all = ActivationKind::SMOOTH;
    all[rng.random_range(0..all.len())]
}

/// Central differences of `f` at every entry of `w`.
pub fn finite_difference<F: Fn(&DMatrix<f64>) -> f64>(f: F, w: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    let mut probe = w.clone();
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + eps;
            let up = f(&probe);
            probe[(i, j)] = orig - eps;
            let down = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * eps);
        }
    }
    g
}

/// Random conv geometry, with strides both below and above the kernel width.
pub fn random_geometry<R: Rng>(rng: &mut R) -> ConvGeometry {
    let k = rng.random_range(1..=3);
    let b = rng.random_range(1..=5);
    let s = rng.random_range(1..=b + 1);
    let p = b + rng.random_range(0..=12);
    ConvGeometry::new(k, b, s, p).unwrap()
}

/// Flattens `k × r` conv output weights into the FC output vector, entry
/// `i·r + ℓ`.
pub fn flatten_output(o: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        o.len(),
        o.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------------------
// Projection oracles. None of these share code with the library projections.

fn flat(w: &DMatrix<f64>) -> Vec<f64> {
    (0..w.nrows())
        .flat_map(|i| (0..w.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| w[(i, j)])
        .collect()
}

fn unflat(v: &[f64], h: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(h, p, v)
}

/// All subsets of `0..m` with exactly `s` elements, as bitmasks.
fn subsets(m: usize, s: usize) -> impl Iterator<Item = u32> {
    (0u32..1 << m).filter(move |mask| mask.count_ones() as usize == s)
}

/// Keeps the `s`-subset with the largest energy.
pub fn sparsity_oracle(w: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let v = flat(w);
    let m = v.len();
    if s >= m {
        return w.clone();
    }
    let mut best = (f64::NEG_INFINITY, 0u32);
    for mask in subsets(m, s) {
        let e: f64 = (0..m).filter(|k| mask >> k & 1 == 1).map(|k| v[k] * v[k]).sum();
        if e > best.0 {
            best = (e, mask);
        }
    }
    let out: Vec<f64> = (0..m).map(|k| if best.1 >> k & 1 == 1 { v[k] } else { 0.0 }).collect();
    unflat(&out, w.nrows(), w.ncols())
}

/// Nearest point of the ℓ1 ball among the projections onto every face
/// `{Σ_{k∈S} σ_k v_k = R, v = 0 off S}` that lands inside the ball.
pub fn l1_oracle(w: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let x = flat(w);
    let m = x.len();
    if x.iter().map(|v| v.abs()).sum::<f64>() <= radius {
        return w.clone();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for support in 1u32..1 << m {
        let idx: Vec<usize> = (0..m).filter(|k| support >> k & 1 == 1).collect();
        for signs in 0u32..1 << idx.len() {
            let sigma: Vec<f64> = (0..idx.len())
                .map(|t| if signs >> t & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let dot: f64 = idx.iter().zip(&sigma).map(|(&k, s)| s * x[k]).sum();
            let tau = (dot - radius) / idx.len() as f64;
            let mut v = vec![0.0; m];
            let mut feasible = true;
            for (&k, s) in idx.iter().zip(&sigma) {
                v[k] = x[k] - tau * s;
                if s * v[k] < 0.0 {
                    feasible = false;
                }
            }
            if !feasible {
                continue;
            }
            let d: f64 = x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, v));
            }
        }
    }
    unflat(&best.unwrap().1, w.nrows(), w.ncols())
}

/// Best rank-`r` approximation for matrices with at most two rows or two
/// columns, from the closed-form leading eigenvector of a 2×2 Gram matrix.
pub fn rank_oracle(w: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (h, p) = w.shape();
    if r >= h.min(p) {
        return w.clone();
    }
    if r == 0 {
        return DMatrix::zeros(h, p);
    }
    if h > 2 {
        return rank_oracle(&w.transpose(), r).transpose();
    }
    assert_eq!((h, r), (2, 1), "oracle covers 2 × p matrices only");
    let g = w * w.transpose();
    let phi = 0.5 * (2.0 * g[(0, 1)]).atan2(g[(0, 0)] - g[(1, 1)]);
    let u = DVector::from_vec(vec![phi.cos(), phi.sin()]);
    &u * (u.transpose() * w)
}

/// Orthogonal projection onto the span of the columns of `a` (not necessarily
/// orthonormal) via the normal equations.
pub fn span_oracle(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let x = DVector::from_vec(flat(w));
    let coeffs = (a.transpose() * a).lu().solve(&(a.transpose() * &x)).unwrap();
    let v = a * coeffs;
    unflat(v.as_slice(), w.nrows(), w.ncols())
}

/// Spanning set of the conv subspace built directly from `FC(e_{ij})`.
pub fn conv_spanning_set(g: &ConvGeometry) -> DMatrix<f64> {
    let hp = g.hidden() * g.input_dim;
    let mut a = DMatrix::zeros(hp, g.kernels * g.width);
    for i in 0..g.kernels {
        for j in 0..g.width {
            let mut e = DMatrix::zeros(g.kernels, g.width);
            e[(i, j)] = 1.0;
            let fc = fc_from_kernels(&KernelBank::new(e, *g).unwrap());
            a.set_column(i * g.width + j, &DVector::from_vec(flat(&fc)));
        }
    }
    a
}

/// Optimality gap of `p` as the projection of `x` onto the nuclear ball:
/// `P` is the projection iff `‖P‖_* ≤ R` and `⟨X − P, P⟩ ≥ R‖X − P‖₂`.
/// Returns the larger violation of the two conditions.
pub fn nuclear_certificate_gap(x: &DMatrix<f64>, p: &DMatrix<f64>, radius: f64) -> f64 {
    let nuc: f64 = p.clone().svd(false, false).singular_values.sum();
    let resid = x - p;
    let vi = (resid.dot(p) - radius * spectral_norm(&resid)).min(0.0).abs();
    vi.max((nuc - radius).max(0.0))
}

/// Every `(h, p)` with `h·p ≤ 6`.
pub fn small_shapes() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for h in 1..=6 {
        for p in 1..=6 {
            if h * p <= 6 {
                out.push((h, p));
            }
        }
    }
    out
}

/// Every conv geometry with default positions and `h·p ≤ 6`.
pub fn small_geometries() -> Vec<ConvGeometry> {
    let mut out = Vec::new();
    for k in 1..=6 {
        for p in 1..=6 {
            for b in 1..=p {
                for s in 1..=p {
                    if let Ok(g) = ConvGeometry::new(k, b, s, p) {
                        if g.hidden() * p <= 6 {
                            out.push(g);
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

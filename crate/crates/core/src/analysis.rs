//! Diagnostics around the planted weights: the Hessian at `W*` and its
//! three-way split along the path to an arbitrary `U`, restricted eigenvalues,
//! the theory constants that set step size and contraction, and a few bounds.
//!
//! All quantities taken from the theory carry unknown absolute constants;
//! those constants are set to 1 here, so only relative comparisons are
//! meaningful.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activation::{zeta, ActivationKind};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, gaussian_matrix, singular_values, spectral_norm, sym_min_eigen};
use crate::model::{Dataset, OutputVector, WeightMatrix};

/// Largest `h·p` for which `hp × hp` matrices are materialized.
pub const MAX_FEATURE_DIM: usize = 4096;

/// Above this many supports the sparse-cone minimum is estimated by sampling.
pub const MAX_EXHAUSTIVE_SUPPORTS: u128 = 100_000;

/// Number of random supports drawn when enumeration is too expensive.
pub const SAMPLED_SUPPORTS: usize = 20_000;

/// Secant denominators below this fall back to the derivative.
const SECANT_EPS: f64 = 1e-12;

fn check_capacity(hp: usize) -> Result<()> {
    if hp > MAX_FEATURE_DIM {
        return Err(Error::Capacity {
            what: "h*p feature dimension",
            requested: hp,
            limit: MAX_FEATURE_DIM,
        });
    }
    Ok(())
}

fn check_model(o: &OutputVector, w: &WeightMatrix, p: usize) -> Result<()> {
    if o.len() != w.nrows() || w.ncols() != p {
        return Err(Error::shape(format!(
            "o has length {}, W is {}x{}, inputs have dimension {p}",
            o.len(),
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(())
}

/// Writes `d ⊗ x` into `out` (row-major, matching `vec(W)`).
fn kron_into(d: &[f64], x: &[f64], out: &mut [f64]) {
    let p = x.len();
    for (i, &di) in d.iter().enumerate() {
        for (j, &xj) in x.iter().enumerate() {
            out[i * p + j] = di * xj;
        }
    }
}

fn derivative_weights(o: &OutputVector, w: &WeightMatrix, x: &[f64], kind: ActivationKind) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| {
            let z: f64 = w.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            o[i] * kind.deriv(z)
        })
        .collect()
}

/// `o_i (σ(u_iᵀx) − σ(w_iᵀx)) / (u_iᵀx − w_iᵀx)`, or `o_i σ'(w_iᵀx)` when the
/// two pre-activations coincide.
fn secant_weights(o: &OutputVector, u: &WeightMatrix, w: &WeightMatrix, x: &[f64], kind: ActivationKind) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| {
            let a: f64 = u.row(i).iter().zip(x).map(|(s, t)| s * t).sum();
            let b: f64 = w.row(i).iter().zip(x).map(|(s, t)| s * t).sum();
            let den = a - b;
            if den.abs() < SECANT_EPS {
                o[i] * kind.deriv(b)
            } else {
                o[i] * (kind.eval(a) - kind.eval(b)) / den
            }
        })
        .collect()
}

/// `ρ(W; x) = (o ⊙ σ'(Wx)) ⊗ x`.
pub fn rho_features(
    o: &OutputVector,
    w: &WeightMatrix,
    x: &DVector<f64>,
    kind: ActivationKind,
) -> Result<DVector<f64>> {
    check_model(o, w, x.len())?;
    let d = derivative_weights(o, w, x.as_slice(), kind);
    let mut out = DVector::zeros(w.nrows() * w.ncols());
    kron_into(&d, x.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// Feature matrix with one `ρ` per row.
fn feature_matrix<F: Fn(&[f64]) -> Vec<f64>>(inputs: &DMatrix<f64>, h: usize, weights: F) -> DMatrix<f64> {
    let (n, p) = inputs.shape();
    let mut phi = DMatrix::zeros(n, h * p);
    let mut x = vec![0.0; p];
    let mut row = vec![0.0; h * p];
    for k in 0..n {
        for j in 0..p {
            x[j] = inputs[(k, j)];
        }
        kron_into(&weights(&x), &x, &mut row);
        for (c, v) in row.iter().enumerate() {
            phi[(k, c)] = *v;
        }
    }
    phi
}

/// `H_{W*} = (1/n) Σ ρ(x_i) ρ(x_i)ᵀ`, the Hessian of the loss at the planted
/// weights when the labels are noiseless.
pub fn hessian_ground_truth(
    o: &OutputVector,
    wstar: &WeightMatrix,
    data: &Dataset,
    kind: ActivationKind,
) -> Result<DMatrix<f64>> {
    check_model(o, wstar, data.p())?;
    check_capacity(wstar.nrows() * wstar.ncols())?;
    let phi = feature_matrix(data.inputs(), wstar.nrows(), |x| derivative_weights(o, wstar, x, kind));
    Ok(phi.transpose() * &phi / data.n() as f64)
}

/// `∇L(U) = (H1 + H2 + H3) vec(U − W*)` for labels generated by `W*`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianDecomposition {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub h3: DMatrix<f64>,
}

impl HessianDecomposition {
    pub fn total(&self) -> DMatrix<f64> {
        &self.h1 + &self.h2 + &self.h3
    }
}

/// With `ρ* = ρ(W*)`, `ρ_U = ρ(U)` and the secant features `ρ_UW`:
/// `H1 = E ρ*ρ*ᵀ`, `H2 = E ρ*(ρ_UW − ρ*)ᵀ`, `H3 = E (ρ_U − ρ*)ρ_UWᵀ`.
pub fn hessian_decomposition(
    o: &OutputVector,
    wstar: &WeightMatrix,
    u: &WeightMatrix,
    data: &Dataset,
    kind: ActivationKind,
) -> Result<HessianDecomposition> {
    check_model(o, wstar, data.p())?;
    if u.shape() != wstar.shape() {
        return Err(Error::shape("U and W* differ in shape"));
    }
    check_capacity(wstar.nrows() * wstar.ncols())?;
    let h = wstar.nrows();
    let x = data.inputs();
    let star = feature_matrix(x, h, |x| derivative_weights(o, wstar, x, kind));
    let at_u = feature_matrix(x, h, |x| derivative_weights(o, u, x, kind));
    let secant = feature_matrix(x, h, |x| secant_weights(o, u, wstar, x, kind));
    let inv_n = 1.0 / data.n() as f64;
    let h1 = star.transpose() * &star * inv_n;
    let h2 = star.transpose() * (&secant - &star) * inv_n;
    let h3 = (at_u - &star).transpose() * &secant * inv_n;
    Ok(HessianDecomposition { h1, h2, h3 })
}

/// Direction sets for restricted eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub enum Directions {
    Full,
    /// Columns of the `m × d` matrix must be orthonormal.
    Subspace(DMatrix<f64>),
    /// Unit vectors with at most `s` nonzeros.
    SparseCone {
        s: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RestrictedEigen {
    pub value: f64,
    /// Supports examined (sparse cone only, 0 otherwise).
    pub supports_checked: usize,
    pub exhaustive: bool,
}

fn binomial(m: usize, s: usize) -> u128 {
    let s = s.min(m - s);
    let mut acc: u128 = 1;
    for k in 0..s {
        acc = acc * (m - k) as u128 / (k + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

fn principal_min_eig(h: &DMatrix<f64>, support: &[usize]) -> f64 {
    let k = support.len();
    let sub = DMatrix::from_fn(k, k, |a, b| h[(support[a], support[b])]);
    sym_min_eigen(&sub).0
}

/// `inf vᵀHv` over unit `v` in the direction set.
pub fn restricted_eigenvalue(h: &DMatrix<f64>, directions: &Directions) -> Result<RestrictedEigen> {
    let m = h.nrows();
    if m == 0 || h.ncols() != m {
        return Err(Error::shape("H must be a non-empty square matrix"));
    }
    if asymmetry(h) > 1e-8 * h.amax().max(1.0) {
        return Err(Error::domain("H is not symmetric"));
    }
    let whole = |value| RestrictedEigen {
        value,
        supports_checked: 0,
        exhaustive: true,
    };
    match directions {
        Directions::Full => Ok(whole(sym_min_eigen(h).0)),
        Directions::Subspace(b) => {
            if b.nrows() != m || b.ncols() == 0 {
                return Err(Error::shape(format!(
                    "basis is {}x{}, H is {m}x{m}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            let gram = b.transpose() * b;
            if (gram - DMatrix::identity(b.ncols(), b.ncols())).amax() > 1e-10 {
                return Err(Error::domain("subspace basis is not orthonormal"));
            }
            let reduced = b.transpose() * h * b;
            let sym = (&reduced + reduced.transpose()) * 0.5;
            Ok(whole(sym_min_eigen(&sym).0))
        }
        Directions::SparseCone { s } => {
            let s = *s;
            if s == 0 || s > m {
                return Err(Error::domain(format!("sparsity {s} must be in 1..={m}")));
            }
            let total = binomial(m, s);
            let mut best = f64::INFINITY;
            if total <= MAX_EXHAUSTIVE_SUPPORTS {
                let mut idx: Vec<usize> = (0..s).collect();
                let mut count = 0usize;
                loop {
                    best = best.min(principal_min_eig(h, &idx));
                    count += 1;
                    // next combination in lexicographic order
                    let mut k = s;
                    while k > 0 && idx[k - 1] == m - s + k - 1 {
                        k -= 1;
                    }
                    if k == 0 {
                        break;
                    }
                    idx[k - 1] += 1;
                    for t in k..s {
                        idx[t] = idx[t - 1] + 1;
                    }
                }
                Ok(RestrictedEigen {
                    value: best,
                    supports_checked: count,
                    exhaustive: true,
                })
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                for _ in 0..SAMPLED_SUPPORTS {
                    let mut support = sample(&mut rng, m, s).into_vec();
                    support.sort_unstable();
                    best = best.min(principal_min_eig(h, &support));
                }
                Ok(RestrictedEigen {
                    value: best,
                    supports_checked: SAMPLED_SUPPORTS,
                    exhaustive: false,
                })
            }
        }
    }
}

/// Theory constants for a teacher `(o, W*)` with absolute constant `C = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalQuantities {
    pub theta: f64,
    pub omega: f64,
    pub q: f64,
    pub mu_theory: f64,
    pub rho_theory: f64,
    pub upsilon: f64,
    /// Lower bound `ζ(s_min) o_min² / (κ^{h+2} ῡ³)` on the restricted eigenvalue.
    pub restricted_eig_bound: f64,
    /// Radius of the local-convergence region, `‖W*‖_F / (q √(hΩ ln p) ῡ⁴)`.
    pub init_radius: f64,
    /// `∏_i s_i / s_min`.
    pub lambda: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub kappa_o: f64,
    pub kappa_w: f64,
    pub zeta_s_min: f64,
    pub lip: f64,
    pub lip0: f64,
    pub h: usize,
    pub p: usize,
    pub n: usize,
    pub c: f64,
}

fn vector_condition(o: &DVector<f64>) -> Result<f64> {
    let min = o.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        return Err(Error::Degenerate("output vector has a zero entry".into()));
    }
    Ok(o.amax() / min)
}

pub fn critical_quantities(
    o: &OutputVector,
    wstar: &WeightMatrix,
    kind: ActivationKind,
    n: usize,
) -> Result<CriticalQuantities> {
    let (h, p) = wstar.shape();
    check_model(o, wstar, p)?;
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if h > p {
        return Err(Error::Condition(format!("W* is {h}x{p} and cannot have full row rank")));
    }
    let sv = singular_values(wstar);
    let s_max = sv[0];
    let s_min = sv[sv.len() - 1];
    if !(s_min > 1e-12 * s_max) {
        return Err(Error::Condition("W* is rank deficient".into()));
    }
    let kappa_o = vector_condition(o)?;
    let kappa_w = s_max / s_min;
    let lc = kind.lipschitz()?;
    let (lip, lip0) = (lc.lip, lc.lip0);
    let zeta_s_min = zeta(kind, s_min)?;
    if !(zeta_s_min > 0.0) || lip == 0.0 {
        return Err(Error::Degenerate(format!(
            "{kind} has zero nonlinearity at scale {s_min}"
        )));
    }
    let c = 1.0;
    let pf = p as f64;
    let theta = lip * lip * s_max * s_max * kappa_o * kappa_o * kappa_w.powi(h as i32 + 2) / zeta_s_min;
    let omega = h as f64 * (pf.ln() + lip0 * lip0 / (lip * lip * s_max * s_max));
    let q = (8.0 * pf * pf.ln() / n as f64).max(1.0);
    let o_max = o.amax();
    let o_min = o.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let mu_theory = 1.0 / (6.0 * q * o_max * o_max * lip * lip * omega);
    let upsilon = c * theta * (c * theta).ln().powi(2);
    let rho_theory = 1.0 - 1.0 / (12.0 * q * upsilon.powi(4) * omega);
    let restricted_eig_bound = zeta_s_min * o_min * o_min / (kappa_w.powi(h as i32 + 2) * upsilon.powi(3));
    let init_radius = wstar.norm() / (q * (h as f64 * omega * pf.ln()).sqrt() * upsilon.powi(4));
    let lambda = sv.iter().map(|s| s / s_min).product();
    Ok(CriticalQuantities {
        theta,
        omega,
        q,
        mu_theory,
        rho_theory,
        upsilon,
        restricted_eig_bound,
        init_radius,
        lambda,
        s_min,
        s_max,
        kappa_o,
        kappa_w,
        zeta_s_min,
        lip,
        lip0,
        h,
        p,
        n,
        c,
    })
}

/// `L R_o R_W √(((h + s) ln(n + p) + s ln(1 + B/R_W)) / n)`.
#[allow(clippy::too_many_arguments)]
pub fn rademacher_bound(lip: f64, r_o: f64, r_w: f64, h: usize, s: usize, b: f64, n: usize, p: usize) -> Result<f64> {
    if !(lip > 0.0 && r_o > 0.0 && r_w > 0.0 && b >= 0.0) || h == 0 || n == 0 {
        return Err(Error::domain(
            "Rademacher bound needs positive L, R_o, R_W, h, n and B >= 0",
        ));
    }
    let (hf, sf, nf) = (h as f64, s as f64, n as f64);
    let inner = (hf + sf) * (nf + p as f64).ln() + sf * (1.0 + b / r_w).ln();
    Ok(lip * r_o * r_w * (inner / nf).sqrt())
}

/// `‖V‖ / min_i ‖v_i‖` over the rows `v_i`.
pub fn kappa_row(v: &DMatrix<f64>) -> Result<f64> {
    let min_row = v.row_iter().map(|r| r.norm()).fold(f64::INFINITY, f64::min);
    if !(min_row > 0.0) {
        return Err(Error::Degenerate("matrix has a zero row".into()));
    }
    Ok(spectral_norm(v) / min_row)
}

/// `κ̄_ℓ = κ(o) ∏_{j<ℓ} κ_row(W_j) ∏_{j>ℓ} κ_row(W_jᵀ)` over the hidden
/// layers; the output layer enters only through `κ(o)`.
pub fn network_condition_number(layers: &[DMatrix<f64>], o: &DVector<f64>, ell: usize) -> Result<f64> {
    if ell >= layers.len() {
        return Err(Error::domain(format!(
            "layer {ell} out of range for {} layers",
            layers.len()
        )));
    }
    let mut k = vector_condition(o)?;
    for (j, w) in layers.iter().enumerate() {
        if j < ell {
            k *= kappa_row(w)?;
        } else if j > ell {
            k *= kappa_row(&w.transpose())?;
        }
    }
    Ok(k)
}

/// Monte-Carlo estimate of the smallest eigenvalue of the covariance of
/// `ρ(W*; x)` for `x ~ N(0, I)`, with a standard error from the spread of the
/// Rayleigh quotient along the minimizing eigenvector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub min_eig: f64,
    pub std_err: f64,
    pub samples: usize,
}

pub fn covariance_min_eig_check<R: Rng + ?Sized>(
    wstar: &WeightMatrix,
    o: &OutputVector,
    kind: ActivationKind,
    n_mc: usize,
    rng: &mut R,
) -> Result<CovarianceCheck> {
    let (h, p) = wstar.shape();
    check_model(o, wstar, p)?;
    check_capacity(h * p)?;
    if n_mc < 2 {
        return Err(Error::domain("need at least two Monte-Carlo samples"));
    }
    let x = gaussian_matrix(n_mc, p, 1.0, rng);
    let mut phi = feature_matrix(&x, h, |x| derivative_weights(o, wstar, x, kind));
    let mean = phi.row_mean();
    for mut row in phi.row_iter_mut() {
        row -= &mean;
    }
    let cov = phi.transpose() * &phi / (n_mc - 1) as f64;
    let (min_eig, v) = sym_min_eigen(&cov);
    let proj = &phi * &v;
    let quad: Vec<f64> = proj.iter().map(|t| t * t).collect();
    let qm = quad.iter().sum::<f64>() / n_mc as f64;
    let var = quad.iter().map(|t| (t - qm).powi(2)).sum::<f64>() / (n_mc - 1) as f64;
    Ok(CovarianceCheck {
        min_eig,
        std_err: (var / n_mc as f64).sqrt(),
        samples: n_mc,
    })
}

/// One line of a diagnostics report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticEntry {
    pub quantity: String,
    pub value: f64,
    pub inputs: String,
    pub seed: Option<u64>,
}

impl DiagnosticEntry {
    pub fn new(quantity: &str, value: f64, inputs: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            quantity: quantity.to_string(),
            value,
            inputs: inputs.into(),
            seed,
        }
    }
}

impl CriticalQuantities {
    pub fn entries(&self, seed: Option<u64>) -> Vec<DiagnosticEntry> {
        let inputs = format!("h={} p={} n={} C={}", self.h, self.p, self.n, self.c);
        [
            ("theta", self.theta),
            ("omega", self.omega),
            ("q", self.q),
            ("mu_theory", self.mu_theory),
            ("rho_theory", self.rho_theory),
            ("upsilon", self.upsilon),
            ("restricted_eig_bound", self.restricted_eig_bound),
            ("init_radius", self.init_radius),
            ("lambda", self.lambda),
            ("s_min", self.s_min),
            ("s_max", self.s_max),
            ("kappa_o", self.kappa_o),
            ("kappa_w", self.kappa_w),
            ("zeta_s_min", self.zeta_s_min),
            ("lip", self.lip),
            ("lip0", self.lip0),
        ]
        .into_iter()
        .map(|(name, v)| DiagnosticEntry::new(name, v, inputs.clone(), seed))
        .collect()
    }
}

/// CSV with header `quantity,value,inputs,seed`.
pub fn write_report_csv<W: Write>(entries: &[DiagnosticEntry], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for e in entries {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

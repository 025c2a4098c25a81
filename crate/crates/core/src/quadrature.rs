//! Quadrature rules for expectations over a standard Gaussian.
//!
//! A [`GaussianRule`] stores nodes `g_k` and weights `w_k` with
//! `E[f(g)] ≈ Σ_k w_k f(g_k)` for `g ~ N(0, 1)`.
//!
//! Two constructions are available. [`GaussianRule::hermite`] is the classical
//! Gauss–Hermite rule. [`GaussianRule::split_legendre`] applies Gauss–Legendre
//! separately on `[-R, 0]` and `[0, R]` against the Gaussian density. The split
//! rule keeps the origin as a panel boundary, so integrands with a kink at zero
//! (ReLU-type derivatives) and steep sigmoids still converge spectrally; it is
//! the default used for the nonlinearity measures.

use std::f64::consts::PI;

/// Nodes per half-line used by [`GaussianRule::default`].
pub const DEFAULT_NODES: usize = 96;

/// Truncation radius of the split rule. The Gaussian tail beyond 12 is below
/// 1e-32.
pub const DEFAULT_RADIUS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for GaussianRule {
    fn default() -> Self {
        Self::split_legendre(DEFAULT_NODES, DEFAULT_RADIUS)
    }
}

impl GaussianRule {
    /// Gauss–Legendre with `n` nodes on each of `[-radius, 0]` and `[0, radius]`.
    pub fn split_legendre(n: usize, radius: f64) -> Self {
        assert!(n >= 1 && radius > 0.0);
        let (x, w) = gauss_legendre(n);
        let half = 0.5 * radius;
        let norm = 1.0 / (2.0 * PI).sqrt();
        let mut nodes = Vec::with_capacity(2 * n);
        let mut weights = Vec::with_capacity(2 * n);
        for sign in [-1.0, 1.0] {
            for (xi, wi) in x.iter().zip(&w) {
                let g = sign * half * (xi + 1.0);
                nodes.push(g);
                weights.push(half * wi * norm * (-0.5 * g * g).exp());
            }
        }
        Self { nodes, weights }
    }

    /// Gauss–Hermite with `n` nodes, rescaled to the standard normal.
    pub fn hermite(n: usize) -> Self {
        assert!(n >= 1);
        let (x, w) = gauss_hermite(n);
        let nodes = x.iter().map(|xi| std::f64::consts::SQRT_2 * xi).collect();
        let weights = w.iter().map(|wi| wi / PI.sqrt()).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(g)]` for `g ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&g, &w)| w * f(g)).sum()
    }
}

/// Gauss–Legendre nodes/weights on `[-1, 1]` by Newton iteration on the
/// three-term recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Hermite nodes/weights for weight `exp(-x²)`, using the normalized
/// Hermite recurrence so that large `n` does not overflow.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

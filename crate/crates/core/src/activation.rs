//! Scalar activations, their derivatives and Gaussian nonlinearity measures.
//!
//! `Erf` is the unnormalized integral `σ(x) = ∫₀ˣ exp(-t²) dt`, so that
//! `σ'(x) = exp(-x²)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussianRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Erf,
    SquaredRelu,
    Softplus,
    /// Not differentiable at 0; `σ'(0)` is taken to be 0.
    Relu,
    /// Linear baseline; `ζ ≡ 0`.
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 7] = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Erf,
        ActivationKind::SquaredRelu,
        ActivationKind::Softplus,
        ActivationKind::Relu,
        ActivationKind::Identity,
    ];

    /// Kinds with a Lipschitz derivative.
    pub const SMOOTH: [ActivationKind; 5] = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Erf,
        ActivationKind::SquaredRelu,
        ActivationKind::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Erf => "erf",
            ActivationKind::SquaredRelu => "squared_relu",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
        }
    }

    /// Whether `σ'` is Lipschitz (ReLU is not).
    pub fn is_smooth(self) -> bool {
        !matches!(self, ActivationKind::Relu)
    }

    /// `σ(x)`, no input validation.
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => logistic(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Erf => 0.5 * std::f64::consts::PI.sqrt() * libm::erf(x),
            ActivationKind::SquaredRelu => {
                let r = x.max(0.0);
                r * r
            }
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Identity => x,
        }
    }

    /// `σ'(x)`, no input validation.
    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Erf => (-x * x).exp(),
            ActivationKind::SquaredRelu => 2.0 * x.max(0.0),
            ActivationKind::Softplus => logistic(x),
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Identity => 1.0,
        }
    }

    /// `σ''(x)` where it exists; one-sided at kinks.
    pub fn second_deriv(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            ActivationKind::Erf => -2.0 * x * (-x * x).exp(),
            ActivationKind::SquaredRelu => {
                if x > 0.0 {
                    2.0
                } else {
                    0.0
                }
            }
            ActivationKind::Softplus => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            ActivationKind::Relu | ActivationKind::Identity => 0.0,
        }
    }

    /// Lipschitz constant `L` of `σ'` and `L0 = |σ'(0)|`.
    ///
    /// `L` is found by maximizing `|σ''|` numerically (grid scan over
    /// `[-20, 20]` followed by golden-section refinement), which is exact for
    /// the piecewise-constant cases and accurate to ~1e-12 otherwise.
    pub fn lipschitz(self) -> Result<LipschitzConstants> {
        if !self.is_smooth() {
            return Err(Error::Degenerate(format!(
                "{} has a discontinuous derivative",
                self.name()
            )));
        }
        let f = |x: f64| self.second_deriv(x).abs();
        let (lo, hi, steps) = (-20.0, 20.0, 8000);
        let h = (hi - lo) / steps as f64;
        let mut best = (lo, f(lo));
        for k in 1..=steps {
            let x = lo + h * k as f64;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let refined = golden_max(&f, best.0 - h, best.0 + h);
        let lip = best.1.max(refined);
        Ok(LipschitzConstants {
            lip,
            lip0: self.deriv(0.0).abs(),
        })
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::domain(format!("unknown activation '{s}'")))
    }
}

/// `L`: Lipschitz constant of `σ'`; `L0`: bound on `|σ'(0)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzConstants {
    pub lip: f64,
    pub lip0: f64,
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..200 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
        if (b - a).abs() < 1e-13 {
            break;
        }
    }
    f(0.5 * (a + b))
}

fn check_finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::domain(format!("non-finite activation input {x}")))
    }
}

/// `σ(x)` with input validation.
pub fn act_value(kind: ActivationKind, x: f64) -> Result<f64> {
    check_finite(x).map(|x| kind.eval(x))
}

/// `σ'(x)` with input validation.
pub fn act_deriv(kind: ActivationKind, x: f64) -> Result<f64> {
    check_finite(x).map(|x| kind.deriv(x))
}

/// Gaussian moments of `η = σ'(θ g)` needed by both nonlinearity measures.
#[derive(Debug, Clone, Copy)]
struct DerivMoments {
    /// var[η]
    var: f64,
    /// E[g η]
    first: f64,
    /// var[g η] − E[g² η]²
    second_term: f64,
}

fn deriv_moments(kind: ActivationKind, theta: f64, rule: &GaussianRule) -> DerivMoments {
    let (mut m1, mut m2, mut a, mut b, mut c) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&g, &w) in rule.nodes().iter().zip(rule.weights()) {
        let eta = kind.deriv(theta * g);
        m1 += w * eta;
        m2 += w * eta * eta;
        a += w * eta * g;
        b += w * eta * eta * g * g;
        c += w * eta * g * g;
    }
    DerivMoments {
        var: m2 - m1 * m1,
        first: a,
        second_term: b - a * a - c * c,
    }
}

/// `ζ(θ) = min{var[σ'(θg)] − E[σ'(θg)g]², var[σ'(θg)g] − E[σ'(θg)g²]²}`.
pub fn zeta(kind: ActivationKind, theta: f64) -> Result<f64> {
    zeta_with(kind, theta, &GaussianRule::default())
}

pub fn zeta_with(kind: ActivationKind, theta: f64, rule: &GaussianRule) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::domain(format!("zeta needs theta > 0, got {theta}")));
    }
    if kind == ActivationKind::Identity {
        // σ' is constant, both variance terms vanish identically
        return Ok(0.0);
    }
    let m = deriv_moments(kind, theta, rule);
    let t1 = m.var - m.first * m.first;
    Ok(t1.min(m.second_term).max(0.0))
}

/// Grid size used by [`zeta_interval`]. Of the form `4m + 1` so that the
/// 5-point grid on `[α, β]` is a subset.
pub const INTERVAL_GRID: usize = 33;

/// Interval nonlinearity `ζ(α, β) = min{θ1, θ2}` where `θ1` is the infimum over
/// `x, y ∈ [α, β]` of the smaller eigenvalue of the 2×2 matrix
/// `[[var η(x), E[gη(x)]E[gη(y)]], [·, var η(y)]]` and `θ2` the infimum of
/// `var[gη(x)] − E[g²η(x)]²`. Infima are taken over a uniform grid.
pub fn zeta_interval(kind: ActivationKind, alpha: f64, beta: f64) -> Result<f64> {
    zeta_interval_with(kind, alpha, beta, INTERVAL_GRID, &GaussianRule::default())
}

pub fn zeta_interval_with(
    kind: ActivationKind,
    alpha: f64,
    beta: f64,
    grid: usize,
    rule: &GaussianRule,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
        return Err(Error::domain(format!(
            "invalid interval [{alpha}, {beta}], need 0 < alpha <= beta"
        )));
    }
    if kind == ActivationKind::Identity {
        return Ok(0.0);
    }
    let points: Vec<f64> = if alpha == beta || grid < 2 {
        vec![alpha]
    } else {
        (0..grid)
            .map(|k| alpha + (beta - alpha) * k as f64 / (grid - 1) as f64)
            .collect()
    };
    let moments: Vec<DerivMoments> = points.iter().map(|&x| deriv_moments(kind, x, rule)).collect();
    let mut theta1 = f64::INFINITY;
    let mut theta2 = f64::INFINITY;
    for (i, mx) in moments.iter().enumerate() {
        theta2 = theta2.min(mx.second_term);
        for my in &moments[i..] {
            let diff = mx.var - my.var;
            let cross = mx.first * my.first;
            let v = 0.5 * (mx.var + my.var - (diff * diff + 4.0 * cross * cross).sqrt());
            theta1 = theta1.min(v);
        }
    }
    Ok(theta1.min(theta2).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn values_at_reference_points() {
        assert!((act_value(ActivationKind::Softplus, 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(act_value(ActivationKind::SquaredRelu, -3.0).unwrap(), 0.0);
        assert!((act_deriv(ActivationKind::SquaredRelu, 2.0).unwrap() - 4.0).abs() < 1e-15);
        assert!((act_deriv(ActivationKind::Softplus, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(act_deriv(ActivationKind::Relu, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn erf_is_the_unnormalized_integral() {
        // composite Simpson oracle for ∫₀¹ exp(-t²) dt
        let m = 2000;
        let h = 1.0 / m as f64;
        let f = |t: f64| (-t * t).exp();
        let mut s = f(0.0) + f(1.0);
        for k in 1..m {
            let t = k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        let simpson = s * h / 3.0;
        let v = act_value(ActivationKind::Erf, 1.0).unwrap();
        assert!((v - simpson).abs() < 1e-12, "{v} {simpson}");
        assert!((v - 0.746_824_132_812_427).abs() < 1e-12);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        for kind in ActivationKind::ALL {
            assert!(act_value(kind, f64::NAN).is_err());
            assert!(act_deriv(kind, f64::INFINITY).is_err());
        }
    }

    #[test]
    fn softplus_is_overflow_safe() {
        let v = act_value(ActivationKind::Softplus, 800.0).unwrap();
        assert!((v - 800.0).abs() < 1e-12);
        let v = act_value(ActivationKind::Softplus, -800.0).unwrap();
        assert!((0.0..1e-300).contains(&v));
    }

    #[test]
    fn lipschitz_constants_match_closed_forms() {
        let cases = [
            (ActivationKind::Sigmoid, 1.0 / (6.0 * 3f64.sqrt()), 0.25),
            (ActivationKind::Tanh, 4.0 / (3.0 * 3f64.sqrt()), 1.0),
            (ActivationKind::Erf, 2f64.sqrt() * (-0.5f64).exp(), 1.0),
            (ActivationKind::SquaredRelu, 2.0, 0.0),
            (ActivationKind::Softplus, 0.25, 0.5),
            (ActivationKind::Identity, 0.0, 1.0),
        ];
        for (kind, lip, lip0) in cases {
            let c = kind.lipschitz().unwrap();
            assert!((c.lip - lip).abs() < 1e-10, "{kind}: {} vs {lip}", c.lip);
            assert!(c.lip >= lip - 1e-15);
            assert_eq!(c.lip0, lip0);
        }
        assert!(ActivationKind::Relu.lipschitz().is_err());
    }

    #[test]
    fn zeta_reference_values() {
        for theta in [0.3, 1.0, 4.0] {
            assert_eq!(zeta(ActivationKind::Identity, theta).unwrap(), 0.0);
        }
        let z = zeta(ActivationKind::SquaredRelu, 1.0).unwrap();
        assert!((z - (1.0 - 2.0 / PI)).abs() < 1e-12);
        // closed form θ²(1 − 2/π) scales quadratically
        let z2 = zeta(ActivationKind::SquaredRelu, 2.0).unwrap();
        assert!((z2 - 4.0 * (1.0 - 2.0 / PI)).abs() < 1e-11);
        assert!(zeta(ActivationKind::Softplus, 10.0).unwrap() > 0.05);
        assert!(zeta(ActivationKind::Tanh, 0.0).is_err());
        assert!(zeta(ActivationKind::Tanh, -1.0).is_err());
    }

    #[test]
    fn relu_zeta_matches_half_normal_moments() {
        // var[1{g>0}] − E[g 1{g>0}]² = 1/4 − 1/(2π)
        let z = zeta(ActivationKind::Relu, 1.0).unwrap();
        assert!((z - (0.25 - 1.0 / (2.0 * PI))).abs() < 1e-12);
    }

    #[test]
    fn zeta_interval_degenerate_matches_pointwise() {
        for kind in ActivationKind::SMOOTH {
            for theta in [0.5, 1.0, 2.0] {
                let a = zeta_interval(kind, theta, theta).unwrap();
                let b = zeta(kind, theta).unwrap();
                assert!((a - b).abs() <= 1e-4 * b.max(1.0));
            }
        }
        assert_eq!(zeta_interval(ActivationKind::Identity, 1.0, 1.0).unwrap(), 0.0);
        let wide = zeta_interval(ActivationKind::SquaredRelu, 0.5, 2.0).unwrap();
        let point = zeta_interval(ActivationKind::SquaredRelu, 1.0, 1.0).unwrap();
        assert!(wide <= point);
        assert!(zeta_interval(ActivationKind::Tanh, 2.0, 1.0).is_err());
        assert!(zeta_interval(ActivationKind::Tanh, 0.0, 1.0).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "squared-relu".parse::<ActivationKind>().unwrap(),
            ActivationKind::SquaredRelu
        );
        assert_eq!("ReLU".parse::<ActivationKind>().unwrap(), ActivationKind::Relu);
        assert!("gelu".parse::<ActivationKind>().is_err());
    }
}

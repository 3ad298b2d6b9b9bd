//! Probabilists' Hermite expansions and the exact Ornstein–Uhlenbeck resolvent
//! on functionals of one or two independent Gaussians.

use crate::error::{Error, Result};
use gauss_quad::hermite::GaussHermite;
use serde::Serialize;
use std::sync::OnceLock;

/// Gauss–Hermite nodes used for every Gaussian expectation in this module.
const QUADRATURE_NODES: usize = 240;
/// Default tail-mass tolerance for [`HermiteSeries::from_fn`], relative to `max(E[f²], 1)`.
pub const TAIL_TOL: f64 = 1e-10;

/// Nodes and weights for `E[f(ζ)]`, ζ ~ N(0,1).
///
/// Nodes come from the eigenvalue method and are polished by Newton steps;
/// weights are recomputed from the Christoffel function `1/Σₖ pₖ(x)²` of the
/// orthonormal polynomials, which keeps them accurate relative to their own
/// size far out in the tails, where `Hₙ` is huge and the eigenvector weights
/// only carry absolute precision.
fn gaussian_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = QUADRATURE_NODES;
        let rule = GaussHermite::new(std::num::NonZeroUsize::new(n).unwrap());
        rule.as_node_weight_pairs()
            .iter()
            .map(|&(x0, _)| {
                let mut x = x0;
                for _ in 0..3 {
                    let (pn, pm) = orthonormal_pair(x, n);
                    x -= pn / ((2.0 * n as f64).sqrt() * pm);
                }
                let christoffel = orthonormal_sum_sq(x, n);
                (std::f64::consts::SQRT_2 * x, 1.0 / (christoffel * std::f64::consts::PI.sqrt()))
            })
            .collect()
    })
}

/// Orthonormal polynomials for the weight `e^{−x²}`: `(p_n(x), p_{n−1}(x))`.
fn orthonormal_pair(x: f64, n: usize) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let next = (2.0 / (k + 1) as f64).sqrt() * x * cur - (k as f64 / (k + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// `Σ_{k<n} p_k(x)²`.
fn orthonormal_sum_sq(x: f64, n: usize) -> f64 {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sum = 0.0;
    for k in 0..n {
        sum += cur * cur;
        let next = (2.0 / (k + 1) as f64).sqrt() * x * cur - (k as f64 / (k + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    sum
}

/// Largest degree the quadrature resolves.
pub const MAX_DEGREE: usize = 160;

/// `E[f(ζ)]` for standard Gaussian ζ.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64) -> f64 {
    gaussian_rule().iter().map(|&(x, w)| w * f(x)).sum()
}

/// `n!` as a float, `n ≤ 170`.
pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `H₀(x), …, H_N(x)` by `H_{n+1} = x Hₙ − n H_{n−1}`.
pub fn hermite_values(x: f64, n: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        let next = x * out[k] - k as f64 * out[k - 1];
        out.push(next);
    }
}

/// `f = Σₙ hₙ Hₙ` with `E[Hₘ Hₙ] = n! δₘₙ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HermiteSeries {
    pub coeffs: Vec<f64>,
}

impl HermiteSeries {
    /// `hₙ = E[f(ζ)Hₙ(ζ)]/n!`; fails if more than `tol` of `E[f²]` lies beyond degree `n`.
    pub fn from_fn(f: impl Fn(f64) -> f64, n: usize, tol: f64) -> Result<Self> {
        if n > MAX_DEGREE {
            return Err(Error::Domain(format!("degree {n} exceeds the supported cap {MAX_DEGREE}")));
        }
        let mut coeffs = vec![0.0; n + 1];
        let mut h = Vec::with_capacity(n + 1);
        let mut second_moment = 0.0;
        for &(x, w) in gaussian_rule() {
            let fx = f(x);
            second_moment += w * fx * fx;
            hermite_values(x, n, &mut h);
            for (c, hk) in coeffs.iter_mut().zip(&h) {
                *c += w * fx * hk;
            }
        }
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c /= factorial(k);
        }
        let series = Self { coeffs };
        let tail = second_moment - series.second_moment();
        if tail > tol * second_moment.max(1.0) {
            return Err(Error::Degree { degree: n, tail });
        }
        Ok(series)
    }

    /// Builds a series from explicit coefficients.
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut h = Vec::with_capacity(self.coeffs.len());
        hermite_values(x, self.degree(), &mut h);
        self.coeffs.iter().zip(&h).map(|(c, v)| c * v).sum()
    }

    /// `E[f²] = Σ n! hₙ²` (truncated).
    pub fn second_moment(&self) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, c)| factorial(k) * c * c).sum()
    }

    /// Series of `f′`, using `Hₙ′ = n H_{n−1}`: `(f′)ₙ = (n+1) h_{n+1}`.
    pub fn derivative(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
        Self { coeffs }
    }

    /// Series of `(1 + 𝓛)⁻¹f`: 𝓛 acts as multiplication by n on the n-th chaos.
    pub fn resolvent(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(k, c)| c / (1.0 + k as f64)).collect();
        Self { coeffs }
    }

    /// Coefficients padded to a common degree.
    fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }
}

/// `⟨f(ζ)(1 + 𝓛)⁻¹ g(ζ)⟩ = Σₙ n! fₙ gₙ/(1 + n)`.
pub fn resolvent_1d_pair(f: &HermiteSeries, g: &HermiteSeries) -> f64 {
    let n = f.coeffs.len().max(g.coeffs.len());
    (0..n).map(|k| factorial(k) * f.coeff(k) * g.coeff(k) / (1.0 + k as f64)).sum()
}

/// `⟨p(ζ₁)q(ζ₂)(1 + 𝓛)⁻¹ p(ζ₁)q(ζ₂)⟩ = Σ m!n! pₘ² qₙ²/(1 + m + n)` for independent ζ₁, ζ₂.
pub fn resolvent_two_edge_pair(p: &HermiteSeries, q: &HermiteSeries) -> f64 {
    let pw: Vec<f64> = p.coeffs.iter().enumerate().map(|(m, c)| factorial(m) * c * c).collect();
    let qw: Vec<f64> = q.coeffs.iter().enumerate().map(|(n, c)| factorial(n) * c * c).collect();
    let mut acc = 0.0;
    for (m, a) in pw.iter().enumerate().skip(1) {
        for (n, b) in qw.iter().enumerate() {
            acc += a * b / (1.0 + (m + n) as f64);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_orthogonality() {
        let s = HermiteSeries::from_fn(|x| x * x - 1.0, 10, 1e-14).unwrap();
        for (k, c) in s.coeffs.iter().enumerate() {
            assert!((c - if k == 2 { 1.0 } else { 0.0 }).abs() < 1e-12, "k = {k}: {c}");
        }
    }

    #[test]
    fn resolvent_eigenvalues() {
        let h0 = HermiteSeries::new(vec![1.0]);
        let h1 = HermiteSeries::new(vec![0.0, 1.0]);
        assert_eq!(resolvent_1d_pair(&h0, &h0), 1.0);
        assert_eq!(resolvent_1d_pair(&h1, &h1), 0.5);
        let p = HermiteSeries::new(vec![0.0, 0.7]);
        let q = HermiteSeries::new(vec![1.3]);
        assert!((resolvent_two_edge_pair(&p, &q) - 0.49 * 1.69 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degree_error_reports_tail() {
        let err = HermiteSeries::from_fn(|x| x.abs(), 4, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Degree { degree: 4, .. }));
    }
}

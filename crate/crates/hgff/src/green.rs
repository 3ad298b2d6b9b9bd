//! Lattice Green function of `λ − Δ` on ℤᵈ and its finite differences.
//!
//! Values come from the heat-kernel representation
//! `G_λ(x) = ∫₀^∞ e^{−λt} Πᵢ e^{−2t} I_{xᵢ}(2t) dt`, which is the Fourier
//! integral `(2π)^{−d}∫ cos(x·θ)/(λ + Σ4sin²(θᵢ/2)) dθ` after integrating each
//! angle in closed form. The t-integral uses Gauss–Legendre on geometric
//! panels up to `T` and the large-argument Bessel expansion beyond `T`; one
//! Bessel recurrence per node serves every table entry.

use crate::error::{Error, Result};
use crate::par::*;
use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

/// Default Gauss–Legendre nodes per panel; the error estimate doubles it.
pub const DEFAULT_ORDER: usize = 24;
/// Default cache radius for Hessian sums in d = 3.
pub const DEFAULT_RADIUS: usize = 24;

/// A value with an error estimate (quadrature error or Monte Carlo stderr).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

pub(crate) fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = std::num::NonZeroUsize::new(order.max(1)).unwrap();
    GaussLegendre::new(n).as_node_weight_pairs().to_vec()
}

/// `e^{−z} Iₙ(z)` for `n = 0..out.len()` by Miller's backward recurrence,
/// normalized with `e^{−z}(I₀ + 2Σₙ≥₁ Iₙ) = 1`.
pub fn scaled_bessel_row(z: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if out.is_empty() {
        return;
    }
    if z == 0.0 {
        out[0] = 1.0;
        return;
    }
    let nmax = out.len() - 1;
    let start = nmax + 20 + (80.0 * z).sqrt().ceil() as usize;
    let (mut hi, mut cur) = (0.0f64, 1e-280f64);
    let mut sum = 0.0;
    for n in (0..=start).rev() {
        if n <= nmax {
            out[n] = cur;
        }
        sum += if n == 0 { cur } else { 2.0 * cur };
        if n == 0 {
            break;
        }
        let lower = 2.0 * n as f64 / z * cur + hi;
        hi = cur;
        cur = lower;
        if cur > 1e250 {
            cur *= 1e-250;
            hi *= 1e-250;
            sum *= 1e-250;
            out[n.min(nmax + 1)..].iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    out.iter_mut().for_each(|v| *v /= sum);
}

/// Large-argument series `√(2πz) e^{−z} I_ν(z) ≈ Σₖ (−1)ᵏ aₖ(ν)/zᵏ`.
fn bessel_asymptotic_factor(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let (mut term, mut acc) = (1.0, 1.0);
    for k in 1..=10 {
        let m = (2 * k - 1) as f64;
        term *= -(mu - m * m) / (8.0 * k as f64 * z);
        acc += term;
    }
    acc
}

/// Quadrature plan in t for a given mass and largest Bessel index.
struct TimeQuadrature {
    nodes: Vec<(f64, f64)>,
    /// Start of the analytic tail; `None` when `e^{−λT}` makes it negligible.
    tail_from: Option<f64>,
    tail_rule: Vec<(f64, f64)>,
}

impl TimeQuadrature {
    fn new(lambda: f64, nmax: usize, order: usize) -> Self {
        let t_asym = 20.0 * ((nmax * nmax) as f64 + 1.0);
        let (t_end, tail) = if lambda > 0.0 && 50.0 / lambda < t_asym {
            (50.0 / lambda, false)
        } else {
            (t_asym, true)
        };
        let rule = gauss_legendre(order);
        let mut nodes = Vec::new();
        let (mut a, mut b) = (0.0, 0.5f64);
        loop {
            let b_eff = b.min(t_end);
            for &(x, w) in &rule {
                let t = 0.5 * (a + b_eff) + 0.5 * (b_eff - a) * x;
                nodes.push((t, 0.5 * (b_eff - a) * w * (-lambda * t).exp()));
            }
            if b_eff >= t_end {
                break;
            }
            a = b;
            b *= 2.0;
        }
        Self { nodes, tail_from: tail.then_some(t_end), tail_rule: rule }
    }

    /// `∫_T^∞ e^{−λt} Πᵢ e^{−2t}I_{xᵢ}(2t) dt` with `t = T/u²`.
    fn tail(&self, x: &[usize], lambda: f64) -> f64 {
        let Some(t0) = self.tail_from else { return 0.0 };
        let d = x.len() as i32;
        let pref = 2.0 * t0 * (4.0 * std::f64::consts::PI * t0).powf(-0.5 * d as f64);
        let mut acc = 0.0;
        for &(xi, w) in &self.tail_rule {
            let u = 0.5 * (xi + 1.0);
            let z = 2.0 * t0 / (u * u);
            let prod: f64 = x.iter().map(|&n| bessel_asymptotic_factor(n as f64, z)).product();
            acc += 0.5 * w * u.powi(d - 3) * (-lambda * t0 / (u * u)).exp() * prod;
        }
        pref * acc
    }
}

fn check_mass(lambda: f64, d: usize) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("mass lambda = {lambda} must be finite and >= 0")));
    }
    if lambda == 0.0 && d <= 2 {
        return Err(Error::Divergence(d));
    }
    if d == 0 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    Ok(())
}

/// Evaluates `G_λ` at every point of `points` (absolute coordinates) with one node set.
fn evaluate(points: &[Vec<usize>], lambda: f64, order: usize) -> Vec<f64> {
    let nmax = points.iter().flat_map(|p| p.iter().copied()).max().unwrap_or(0);
    let quad = TimeQuadrature::new(lambda, nmax, order);
    let rows: Vec<Vec<f64>> = quad
        .nodes
        .par_iter()
        .map(|&(t, _)| {
            let mut row = vec![0.0; nmax + 1];
            scaled_bessel_row(2.0 * t, &mut row);
            row
        })
        .collect();
    points
        .par_iter()
        .map(|p| {
            let body: f64 = quad
                .nodes
                .iter()
                .zip(&rows)
                .map(|(&(_, w), row)| w * p.iter().map(|&n| row[n]).product::<f64>())
                .sum();
            body + quad.tail(p, lambda)
        })
        .collect()
}

/// `G_λ(x)` with an order-doubling error estimate.
pub fn green_value(x: &[i64], lambda: f64, d: usize, order: usize) -> Result<Estimate> {
    check_mass(lambda, d)?;
    if x.len() != d {
        return Err(Error::Dimension(format!("point has {} coordinates, d = {d}", x.len())));
    }
    let p = vec![x.iter().map(|c| c.unsigned_abs() as usize).collect::<Vec<_>>()];
    let coarse = evaluate(&p, lambda, order)[0];
    let fine = evaluate(&p, lambda, 2 * order)[0];
    Ok(Estimate { value: fine, error: (fine - coarse).abs() })
}

/// Cached `G_λ(x)` for `‖x‖∞ ≤ R`, stored by absolute coordinates.
#[derive(Clone, Debug)]
pub struct GreenTable {
    d: usize,
    lambda: f64,
    radius: usize,
    order: usize,
    values: Vec<f64>,
    /// Largest order-doubling difference over the table.
    pub quadrature_error: f64,
}

impl GreenTable {
    pub fn build(d: usize, lambda: f64, radius: usize, order: usize) -> Result<Self> {
        check_mass(lambda, d)?;
        let side = radius + 1;
        let total = side.pow(d as u32);
        if total > 50_000_000 {
            return Err(Error::Domain(format!("table radius {radius} too large for d = {d}")));
        }
        let abs_of = |mut idx: usize| {
            let mut p = vec![0usize; d];
            for c in p.iter_mut().rev() {
                *c = idx % side;
                idx /= side;
            }
            p
        };
        let index_of = |p: &[usize]| p.iter().fold(0usize, |acc, &c| acc * side + c);
        // canonical representatives: non-increasing coordinates
        let canonical: Vec<Vec<usize>> = (0..total)
            .map(abs_of)
            .filter(|p| p.windows(2).all(|w| w[0] >= w[1]))
            .collect();
        let coarse = evaluate(&canonical, lambda, order);
        let fine = evaluate(&canonical, lambda, 2 * order);
        let quadrature_error = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut values = vec![0.0; total];
        for (p, v) in canonical.iter().zip(&fine) {
            values[index_of(p)] = *v;
        }
        for idx in 0..total {
            let mut p = abs_of(idx);
            p.sort_unstable_by(|a, b| b.cmp(a));
            values[idx] = values[index_of(&p)];
        }
        Ok(Self { d, lambda, radius, order, values, quadrature_error })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, x: &[i64]) -> Option<f64> {
        let side = self.radius + 1;
        let mut idx = 0usize;
        for &c in x {
            let a = c.unsigned_abs() as usize;
            if a > self.radius {
                return None;
            }
            idx = idx * side + a;
        }
        Some(self.values[idx])
    }

    fn at(&self, x: &[i64]) -> Result<f64> {
        self.get(x).ok_or_else(|| Error::Domain(format!("point {x:?} outside cached radius {}", self.radius)))
    }

    fn shifted(&self, x: &[i64], moves: &[(usize, i64)]) -> Result<f64> {
        let mut y = x.to_vec();
        for &(i, s) in moves {
            y[i] += s;
        }
        self.at(&y)
    }

    /// `(λ − Δ)G(x) − δ₀(x)`.
    pub fn equation_residual(&self, x: &[i64]) -> Result<f64> {
        let g = self.at(x)?;
        let mut acc = (self.lambda + 2.0 * self.d as f64) * g;
        for i in 0..self.d {
            acc -= self.shifted(x, &[(i, 1)])? + self.shifted(x, &[(i, -1)])?;
        }
        let delta = if x.iter().all(|&c| c == 0) { 1.0 } else { 0.0 };
        Ok(acc - delta)
    }

    /// `Hᵢⱼ(x) = ∇ᵢˣ∇ⱼʸ G(x − y)|_{y=0} = G(x+eᵢ−eⱼ) − G(x+eᵢ) − G(x−eⱼ) + G(x)`.
    ///
    /// The edge form used in the c₂ coefficient is `∇∇ᵢG(eⱼ, y) = Hⱼᵢ(−y)`.
    pub fn hessian(&self, i: usize, j: usize, x: &[i64]) -> Result<f64> {
        Ok(self.shifted(x, &[(i, 1), (j, -1)])? - self.shifted(x, &[(i, 1)])? - self.shifted(x, &[(j, -1)])?
            + self.at(x)?)
    }

    /// `Σ_{‖y‖∞≤R} ∇∇ᵢG(eⱼ, y)`; tends to 0 for `i ≠ j`.
    pub fn hessian_row_sum(&self, i: usize, j: usize, r: usize) -> Result<f64> {
        let mut acc = 0.0;
        for_each_in_box(self.d, r, |y| {
            let x: Vec<i64> = y.iter().map(|c| -c).collect();
            acc += self.hessian(j, i, &x).unwrap_or(f64::NAN);
        });
        finite(acc, r, self.radius)
    }

    /// `Σ_{‖y‖∞≤R} |Hᵢⱼ(y)|²` without tail correction.
    pub fn hessian_partial_sum(&self, i: usize, j: usize, r: usize) -> Result<f64> {
        let mut acc = 0.0;
        for_each_in_box(self.d, r, |y| acc += self.hessian(i, j, y).unwrap_or(f64::NAN).powi(2));
        finite(acc, r, self.radius)
    }

    /// Forward third difference `DᵢDⱼD_k G(x)`.
    pub fn triple_difference(&self, i: usize, j: usize, k: usize, x: &[i64]) -> Result<f64> {
        let mut acc = 0.0;
        for mask in 0..8u32 {
            let mut moves = Vec::with_capacity(3);
            for (bit, dir) in [i, j, k].into_iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    moves.push((dir, 1));
                }
            }
            let sign = if (3 - mask.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * self.shifted(x, &moves)?;
        }
        Ok(acc)
    }
}

fn finite(v: f64, r: usize, radius: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("box radius {r} needs table radius >= {}, have {radius}", r + 1)))
    }
}

fn for_each_in_box(d: usize, r: usize, mut f: impl FnMut(&[i64])) {
    let side = 2 * r + 1;
    let mut y = vec![0i64; d];
    for idx in 0..side.pow(d as u32) {
        let mut k = idx;
        for c in y.iter_mut().rev() {
            *c = (k % side) as i64 - r as i64;
            k /= side;
        }
        f(&y);
    }
}

/// `∇ᵢˣ∇ⱼʸG(x, 0)` (builds a table just large enough).
pub fn grad_grad_green(i: usize, j: usize, x: &[i64], lambda: f64) -> Result<f64> {
    let d = x.len();
    if i >= d || j >= d {
        return Err(Error::Domain(format!("direction out of range for d = {d}")));
    }
    let r = x.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0) + 1;
    GreenTable::build(d, lambda, r, DEFAULT_ORDER)?.hessian(i, j, x)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HessianSum {
    /// Sum over `‖y‖∞ ≤ R`.
    pub partial: f64,
    /// Sum over `‖y‖∞ ≤ R/2`, used to fit the tail.
    pub half: f64,
    /// Extrapolated remainder `A·R^{−d}`.
    pub tail: f64,
    pub value: f64,
}

impl GreenTable {
    /// `S = Σ_y |∇∇ᵢG(eⱼ, y)|²` with the remainder modeled as `A·R^{−d}`, `A` fit from the last octave.
    pub fn hessian_l2_sum(&self, i: usize, j: usize, r: usize) -> Result<HessianSum> {
        if r < 2 {
            return Err(Error::Domain(format!("radius R = {r} must be >= 2")));
        }
        // Σ_y |Hⱼᵢ(−y)|² over a symmetric box equals Σ_y |Hᵢⱼ(y)|²
        let partial = self.hessian_partial_sum(i, j, r)?;
        let half = self.hessian_partial_sum(i, j, r / 2)?;
        let ratio = (r as f64 / (r / 2) as f64).powi(self.d as i32);
        let tail = (partial - half) / (ratio - 1.0);
        Ok(HessianSum { partial, half, tail, value: partial + tail })
    }
}

pub fn hessian_l2_sum(i: usize, j: usize, lambda: f64, r: usize, d: usize) -> Result<HessianSum> {
    if d < 3 {
        return Err(Error::Domain(format!("Hessian sums need d >= 3, got {d}")));
    }
    GreenTable::build(d, lambda, r + 1, DEFAULT_ORDER)?.hessian_l2_sum(i, j, r)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub lambda: f64,
    /// Least-squares slope of `log max_{ijk}|DᵢDⱼD_k G|` against `log|x|`.
    pub exponent: f64,
    /// `max |x|^{d+1} max_{ijk}|DᵢDⱼD_k G(x)|` over the sampled points.
    pub constant: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub fits: Vec<DecayFit>,
    pub worst_exponent: f64,
    pub max_constant: f64,
    pub min_constant: f64,
}

/// Directions along which the triple-difference decay is sampled.
pub const DECAY_DIRECTIONS: [[i64; 3]; 4] = [[1, 0, 0], [1, 1, 0], [1, 1, 1], [2, 1, 0]];

/// Fits the decay of third differences of `G_λ` for each mass, `d = 3`.
pub fn triple_grad_decay_check(lambdas: &[f64], r: usize) -> Result<DecayReport> {
    let d = 3;
    let fits = lambdas
        .iter()
        .map(|&lambda| {
            let table = GreenTable::build(d, lambda, r + 3, DEFAULT_ORDER)?;
            let mut logs = Vec::new();
            let mut constant = 0.0f64;
            for dir in DECAY_DIRECTIONS {
                let span = *dir.iter().max().unwrap();
                for s in 1..=(r as i64 / span) {
                    let x: Vec<i64> = dir.iter().map(|c| c * s).collect();
                    let norm = (x.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt();
                    let mut m = 0.0f64;
                    for i in 0..d {
                        for j in 0..d {
                            for k in 0..d {
                                m = m.max(table.triple_difference(i, j, k, &x)?.abs());
                            }
                        }
                    }
                    constant = constant.max(m * norm.powi(d as i32 + 1));
                    if norm >= 4.0 && m > 0.0 {
                        logs.push((norm.ln(), m.ln()));
                    }
                }
            }
            if logs.len() < 3 {
                return Err(Error::Fit(format!("only {} sample points; increase R", logs.len())));
            }
            let exponent = slope(&logs);
            Ok(DecayFit { lambda, exponent, constant, points: logs.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst_exponent = fits.iter().map(|f| f.exponent).fold(f64::NEG_INFINITY, f64::max);
    let max_constant = fits.iter().map(|f| f.constant).fold(0.0, f64::max);
    let min_constant = fits.iter().map(|f| f.constant).fold(f64::INFINITY, f64::min);
    Ok(DecayReport { fits, worst_exponent, max_constant, min_constant })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

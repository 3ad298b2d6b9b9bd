//! The continuum bilinear form `⟨f₁,f₂⟩ = (2π)^{−d}∫ conj(f̂₁)(ξ·āξ)²/(ξ·Qξ) f̂₂ dξ`
//! and the tools that decide whether it is local.
//!
//! Writing `A = Q^{−1/2}āQ^{−1/2}` and `g = f∘Q^{1/2}`, the form equals
//! `|Q|^{1/2}∫∫ g₁(x)K(x−y)g₂(y)dxdy` for disjoint supports, with
//! `K = ∇·A∇(∇·A∇𝒢)` and `𝒢` the Green function of `−Δ`. The kernel vanishes
//! identically exactly when `A` is a multiple of the identity, i.e. `ā ∝ Q`.

use crate::error::{Error, Result};
use crate::green::gauss_legendre;
use crate::linalg::SpdMatrix;
use crate::par::*;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Bump `φ(|S(x − c)|/r)` with profile `φ(ρ) = (1 − ρ²)⁴` on `ρ < 1`.
///
/// `shape = None` means `S = I` (a round bump); a shape arises when a round
/// bump is composed with a linear map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<f64>>,
}

pub fn profile(rho: f64) -> f64 {
    if rho < 1.0 {
        (1.0 - rho * rho).powi(4)
    } else {
        0.0
    }
}

impl BumpFunction {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("bump center must be a finite point".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("bump radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius, shape: None })
    }

    pub fn d(&self) -> usize {
        self.center.len()
    }

    fn shape_matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        match &self.shape {
            Some(s) => DMatrix::from_row_slice(d, d, s),
            None => DMatrix::identity(d, d),
        }
    }

    /// `|S(x − c)|/r`.
    fn scaled_distance(&self, x: &[f64]) -> f64 {
        let d = self.d();
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let n2: f64 = match &self.shape {
            Some(s) => (0..d).map(|i| (0..d).map(|j| s[i * d + j] * y[j]).sum::<f64>().powi(2)).sum(),
            None => y.iter().map(|v| v * v).sum(),
        };
        n2.sqrt() / self.radius
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        profile(self.scaled_distance(x))
    }

    /// `y ↦ f(My)`.
    pub fn compose(&self, m: &SpdMatrix) -> Result<BumpFunction> {
        let d = self.d();
        if m.d() != d {
            return Err(Error::Dimension(format!("{}x{} map for a bump in d = {d}", m.d(), m.d())));
        }
        let center = m.inverse().mul_vec(&self.center);
        let s = self.shape_matrix() * DMatrix::from_row_slice(d, d, m.as_slice());
        Ok(BumpFunction { center, radius: self.radius, shape: Some(s.transpose().as_slice().to_vec()) })
    }

    /// Radius of a ball around the center containing the support.
    fn bounding_radius(&self) -> f64 {
        match &self.shape {
            None => self.radius,
            Some(_) => {
                let smin = self.shape_matrix().singular_values().min();
                self.radius / smin
            }
        }
    }
}

/// Whether the supports are certainly disjoint (with a positive gap).
fn separated(f: &BumpFunction, g: &BumpFunction) -> bool {
    let dc: Vec<f64> = f.center.iter().zip(&g.center).map(|(a, b)| a - b).collect();
    if f.shape == g.shape {
        // a common shape maps both supports to round balls
        let s = f.shape_matrix();
        let v = &s * DVector::from_column_slice(&dc);
        return v.norm() > f.radius + g.radius;
    }
    dc.iter().map(|v| v * v).sum::<f64>().sqrt() > f.bounding_radius() + g.bounding_radius()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingMethod {
    Fourier,
    Realspace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairingResult {
    pub value: f64,
    /// Difference between the two finest refinements.
    pub error: f64,
    /// Magnitude of the integrand before cancellation; errors are judged against it.
    pub scale: f64,
    pub method: PairingMethod,
}

fn check_three(d: usize, what: &str) -> Result<()> {
    match d {
        3 => Ok(()),
        0..=2 => Err(Error::Domain(format!("{what} requires d >= 3, got d = {d}"))),
        _ => Err(Error::Unsupported(format!("{what} is implemented for d = 3, got d = {d}"))),
    }
}

fn check_matrix(m: &SpdMatrix, d: usize, name: &str) -> Result<()> {
    if m.d() != d {
        return Err(Error::Dimension(format!("{name} is {}x{}, expected {d}x{d}", m.d(), m.d())));
    }
    Ok(())
}

/// Relative agreement demanded between successive refinements.
const REFINE_TOL: f64 = 1e-9;

/// `∫_{|u|<1} (1 − |u|²)⁴ e^{−ik·u} du` in three dimensions.
fn bump_transform(k: f64, rho: &[(f64, f64)]) -> f64 {
    4.0 * PI
        * rho
            .iter()
            .map(|&(r, w)| {
                let kr = k * r;
                let sinc = if kr.abs() < 1e-4 { 1.0 - kr * kr / 6.0 } else { kr.sin() / kr };
                w * profile(r) * r * r * sinc
            })
            .sum::<f64>()
}

/// Gauss–Legendre nodes on `[a, b]` split into `panels` equal pieces.
fn panel_rule(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let base = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| {
            let lo = a + p as f64 * h;
            base.iter().map(move |&(x, w)| (lo + 0.5 * h * (x + 1.0), 0.5 * h * w))
        })
        .collect()
}

fn orthonormal_frame(axis: &[f64]) -> [[f64; 3]; 3] {
    let n = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e = if n > 0.0 { [axis[0] / n, axis[1] / n, axis[2] / n] } else { [0.0, 0.0, 1.0] };
    let pick = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = pick[0] * e[0] + pick[1] * e[1] + pick[2] * e[2];
    let mut t1 = [pick[0] - dot * e[0], pick[1] - dot * e[1], pick[2] - dot * e[2]];
    let tn = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
    t1.iter_mut().for_each(|v| *v /= tn);
    let t2 = [e[1] * t1[2] - e[2] * t1[1], e[2] * t1[0] - e[0] * t1[2], e[0] * t1[1] - e[1] * t1[0]];
    [e, t1, t2]
}

struct FourierRule {
    /// `k_max·r_min`.
    cutoff: f64,
    /// Nodes per k-panel; panels are half an oscillation of `cos(k|Δ|)` wide.
    k_order: usize,
    u_order: usize,
    phi_nodes: usize,
    rho_panels: usize,
}

impl FourierRule {
    fn level(n: usize) -> Self {
        let s = 1usize << n;
        Self { cutoff: 100.0 * (1.0 + 0.5 * n as f64), k_order: 12 * s, u_order: 24 * s, phi_nodes: 48 * s, rho_panels: 12 * s }
    }
}

fn fourier_once(f1: &BumpFunction, f2: &BumpFunction, abar: &SpdMatrix, q: &SpdMatrix, rule: &FourierRule) -> (f64, f64) {
    let (r1, r2) = (f1.radius, f2.radius);
    let delta: Vec<f64> = f1.center.iter().zip(&f2.center).map(|(a, b)| a - b).collect();
    let dist = delta.iter().map(|v| v * v).sum::<f64>().sqrt();

    let rho = panel_rule(0.0, 1.0, rule.rho_panels, 16);
    let k_max = rule.cutoff / r1.min(r2);
    let width = PI / (dist + 2.0 * r1.max(r2));
    let panels = (k_max / width).ceil() as usize;
    let kw: Vec<(f64, f64)> = panel_rule(0.0, k_max, panels, rule.k_order)
        .into_par_iter()
        .map(|(k, w)| (k, w * k.powi(4) * bump_transform(r1 * k, &rho) * bump_transform(r2 * k, &rho)))
        .collect();
    let k_abs: f64 = kw.iter().map(|(_, p)| p.abs()).sum();

    // Angular average of (ω·āω)²/(ω·Qω) on the circle at polar cosine u.
    let frame = orthonormal_frame(&delta);
    let angular = |u: f64| -> f64 {
        let s = (1.0 - u * u).max(0.0).sqrt();
        let h = 2.0 * PI / rule.phi_nodes as f64;
        (0..rule.phi_nodes)
            .map(|p| {
                let (sp, cp) = (h * p as f64).sin_cos();
                let w: Vec<f64> = (0..3).map(|i| u * frame[0][i] + s * (cp * frame[1][i] + sp * frame[2][i])).collect();
                abar.quad(&w).powi(2) / q.quad(&w) * h
            })
            .sum()
    };

    // I(s) is even and vanishes for |s| > r₁ + r₂; split where it loses smoothness.
    let mut cuts = vec![0.0, 1.0];
    if dist > 0.0 {
        for b in [r1 + r2, (r1 - r2).abs()] {
            let u = b / dist;
            if u > 0.0 && u < 1.0 {
                cuts.push(u);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let unodes: Vec<(f64, f64)> = cuts.windows(2).flat_map(|w| panel_rule(w[0], w[1], 1, rule.u_order)).collect();
    let parts: Vec<(f64, f64)> = unodes
        .into_par_iter()
        .map(|(u, w)| {
            let m = angular(u);
            let s = dist * u;
            let i: f64 = kw.iter().map(|&(k, p)| p * (k * s).cos()).sum();
            (w * m * i, w * m)
        })
        .collect();
    let pref = 2.0 * r1.powi(3) * r2.powi(3) / (2.0 * PI).powi(3);
    let value = pref * parts.iter().map(|p| p.0).sum::<f64>();
    let scale = pref * parts.iter().map(|p| p.1).sum::<f64>() * k_abs;
    (value, scale)
}

/// Evaluates the form in Fourier variables: radial Gauss–Legendre panels in
/// `|ξ|`, Gauss–Legendre in the polar cosine along `c₁ − c₂` and the
/// trapezoidal rule in the azimuth.
pub fn pairing_fourier(f1: &BumpFunction, f2: &BumpFunction, abar: &SpdMatrix, q: &SpdMatrix) -> Result<PairingResult> {
    let d = f1.d();
    check_three(d, "pairing_fourier")?;
    if f2.d() != d {
        return Err(Error::Dimension("bumps live in different dimensions".into()));
    }
    check_matrix(abar, d, "abar")?;
    check_matrix(q, d, "Q")?;
    if f1.shape.is_some() || f2.shape.is_some() {
        return Err(Error::Unsupported("the Fourier path takes round bumps".into()));
    }
    let (coarse, _) = fourier_once(f1, f2, abar, q, &FourierRule::level(0));
    let (fine, scale) = fourier_once(f1, f2, abar, q, &FourierRule::level(1));
    let error = (fine - coarse).abs().max(1e-16 * scale);
    if error > REFINE_TOL * scale {
        return Err(Error::Quadrature { coarse, fine });
    }
    Ok(PairingResult { value: fine, error, scale, method: PairingMethod::Fourier })
}

/// The bracket of `K` (the constant factor set to 1):
///
/// `|x|^{−d−2}[−d(TrA)² − 2dTr(A²)] + 2d(d+2)(xᵗAx)TrA/|x|^{d+4}
///  + 4d(d+2)xᵗA²x/|x|^{d+4} − d(d+2)(d+4)(xᵗAx)²/|x|^{d+6}`.
#[allow(non_snake_case)]
pub fn kernel_K(x: &[f64], a: &SpdMatrix) -> Result<f64> {
    let d = x.len();
    check_matrix(a, d, "A")?;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return Err(Error::Singularity("kernel K is singular at x = 0".into()));
    }
    Ok(bracket(x, a.as_slice(), r2))
}

fn bracket(x: &[f64], a: &[f64], r2: f64) -> f64 {
    let d = x.len();
    let df = d as f64;
    let mut ax = [0.0; 8];
    let ax = &mut ax[..d];
    for i in 0..d {
        ax[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
    }
    let tr: f64 = (0..d).map(|i| a[i * d + i]).sum();
    let tr2: f64 = (0..d * d).map(|e| a[e] * a[(e % d) * d + e / d]).sum();
    let xax: f64 = x.iter().zip(ax.iter()).map(|(u, v)| u * v).sum();
    let xa2x: f64 = ax.iter().map(|v| v * v).sum();
    let r = r2.sqrt();
    let r_dm2 = 1.0 / (r2.powi(d as i32 / 2 + 1) * if d % 2 == 1 { r } else { 1.0 });
    r_dm2
        * (-df * tr * tr - 2.0 * df * tr2
            + (2.0 * df * (df + 2.0) * xax * tr + 4.0 * df * (df + 2.0) * xa2x) / r2
            - df * (df + 2.0) * (df + 4.0) * xax * xax / (r2 * r2))
}

/// Surface area `|S^{d−1}|` of the unit sphere.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(d - 2) / (d - 2) as f64,
    }
}

/// The constant turning the bracket into `∇·A∇(∇·A∇𝒢)`: with
/// `𝒢 = |x|^{2−d}/((d−2)|S^{d−1}|)` it is `(2−d)/((d−2)|S^{d−1}|) = −1/|S^{d−1}|`.
pub fn kernel_constant(d: usize) -> f64 {
    -1.0 / sphere_area(d)
}

/// Points and weights of a product rule on the support of `g`, already
/// multiplied by `g` and the Jacobian.
fn support_rule(g: &BumpFunction, n: usize) -> Vec<([f64; 3], f64)> {
    let rho = gauss_legendre(n);
    let cth = gauss_legendre(n);
    let nphi = 2 * n;
    let s = g.shape_matrix();
    let sinv = s.clone().try_inverse().expect("bump shapes are invertible");
    let jac = g.radius.powi(3) / s.determinant().abs();
    let mut out = Vec::with_capacity(n * n * nphi);
    for &(x, wr) in &rho {
        let r = 0.5 * (x + 1.0);
        let wr = 0.5 * wr * r * r * profile(r);
        for &(c, wc) in &cth {
            let sn = (1.0 - c * c).sqrt();
            for p in 0..nphi {
                let ph = 2.0 * PI * (p as f64 + 0.5) / nphi as f64;
                let u = DVector::from_column_slice(&[r * sn * ph.cos(), r * sn * ph.sin(), r * c]);
                let y = &sinv * u * g.radius;
                let w = wr * wc * 2.0 * PI / nphi as f64 * jac;
                out.push(([g.center[0] + y[0], g.center[1] + y[1], g.center[2] + y[2]], w));
            }
        }
    }
    out
}

fn realspace_once(g1: &BumpFunction, g2: &BumpFunction, a: &[f64], n: usize) -> (f64, f64) {
    let p1 = support_rule(g1, n);
    let p2 = support_rule(g2, n);
    let c = kernel_constant(3);
    let tr = a[0] + a[4] + a[8];
    let tr2: f64 = (0..9).map(|e| a[e] * a[(e % 3) * 3 + e / 3]).sum();
    let (c0, c1, c2, c3) = (-3.0 * tr * tr - 6.0 * tr2, 30.0 * tr, 60.0, -105.0);
    let parts: Vec<(f64, f64)> = p1
        .par_iter()
        .map(|(x, w1)| {
            let (mut s, mut sa) = (0.0, 0.0);
            for (y, w2) in &p2 {
                let z = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
                let az = [
                    a[0] * z[0] + a[1] * z[1] + a[2] * z[2],
                    a[3] * z[0] + a[4] * z[1] + a[5] * z[2],
                    a[6] * z[0] + a[7] * z[1] + a[8] * z[2],
                ];
                let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
                let xax = z[0] * az[0] + z[1] * az[1] + z[2] * az[2];
                let xa2x = az[0] * az[0] + az[1] * az[1] + az[2] * az[2];
                let inv = 1.0 / r2;
                let r5 = inv * inv * inv.sqrt();
                let (t0, t1, t2) = (c0, (c1 * xax + c2 * xa2x) * inv, c3 * xax * xax * inv * inv);
                s += (t0 + t1 + t2) * r5 * w2;
                // term-wise magnitude: the terms cancel exactly when A ∝ I
                sa += (t0.abs() + t1.abs() + t2.abs()) * r5 * w2.abs();
            }
            (w1 * s, w1 * sa)
        })
        .collect();
    (c * parts.iter().map(|p| p.0).sum::<f64>(), c.abs() * parts.iter().map(|p| p.1).sum::<f64>())
}

/// Nodes per coordinate of the coarse real-space rule.
pub const REALSPACE_ORDER: usize = 10;

/// `∫∫ g₁(x)K(x−y)g₂(y) dy dx` with the physical constant, `K = ∇·A∇(∇·A∇𝒢)`.
pub fn pairing_realspace(g1: &BumpFunction, g2: &BumpFunction, a: &SpdMatrix) -> Result<PairingResult> {
    let d = g1.d();
    check_three(d, "pairing_realspace")?;
    if g2.d() != d {
        return Err(Error::Dimension("bumps live in different dimensions".into()));
    }
    check_matrix(a, d, "A")?;
    if !separated(g1, g2) {
        return Err(Error::Domain("the kernel form needs strictly disjoint supports".into()));
    }
    // Close supports converge algebraically in the node count; refine once more before giving up.
    let mut n = REALSPACE_ORDER;
    let (mut coarse, _) = realspace_once(g1, g2, a.as_slice(), n);
    let (fine, scale, error) = loop {
        let next = n * 3 / 2;
        let (fine, scale) = realspace_once(g1, g2, a.as_slice(), next);
        let error = (fine - coarse).abs().max(1e-16 * scale);
        if error <= 1e-6 * scale {
            break (fine, scale, error);
        }
        if next > REALSPACE_ORDER * 2 {
            return Err(Error::Quadrature { coarse, fine });
        }
        (n, coarse) = (next, fine);
    };
    Ok(PairingResult { value: fine, error, scale, method: PairingMethod::Realspace })
}

/// `⟨f₁,f₂⟩` through the real-space kernel: `|Q|^{1/2}∫∫ g₁Kg₂` with
/// `g = f∘Q^{1/2}` and `A = Q^{−1/2}āQ^{−1/2}`.
pub fn pairing_realspace_mapped(f1: &BumpFunction, f2: &BumpFunction, abar: &SpdMatrix, q: &SpdMatrix) -> Result<PairingResult> {
    let d = f1.d();
    check_matrix(abar, d, "abar")?;
    check_matrix(q, d, "Q")?;
    let qh = q.sqrt();
    let qih = qh.inverse();
    let a = abar.congruence(&qih);
    let r = pairing_realspace(&f1.compose(&qh)?, &f2.compose(&qh)?, &a)?;
    let j = q.determinant().sqrt();
    Ok(PairingResult { value: j * r.value, error: j * r.error, scale: j * r.scale, ..r })
}

/// `U = {x : n·x < offset}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let n = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
            return Err(Error::Domain("half-space needs a nonzero normal and finite offset".into()));
        }
        Ok(Self { normal: normal.iter().map(|v| v / n).collect(), offset: offset / n })
    }

    /// Signed distance to the boundary, negative inside `U`.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.normal).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    /// Supported in `U`.
    pub f1: BumpFunction,
    /// Supported in the complement of the closure of `U`.
    pub f2: BumpFunction,
    pub pairing: PairingResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Locality {
    /// `‖ā/trā − Q/trQ‖` is below tolerance; the form is local.
    Proportional { distance: f64 },
    Witness(Witness),
}

pub const DEFAULT_PROPORTIONALITY_TOL: f64 = 1e-10;
/// Search radii, largest first.
pub const WITNESS_RADII: [f64; 2] = [0.5, 0.25];
/// Center distances from the boundary, in units of the radius, farthest first.
pub const WITNESS_DISTANCES: [f64; 3] = [2.0, 1.5, 1.25];

/// `‖ā/trā − Q/trQ‖_F`.
pub fn proportionality_distance(abar: &SpdMatrix, q: &SpdMatrix) -> f64 {
    abar.scaled(1.0 / abar.trace()).distance(&q.scaled(1.0 / q.trace()))
}

fn witness_pair(u: &HalfSpace, radius: f64, s1: f64, s2: f64, lateral: &[f64]) -> (BumpFunction, BumpFunction) {
    let base: Vec<f64> = u.normal.iter().map(|n| n * u.offset).collect();
    let c1: Vec<f64> = base.iter().zip(&u.normal).map(|(b, n)| b - s1 * radius * n).collect();
    let c2: Vec<f64> = (0..base.len()).map(|i| base[i] + s2 * radius * u.normal[i] + lateral[i]).collect();
    (BumpFunction { center: c1, radius, shape: None }, BumpFunction { center: c2, radius, shape: None })
}

fn accept(p: &PairingResult) -> bool {
    p.value.abs() > 10.0 * p.error
}

/// Finds round bumps on either side of `∂U` with a certified nonzero pairing,
/// or reports that `ā ∝ Q`.
pub fn nonlocality_witness(abar: &SpdMatrix, q: &SpdMatrix, u: &HalfSpace, tol: f64) -> Result<Locality> {
    let d = abar.d();
    check_matrix(q, d, "Q")?;
    if u.normal.len() != d {
        return Err(Error::Dimension(format!("half-space normal has {} entries, d = {d}", u.normal.len())));
    }
    let distance = proportionality_distance(abar, q);
    if distance < tol {
        return Ok(Locality::Proportional { distance });
    }
    let zero = vec![0.0; d];
    let coarse: Vec<(f64, f64)> = WITNESS_RADII.iter().flat_map(|&r| WITNESS_DISTANCES.iter().map(move |&s| (r, s))).collect();
    let results: Vec<Result<(BumpFunction, BumpFunction, PairingResult)>> = coarse
        .par_iter()
        .map(|&(r, s)| {
            let (f1, f2) = witness_pair(u, r, s, s, &zero);
            pairing_fourier(&f1, &f2, abar, q).map(|p| (f1, f2, p))
        })
        .collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for (res, &(r, s)) in results.into_iter().zip(&coarse) {
        let (f1, f2, p) = res?;
        if accept(&p) {
            return Ok(Locality::Witness(Witness { f1, f2, pairing: p }));
        }
        if best.map_or(true, |b| p.value.abs() > b.2) {
            best = Some((r, s, p.value.abs()));
        }
    }

    // Accidental zero along the normal: compass search over the far bump's
    // distance and lateral position, keeping the radius of the best candidate.
    let (r, s0, mut fbest) = best.expect("candidate grid is nonempty");
    let mut x = vec![0.0; d + 1];
    x[0] = s0;
    let mut step = 0.5;
    let frame = orthonormal_frame(&u.normal);
    let place = |x: &[f64]| {
        let lateral: Vec<f64> = (0..d).map(|i| r * (x[1] * frame[1][i] + x[2] * frame[2][i])).collect();
        witness_pair(u, r, s0, x[0].max(1.25), &lateral)
    };
    for _ in 0..40 {
        let mut improved = false;
        for dir in 0..3 {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[dir] += sign * step;
                let (f1, f2) = place(&y);
                let p = pairing_fourier(&f1, &f2, abar, q)?;
                if accept(&p) {
                    return Ok(Locality::Witness(Witness { f1, f2, pairing: p }));
                }
                if p.value.abs() > fbest {
                    fbest = p.value.abs();
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-3 {
                break;
            }
        }
    }
    Err(Error::Inconclusive(format!(
        "no witness found (largest |pairing| {fbest:.3e}) although abar/tr and Q/tr differ by {distance:.3e}"
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Divisibility {
    /// `A = cI` and `(xᵗAx)² = |x|²xᵗBx` with `B = c²I`.
    MultipleOfIdentity { c: f64, b: Vec<f64> },
    NotDivisible,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuarticReport {
    pub verdict: Divisibility,
    /// Least-squares `B` (row-major) whether or not it fits.
    pub b: Vec<f64>,
    /// `‖coeffs((xᵗAx)²) − coeffs(|x|²xᵗBx)‖ / ‖coeffs((xᵗAx)²)‖`.
    pub residual: f64,
    /// `max|λᵢ − λ₁| / max|λᵢ|`.
    pub eigen_spread: f64,
    /// Whether the eigenvalue test gives the same verdict.
    pub consistent: bool,
}

/// Exponent vectors of the degree-4 monomials in `d` variables.
fn quartic_monomials(d: usize) -> HashMap<Vec<u8>, usize> {
    let mut out = HashMap::new();
    let mut e = vec![0u8; d];
    fn rec(e: &mut Vec<u8>, i: usize, left: u8, out: &mut HashMap<Vec<u8>, usize>) {
        if i + 1 == e.len() {
            e[i] = left;
            let n = out.len();
            out.insert(e.clone(), n);
            return;
        }
        for k in 0..=left {
            e[i] = k;
            rec(e, i + 1, left - k, out);
        }
    }
    rec(&mut e, 0, 4, &mut out);
    out
}

fn monomial(d: usize, idx: &[usize]) -> Vec<u8> {
    let mut e = vec![0u8; d];
    idx.iter().for_each(|&i| e[i] += 1);
    e
}

/// Decides whether `(xᵗAx)²` is divisible by `|x|²` by matching coefficients
/// in the degree-4 monomial basis against `|x|²xᵗBx` for an unknown
/// symmetric `B`.
///
/// The coefficient residual is quadratic in the eigenvalue spread (the linear
/// part of `(xᵗ(I+εE)x)²` is divisible), so near-identity matrices can pass one
/// test and fail the other; `consistent` reports this.
pub fn quartic_divisibility(d: usize, entries: &[f64], tol: f64) -> Result<QuarticReport> {
    let a = SpdMatrix::new(d, entries.to_vec())?;
    let basis = quartic_monomials(d);
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|p| (p..d).map(move |q| (p, q))).collect();
    let mut lhs = DVector::zeros(basis.len());
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    lhs[basis[&monomial(d, &[i, j, k, l])]] += a.get(i, j) * a.get(k, l);
                }
            }
        }
    }
    let mut m = DMatrix::zeros(basis.len(), pairs.len());
    for (col, &(p, q)) in pairs.iter().enumerate() {
        for r in 0..d {
            m[(basis[&monomial(d, &[r, r, p, q])], col)] += if p == q { 1.0 } else { 2.0 };
        }
    }
    let sol = m.clone().svd(true, true).solve(&lhs, 1e-14).map_err(|e| Error::Fit(e.to_string()))?;
    let residual = (&m * &sol - &lhs).norm() / lhs.norm();
    let mut b = vec![0.0; d * d];
    for (col, &(p, q)) in pairs.iter().enumerate() {
        b[p * d + q] = sol[col];
        b[q * d + p] = sol[col];
    }
    let eig = a.eigenvalues();
    let eigen_spread = (eig[d - 1] - eig[0]) / eig[d - 1].abs();
    let verdict = if residual < tol {
        let c = ((0..d).map(|i| b[i * d + i]).sum::<f64>() / d as f64).sqrt();
        Divisibility::MultipleOfIdentity { c, b: b.clone() }
    } else {
        Divisibility::NotDivisible
    };
    let consistent = matches!(verdict, Divisibility::MultipleOfIdentity { .. }) == (eigen_spread < tol);
    Ok(QuarticReport { verdict, b, residual, eigen_spread, consistent })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Counterexample {
    /// `E[X(f)X(g)] = ∫fg + f′g′`.
    pub covariance: f64,
    /// `∫∫ f(x)·½e^{−|x−y|}g(y) dy dx`.
    pub kernel_pairing: f64,
}

fn bump_1d(f: &BumpFunction, x: f64) -> (f64, f64) {
    let u = (x - f.center[0]) / f.radius;
    if u.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - u * u;
    (s.powi(4), -8.0 * u * s.powi(3) / f.radius)
}

fn support_1d(f: &BumpFunction) -> (f64, f64) {
    (f.center[0] - f.radius, f.center[0] + f.radius)
}

/// Gauss–Legendre on `[a, b]` split at interior `cuts`.
fn split_rule(a: f64, b: f64, cuts: &[f64], order: usize) -> Vec<(f64, f64)> {
    let mut pts = vec![a, b];
    pts.extend(cuts.iter().copied().filter(|&c| c > a && c < b));
    pts.sort_by(f64::total_cmp);
    pts.windows(2).flat_map(|w| panel_rule(w[0], w[1], 1, order)).collect()
}

/// The white-noise-derivative example on ℝ: `X = ξ + ξ′`-type field with
/// covariance operator `1 − ∂²` whose precision has kernel `½e^{−|x−y|}`.
pub fn counterexample_1d(f: &BumpFunction, g: &BumpFunction) -> Result<Counterexample> {
    if f.d() != 1 || g.d() != 1 {
        return Err(Error::Dimension("counterexample_1d takes one-dimensional bumps".into()));
    }
    const ORDER: usize = 64;
    let (fa, fb) = support_1d(f);
    let (ga, gb) = support_1d(g);
    let covariance = split_rule(fa, fb, &[ga, gb], ORDER)
        .iter()
        .map(|&(x, w)| {
            let (f0, f1) = bump_1d(f, x);
            let (g0, g1) = bump_1d(g, x);
            w * (f0 * g0 + f1 * g1)
        })
        .sum();
    let kernel_pairing = panel_rule(fa, fb, 1, ORDER)
        .iter()
        .map(|&(x, wx)| {
            let inner: f64 = split_rule(ga, gb, &[x], ORDER)
                .iter()
                .map(|&(y, wy)| wy * 0.5 * (-(x - y).abs()).exp() * bump_1d(g, y).0)
                .sum();
            wx * bump_1d(f, x).0 * inner
        })
        .sum();
    Ok(Counterexample { covariance, kernel_pairing })
}

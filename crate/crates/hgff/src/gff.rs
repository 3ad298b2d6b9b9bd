//! Generalized Gaussian free fields `−∇·ā∇Φ = ∇·W` on the unit torus.
//!
//! The torus 𝕋ᵈ is discretized with mesh `h = 1/L`. White noise of covariance
//! `Q` lives on edges: the edge `(x, x+eᵢ)` carries `Wᵢ(x)`, and the vector
//! `W(x)` has covariance `Q·h^{−d}`. With `∇_h = ∇/h` the equation reads
//! `∇*ā∇Φ = −h∇*W`, solved mode by mode with the zero mode set to 0. Test
//! functions act by `Φ(f) = h^d Σₓ f(x)Φ(x)`.

use crate::error::{Error, Result};
use crate::lattice::{div_adj_into, grad_into, EdgeField, SiteField, Spectral, TorusGrid};
use crate::linalg::SpdMatrix;
use crate::par::*;
use crate::rng::NoiseKey;
use rustfft::num_complex::Complex64;
use serde::Serialize;

/// Stream label of the white noise.
pub const NOISE_STREAM: u64 = 3;

#[derive(Clone, Debug, Serialize)]
pub struct GffSpec {
    pub abar: SpdMatrix,
    pub q: SpdMatrix,
    pub grid: TorusGrid,
    pub seed: u64,
}

impl GffSpec {
    pub fn new(abar: SpdMatrix, q: SpdMatrix, grid: TorusGrid, seed: u64) -> Result<Self> {
        for (name, m) in [("abar", &abar), ("Q", &q)] {
            if m.d() != grid.d() {
                return Err(Error::Dimension(format!("{name} is {}x{}, grid has d = {}", m.d(), m.d(), grid.d())));
            }
            let lmin = m.eigenvalues()[0];
            if !(lmin > 0.0) {
                return Err(Error::Domain(format!("{name} is not positive definite (smallest eigenvalue {lmin:.3e})")));
            }
        }
        Ok(Self { abar, q, grid, seed })
    }

    pub fn mesh(&self) -> f64 {
        1.0 / self.grid.l() as f64
    }
}

#[derive(Clone, Debug)]
pub struct FieldSample {
    pub phi: SiteField,
    pub w: EdgeField,
    pub seed: u64,
    pub index: u64,
}

/// Edges whose lower endpoint lies in `A`, or the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Inside,
    Outside,
}

/// Precomputed symbols and `Q^{1/2}` for repeated sampling.
pub struct GffSampler {
    spec: GffSpec,
    spectral: Spectral,
    q_sqrt: SpdMatrix,
    /// `1/σ_ā(k)`, zero at `k = 0`.
    inverse_symbol: Vec<f64>,
}

impl GffSampler {
    pub fn new(spec: GffSpec) -> Self {
        let spectral = Spectral::new(spec.grid);
        let sigma = spectral.form_symbol(spec.abar.as_slice());
        let inverse_symbol = sigma.iter().enumerate().map(|(k, &s)| if k == 0 { 0.0 } else { 1.0 / s }).collect();
        Self { q_sqrt: spec.q.sqrt(), spec, spectral, inverse_symbol }
    }

    pub fn spec(&self) -> &GffSpec {
        &self.spec
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// `W(x) = h^{−d/2} Q^{1/2} Z(x)` from stream `(seed, NOISE_STREAM, index)`.
    pub fn noise(&self, index: u64) -> EdgeField {
        let g = self.spec.grid;
        let (d, n) = (g.d(), g.sites());
        let z = NoiseKey::derive(self.spec.seed, &[NOISE_STREAM, index]).normals(g.edges());
        let scale = self.spec.mesh().powf(-(d as f64) / 2.0);
        let r = self.q_sqrt.as_slice();
        let mut w = vec![0.0; g.edges()];
        w.par_chunks_mut(n).enumerate().for_each(|(i, wi)| {
            for (s, v) in wi.iter_mut().enumerate() {
                *v = scale * (0..d).map(|j| r[i * d + j] * z[j * n + s]).sum::<f64>();
            }
        });
        EdgeField { grid: g, values: w }
    }

    /// `Φ = −h(∇*ā∇)⁻¹∇*W`, mean zero.
    pub fn solve(&self, w: &EdgeField) -> SiteField {
        let g = self.spec.grid;
        let mut div = vec![0.0; g.sites()];
        div_adj_into(&g, &w.values, &mut div);
        let h = self.spec.mesh();
        div.iter_mut().for_each(|v| *v *= -h);
        let mut phi = vec![0.0; g.sites()];
        self.spectral.apply_multiplier(&self.inverse_symbol, &div, &mut phi, None);
        SiteField { grid: g, values: phi }
    }

    /// Two fields solved with one complex transform.
    fn solve_pair(&self, w1: &[f64], w2: &[f64]) -> (SiteField, SiteField) {
        let g = self.spec.grid;
        let h = self.spec.mesh();
        let (mut d1, mut d2) = (vec![0.0; g.sites()], vec![0.0; g.sites()]);
        div_adj_into(&g, w1, &mut d1);
        div_adj_into(&g, w2, &mut d2);
        d1.iter_mut().chain(d2.iter_mut()).for_each(|v| *v *= -h);
        let (mut p1, mut p2) = (vec![0.0; g.sites()], vec![0.0; g.sites()]);
        self.spectral.apply_multiplier(&self.inverse_symbol, &d1, &mut p1, Some((&d2, &mut p2)));
        (SiteField { grid: g, values: p1 }, SiteField { grid: g, values: p2 })
    }

    pub fn sample(&self, index: u64) -> FieldSample {
        let w = self.noise(index);
        FieldSample { phi: self.solve(&w), w, seed: self.spec.seed, index }
    }

    /// `(Φ_A, Φ_{A^c}, full sample)` from one noise realization; the edge
    /// `(x, x+eᵢ)` belongs to `A` iff `x ∈ A`.
    pub fn sample_restricted(&self, index: u64, mask: &[bool]) -> Result<(SiteField, SiteField, FieldSample)> {
        let g = self.spec.grid;
        if mask.len() != g.sites() {
            return Err(Error::Dimension(format!("mask has {} entries for {} sites", mask.len(), g.sites())));
        }
        let full = self.sample(index);
        let inside = masked(&full.w, mask, Part::Inside);
        let outside = masked(&full.w, mask, Part::Outside);
        let (pa, pc) = self.solve_pair(&inside, &outside);
        Ok((pa, pc, full))
    }

    /// `max_k |σ_ā Φ̂ + h Σᵢ conj(gᵢ)Ŵᵢ|` over `k ≠ 0`, relative to the largest term.
    pub fn equation_residual(&self, sample: &FieldSample) -> f64 {
        let g = self.spec.grid;
        let n = g.sites();
        let h = self.spec.mesh();
        let phi_hat = self.spectral.forward_real(&sample.phi.values);
        let w_hat: Vec<_> = (0..g.d()).map(|i| self.spectral.forward_real(&sample.w.values[i * n..(i + 1) * n])).collect();
        let sigma = self.spectral.form_symbol(self.spec.abar.as_slice());
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for k in 1..n {
            let mut rhs = Complex64::new(0.0, 0.0);
            for (i, wi) in w_hat.iter().enumerate() {
                rhs += self.spectral.direction_symbol(k, i).conj() * wi[k];
            }
            let lhs = phi_hat[k] * sigma[k];
            worst = worst.max((lhs + rhs * h).norm());
            scale = scale.max(lhs.norm()).max((rhs * h).norm());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// `⟨W + ā∇_hΦ, ∇_h f⟩` relative to `‖W‖‖∇_h f‖`: zero when `ā∇Φ = −P W`
    /// with `P` the `ā⁻¹`-orthogonal projection onto `ā`-gradients.
    pub fn helmholtz_residual(&self, sample: &FieldSample, f: &SiteField) -> f64 {
        let g = self.spec.grid;
        let (d, n) = (g.d(), g.sites());
        let h = self.spec.mesh();
        let a = self.spec.abar.as_slice();
        let mut gphi = vec![0.0; g.edges()];
        grad_into(&g, &sample.phi.values, &mut gphi);
        let mut gf = vec![0.0; g.edges()];
        grad_into(&g, &f.values, &mut gf);
        let mut acc = 0.0;
        for i in 0..d {
            for s in 0..n {
                let flux: f64 = (0..d).map(|j| a[i * d + j] * gphi[j * n + s]).sum::<f64>() / h;
                acc += (sample.w.values[i * n + s] + flux) * gf[i * n + s] / h;
            }
        }
        let norm_w = sample.w.norm();
        let norm_f = gf.iter().map(|v| v * v).sum::<f64>().sqrt() / h;
        acc.abs() / (norm_w * norm_f).max(f64::MIN_POSITIVE)
    }
}

fn masked(w: &EdgeField, mask: &[bool], part: Part) -> Vec<f64> {
    let n = mask.len();
    w.values
        .iter()
        .enumerate()
        .map(|(e, &v)| {
            let keep = match part {
                Part::Inside => mask[e % n],
                Part::Outside => !mask[e % n],
            };
            if keep {
                v
            } else {
                0.0
            }
        })
        .collect()
}

pub fn sample_gff(spec: &GffSpec, index: u64) -> FieldSample {
    GffSampler::new(spec.clone()).sample(index)
}

pub fn sample_gff_restricted(spec: &GffSpec, index: u64, mask: &[bool]) -> Result<(SiteField, SiteField, FieldSample)> {
    GffSampler::new(spec.clone()).sample_restricted(index, mask)
}

/// `Φ(f) = h^d Σₓ f(x)Φ(x)`.
pub fn test_pairing(phi: &SiteField, f: &SiteField) -> f64 {
    let h = 1.0 / phi.grid.l() as f64;
    h.powi(phi.grid.d() as i32) * phi.dot(f)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Covariance {
    pub value: f64,
    /// An input had a non-zero mean; only its mean-zero part entered.
    pub projected: bool,
}

/// `E[Φ(f)Φ(g)] = h^{d+2} L^{−d} Σ_{k≠0} conj(f̂(k)) ĝ(k) σ_Q(k)/σ_ā(k)²` (unnormalized DFT).
pub fn covariance_pair(f: &SiteField, g: &SiteField, abar: &SpdMatrix, q: &SpdMatrix) -> Result<Covariance> {
    f.grid.check(&g.grid)?;
    let spectral = Spectral::new(f.grid);
    covariance_with(&spectral, f, g, abar, q)
}

pub(crate) fn covariance_with(spectral: &Spectral, f: &SiteField, g: &SiteField, abar: &SpdMatrix, q: &SpdMatrix) -> Result<Covariance> {
    let grid = *spectral.grid();
    if abar.d() != grid.d() || q.d() != grid.d() {
        return Err(Error::Dimension("matrix size differs from grid dimension".into()));
    }
    let sa = spectral.form_symbol(abar.as_slice());
    let sq = spectral.form_symbol(q.as_slice());
    let fh = spectral.forward_real(&f.values);
    let gh = spectral.forward_real(&g.values);
    let sum: f64 = (1..grid.sites()).map(|k| (fh[k].conj() * gh[k]).re * sq[k] / (sa[k] * sa[k])).sum();
    let (d, l) = (grid.d() as i32, grid.l() as f64);
    let h = 1.0 / l;
    let value = h.powi(d + 2) * l.powi(-d) * sum;
    let scale = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let projected = f.mean().abs() > 1e-12 * scale(&f.values) || g.mean().abs() > 1e-12 * scale(&g.values);
    Ok(Covariance { value, projected })
}

/// Sites whose incident edges all lie outside `A`: `x ∉ A` and `x − eᵢ ∉ A` for every `i`.
pub fn exterior_interior(grid: &TorusGrid, mask: &[bool]) -> Vec<usize> {
    (0..grid.sites())
        .filter(|&s| !mask[s] && (0..grid.d()).all(|i| !mask[grid.shift(s, i, false)]))
        .collect()
}

/// `max |∇*ā∇Φ_A|` over the interior of `A^c`, relative to its maximum over all sites.
pub fn harmonicity_check(phi_a: &SiteField, abar: &SpdMatrix, mask: &[bool]) -> Result<f64> {
    let grid = phi_a.grid;
    if mask.len() != grid.sites() {
        return Err(Error::Dimension(format!("mask has {} entries for {} sites", mask.len(), grid.sites())));
    }
    let interior = exterior_interior(&grid, mask);
    if interior.is_empty() {
        return Err(Error::Domain("the complement of A has no interior sites".into()));
    }
    let r = apply_constant(&grid, abar, &phi_a.values);
    let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(interior.iter().map(|&s| r[s].abs()).fold(0.0, f64::max) / scale)
}

/// `∇*M∇f` for a constant matrix `M` acting on the edge components at each site.
pub fn apply_constant(grid: &TorusGrid, m: &SpdMatrix, f: &[f64]) -> Vec<f64> {
    let (d, n) = (grid.d(), grid.sites());
    let a = m.as_slice();
    let mut gf = vec![0.0; grid.edges()];
    grad_into(grid, f, &mut gf);
    let mut flux = vec![0.0; grid.edges()];
    for i in 0..d {
        for s in 0..n {
            flux[i * n + s] = (0..d).map(|j| a[i * d + j] * gf[j * n + s]).sum();
        }
    }
    let mut out = vec![0.0; n];
    div_adj_into(grid, &flux, &mut out);
    out
}

/// `(E[Φ(g)²])^{1/2} / ‖g‖_{L²}` for `g` supported in the ball of radius `L/4` around `center`.
pub fn regularity_bound_check(g: &SiteField, center: &[i64], abar: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
    let grid = g.grid;
    if center.len() != grid.d() {
        return Err(Error::Dimension(format!("center has {} coordinates, d = {}", center.len(), grid.d())));
    }
    let l = grid.l() as i64;
    let radius = grid.l() as f64 / 4.0;
    for (s, &v) in g.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let dist2: f64 = grid
            .coords(s)
            .iter()
            .zip(center)
            .map(|(&x, &c)| {
                let t = (x - c).rem_euclid(l);
                let t = t.min(l - t) as f64;
                t * t
            })
            .sum();
        if dist2.sqrt() > radius {
            return Err(Error::Domain(format!("support leaves the ball of radius {radius} (site {s})")));
        }
    }
    let cov = covariance_pair(g, g, abar, q)?.value;
    let h = 1.0 / grid.l() as f64;
    let norm = (h.powi(grid.d() as i32) * g.dot(g)).sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("zero test function".into()));
    }
    Ok(cov.max(0.0).sqrt() / norm)
}

/// Raw field dump: `b"HGFF"`, then little-endian `u32` version, `u32 d`, `u32 L`,
/// `u64` seed, `u64` sample index, followed by `Lᵈ` `f64` values in site order.
pub fn field_bytes(sample: &FieldSample) -> Vec<u8> {
    let g = sample.phi.grid;
    let mut out = Vec::with_capacity(32 + 8 * g.sites());
    out.extend_from_slice(b"HGFF");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(g.d() as u32).to_le_bytes());
    out.extend_from_slice(&(g.l() as u32).to_le_bytes());
    out.extend_from_slice(&sample.seed.to_le_bytes());
    out.extend_from_slice(&sample.index.to_le_bytes());
    for v in &sample.phi.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

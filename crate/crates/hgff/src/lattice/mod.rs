//! Discrete calculus on the periodic lattice (ℤ/Lℤ)ᵈ.
//!
//! Sites are stored row-major (last coordinate fastest). The edge `(x, x+eᵢ)`
//! has index `i·Lᵈ + site(x)`, so an edge field is `d` contiguous site fields.
//! Conventions: `∇ᵢf(x) = f(x+eᵢ) − f(x)`, `∇ᵢ*Fᵢ(x) = Fᵢ(x−eᵢ) − Fᵢ(x)`, hence
//! `∇*∇ = −Δ` and `⟨∇f, F⟩ = ⟨f, ∇*F⟩` exactly.

mod spectral;

pub use spectral::Spectral;

use crate::corrector::Profile;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    l: usize,
}

impl TorusGrid {
    pub fn new(d: usize, l: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension d must be >= 1".into()));
        }
        if l < 4 || l % 2 != 0 {
            return Err(Error::Domain(format!("side length L must be an even integer >= 4, got {l}")));
        }
        if (l as f64).powi(d as i32) > 1e9 {
            return Err(Error::Domain(format!("grid L^d = {l}^{d} is too large")));
        }
        Ok(Self { d, l })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn sites(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    pub fn edges(&self) -> usize {
        self.d * self.sites()
    }

    /// Index step of coordinate `i`.
    pub fn stride(&self, i: usize) -> usize {
        self.l.pow((self.d - 1 - i) as u32)
    }

    /// Site index of coordinates reduced mod L (negative values allowed).
    pub fn site(&self, x: &[i64]) -> usize {
        debug_assert_eq!(x.len(), self.d);
        let l = self.l as i64;
        x.iter().fold(0usize, |acc, &c| acc * self.l + c.rem_euclid(l) as usize)
    }

    pub fn coords(&self, s: usize) -> Vec<i64> {
        let mut x = vec![0i64; self.d];
        let mut r = s;
        for c in x.iter_mut().rev() {
            *c = (r % self.l) as i64;
            r /= self.l;
        }
        x
    }

    /// Neighbor of site `s` one step along `±eᵢ`.
    pub fn shift(&self, s: usize, i: usize, forward: bool) -> usize {
        let st = self.stride(i);
        let c = (s / st) % self.l;
        match (forward, c) {
            (true, c) if c == self.l - 1 => s - (self.l - 1) * st,
            (true, _) => s + st,
            (false, 0) => s + (self.l - 1) * st,
            (false, _) => s - st,
        }
    }

    pub fn edge(&self, s: usize, i: usize) -> usize {
        i * self.sites() + s
    }

    /// Inverse of [`edge`](Self::edge): `(site, direction)`.
    pub fn edge_parts(&self, e: usize) -> (usize, usize) {
        (e % self.sites(), e / self.sites())
    }

    pub(crate) fn check(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!(
                "grid (d={}, L={}) does not match (d={}, L={})",
                self.d, self.l, other.d, other.l
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl SiteField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, values: vec![0.0; grid.sites()] }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(Error::Dimension(format!("{} values for {} sites", values.len(), grid.sites())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[i64]) -> f64) -> Self {
        let values = (0..grid.sites()).map(|s| f(&grid.coords(s))).collect();
        Self { grid, values }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn dot(&self, other: &SiteField) -> f64 {
        dot(&self.values, &other.values)
    }
}

impl EdgeField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, values: vec![0.0; grid.edges()] }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.edges() {
            return Err(Error::Dimension(format!("{} values for {} edges", values.len(), grid.edges())));
        }
        Ok(Self { grid, values })
    }

    /// The constant field `η(eᵢ) = ηᵢ`.
    pub fn constant(grid: TorusGrid, eta: &[f64]) -> Self {
        let n = grid.sites();
        let values = (0..grid.edges()).map(|e| eta[e / n]).collect();
        Self { grid, values }
    }

    /// Values on edges of direction `i`, indexed by lower endpoint.
    pub fn component(&self, i: usize) -> &[f64] {
        let n = self.grid.sites();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn dot(&self, other: &EdgeField) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Per-edge conductances `a(e) = 1 + τ b(ζ_e)` together with their Gaussian driver.
#[derive(Clone, Debug)]
pub struct ConductanceField {
    pub grid: TorusGrid,
    pub tau: f64,
    pub profile: Profile,
    pub driver: Vec<f64>,
    pub values: Vec<f64>,
}

impl ConductanceField {
    pub fn from_driver(grid: TorusGrid, profile: Profile, tau: f64, driver: Vec<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Ellipticity(tau));
        }
        if driver.len() != grid.edges() {
            return Err(Error::Dimension(format!("{} driver values for {} edges", driver.len(), grid.edges())));
        }
        let values = driver.iter().map(|&z| 1.0 + tau * profile.b(z)).collect();
        Ok(Self { grid, tau, profile, driver, values })
    }

    /// Unit conductance (`τ = 0`).
    pub fn unit(grid: TorusGrid) -> Self {
        Self {
            grid,
            tau: 0.0,
            profile: Profile::Tanh,
            driver: vec![0.0; grid.edges()],
            values: vec![1.0; grid.edges()],
        }
    }

    /// `b(ζ_e)`, the normalized perturbation.
    pub fn perturbation(&self) -> Vec<f64> {
        self.driver.iter().map(|&z| self.profile.b(z)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Visits `(x, x+eᵢ)` site pairs direction by direction without index arithmetic.
#[inline]
fn for_each_forward(grid: &TorusGrid, i: usize, mut f: impl FnMut(usize, usize)) {
    let l = grid.l();
    let st = grid.stride(i);
    let block = l * st;
    for b in (0..grid.sites()).step_by(block) {
        for r in 0..l {
            let row = b + r * st;
            let next = b + ((r + 1) % l) * st;
            for q in 0..st {
                f(row + q, next + q);
            }
        }
    }
}

pub fn grad_into(grid: &TorusGrid, f: &[f64], out: &mut [f64]) {
    let n = grid.sites();
    for i in 0..grid.d() {
        let o = &mut out[i * n..(i + 1) * n];
        for_each_forward(grid, i, |s, t| o[s] = f[t] - f[s]);
    }
}

/// `out = ∇*F` (overwrites `out`).
pub fn div_adj_into(grid: &TorusGrid, field: &[f64], out: &mut [f64]) {
    let n = grid.sites();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..grid.d() {
        let c = &field[i * n..(i + 1) * n];
        for_each_forward(grid, i, |s, t| {
            out[t] += c[s];
            out[s] -= c[s];
        });
    }
}

/// `out = ∇*(a ⊙ ∇f)`.
pub fn apply_operator_into(grid: &TorusGrid, a: &[f64], f: &[f64], out: &mut [f64]) {
    let n = grid.sites();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..grid.d() {
        let ai = &a[i * n..(i + 1) * n];
        for_each_forward(grid, i, |s, t| {
            let flux = ai[s] * (f[t] - f[s]);
            out[t] += flux;
            out[s] -= flux;
        });
    }
}

pub fn grad(f: &SiteField) -> EdgeField {
    let mut out = EdgeField::zeros(f.grid);
    grad_into(&f.grid, &f.values, &mut out.values);
    out
}

pub fn div_adj(field: &EdgeField) -> SiteField {
    let mut out = SiteField::zeros(field.grid);
    div_adj_into(&field.grid, &field.values, &mut out.values);
    out
}

pub fn apply_operator(a: &ConductanceField, f: &SiteField) -> Result<SiteField> {
    a.grid.check(&f.grid)?;
    let mut out = SiteField::zeros(f.grid);
    apply_operator_into(&f.grid, &a.values, &f.values, &mut out.values);
    Ok(out)
}

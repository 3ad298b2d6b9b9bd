//! Monte Carlo estimator of the fluctuation tensor
//! `[Q_ξ]ᵢⱼ = Σ_k ⟨(eᵢ+∇φᵢ)_k(ξ+∇φ_ξ)_k a′_k (1+𝓛)⁻¹ a′_k(eⱼ+∇φⱼ)_k(ξ+∇φ_ξ)_k⟩`
//! at the origin edge star `ε_k = (0, e_k)`.
//!
//! Each environment contributes one sample: the left factor at ζ, the right
//! factor through the Mehler resolvent on mixed environments (a fresh set of
//! correctors per node and sign). All τ of a grid share the same Gaussians, so
//! differences across τ carry no sampling noise beyond the functional itself.

use super::hermite::{HermiteSeries, TAIL_TOL};
use super::mehler::{mehler_nodes, McEstimate, MehlerParams};
use crate::corrector::{CorrectorSolver, Profile};
use crate::error::{Error, Result};
use crate::lattice::{ConductanceField, Spectral, TorusGrid};
use crate::par::*;
use crate::rng::NoiseKey;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Stream label of the outer environments.
pub const Q_ENV_STREAM: u64 = 1;
/// Stream label of the Mehler resamples.
pub const Q_FRESH_STREAM: u64 = 2;

/// How `∇φ_η` at the origin star is obtained on each environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CorrectorMethod {
    /// `∇φ_η = Σ_{n=1}^{order} τⁿ(−Π_λ b)ⁿη`: one pass serves every τ.
    Neumann { order: usize },
    /// Conjugate gradient per τ.
    Cg { tol: f64 },
}

impl Default for CorrectorMethod {
    fn default() -> Self {
        CorrectorMethod::Neumann { order: 8 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QParams {
    pub grid: TorusGrid,
    pub profile: Profile,
    pub xi: Vec<f64>,
    pub lambda: f64,
    pub n_env: usize,
    pub mehler: MehlerParams,
    pub method: CorrectorMethod,
    pub seed: u64,
    /// Replace the Mehler estimate of the zeroth-order right factor
    /// `δⱼₖξₖb′(ζ_{ε_k})` by its exact Hermite resolvent.
    pub control_variate: bool,
}

impl QParams {
    pub fn new(grid: TorusGrid, profile: Profile, xi: Vec<f64>) -> Self {
        Self {
            grid,
            profile,
            xi,
            lambda: 0.0,
            n_env: 64,
            mehler: MehlerParams::default(),
            method: CorrectorMethod::default(),
            seed: 0,
            control_variate: true,
        }
    }

    fn check(&self, taus: &[f64]) -> Result<()> {
        let d = self.grid.d();
        if self.xi.len() != d {
            return Err(Error::Dimension(format!("xi has {} components, d = {d}", self.xi.len())));
        }
        if self.n_env < 2 {
            return Err(Error::Domain(format!("need at least 2 environments, got {}", self.n_env)));
        }
        if self.mehler.pairs == 0 {
            return Err(Error::Domain("resolvent Monte Carlo needs at least one inner sample".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Domain(format!("mass lambda = {} must be >= 0", self.lambda)));
        }
        if taus.is_empty() {
            return Err(Error::Domain("empty tau grid".into()));
        }
        if let Some(&t) = taus.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::Ellipticity(t));
        }
        match self.method {
            CorrectorMethod::Neumann { order: 0 } => Err(Error::Domain("Neumann order must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QMeta {
    pub tau: f64,
    pub xi: Vec<f64>,
    pub lambda: f64,
    pub l: usize,
    pub d: usize,
    pub profile: Profile,
    pub n_samples: usize,
    pub seed: u64,
    pub method: CorrectorMethod,
    pub mehler: MehlerParams,
    /// Some entry has a standard error larger than its magnitude.
    pub underpowered: bool,
}

/// Row-major `d×d` estimate with per-entry standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct QEstimate {
    pub matrix: Vec<f64>,
    pub stderr: Vec<f64>,
    pub meta: QMeta,
}

impl QEstimate {
    pub fn get(&self, i: usize, j: usize) -> McEstimate {
        let k = i * self.meta.d + j;
        McEstimate { value: self.matrix[k], stderr: self.stderr[k] }
    }
}

/// Least-squares polynomial in τ fitted per environment, then averaged.
#[derive(Clone, Debug, Serialize)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    pub stderr: Vec<f64>,
    pub taus: Vec<f64>,
    pub n_samples: usize,
}

impl PolyFit {
    pub fn coeff(&self, n: usize) -> McEstimate {
        McEstimate { value: self.coeffs[n], stderr: self.stderr[n] }
    }
}

/// Per-environment samples of `Q(τ)/τ²` over a τ grid.
#[derive(Clone, Debug)]
pub struct QSamples {
    pub params: QParams,
    pub taus: Vec<f64>,
    /// `values[env][t·d² + i·d + j]`.
    pub values: Vec<Vec<f64>>,
}

impl QSamples {
    fn d(&self) -> usize {
        self.params.grid.d()
    }

    /// Samples of `[Q]ᵢⱼ(τ_t)/τ_t²`, one per environment.
    pub fn normalized(&self, t: usize, i: usize, j: usize) -> Vec<f64> {
        let d = self.d();
        self.values.iter().map(|v| v[t * d * d + i * d + j]).collect()
    }

    pub fn estimate(&self, t: usize) -> QEstimate {
        let d = self.d();
        let tau = self.taus[t];
        let mut matrix = vec![0.0; d * d];
        let mut stderr = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let est = McEstimate::from_samples(&self.normalized(t, i, j));
                matrix[i * d + j] = tau * tau * est.value;
                stderr[i * d + j] = tau * tau * est.stderr;
            }
        }
        let underpowered = matrix.iter().zip(&stderr).any(|(m, s)| *s > m.abs() && *s > 0.0);
        let p = &self.params;
        QEstimate {
            matrix,
            stderr,
            meta: QMeta {
                tau,
                xi: p.xi.clone(),
                lambda: p.lambda,
                l: p.grid.l(),
                d,
                profile: p.profile,
                n_samples: self.values.len(),
                seed: p.seed,
                method: p.method,
                mehler: p.mehler,
                underpowered,
            },
        }
    }

    /// Fits `[Q]ᵢⱼ(τ)/τ² ≈ Σₙ cₙτⁿ` (`n ≤ degree`) environment by environment.
    pub fn fit(&self, i: usize, j: usize, degree: usize) -> Result<PolyFit> {
        let nt = self.taus.len();
        if nt < degree + 1 {
            return Err(Error::Fit(format!("{nt} tau values cannot determine a degree-{degree} polynomial")));
        }
        let v = DMatrix::from_fn(nt, degree + 1, |r, c| self.taus[r].powi(c as i32));
        let svd = v.clone().svd(true, true);
        let (smax, smin) = svd.singular_values.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
        if !(smin > 0.0) || smax / smin > 1e12 {
            return Err(Error::Fit(format!("Vandermonde condition number {:.3e} too large", smax / smin)));
        }
        let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Fit(e.to_string()))?;
        let per_env: Vec<Vec<f64>> = (0..self.values.len())
            .map(|e| {
                let y: Vec<f64> = (0..nt).map(|t| self.normalized(t, i, j)[e]).collect();
                (0..=degree).map(|c| (0..nt).map(|t| pinv[(c, t)] * y[t]).sum()).collect()
            })
            .collect();
        let (coeffs, stderr) = (0..=degree)
            .map(|c| {
                let s: Vec<f64> = per_env.iter().map(|p| p[c]).collect();
                let est = McEstimate::from_samples(&s);
                (est.value, est.stderr)
            })
            .unzip();
        Ok(PolyFit { coeffs, stderr, taus: self.taus.clone(), n_samples: self.values.len() })
    }
}

/// Origin-star gradients `A_mk = δ_mk + ∇_kφ_{e_m}(0)` for every τ of a grid.
pub(crate) struct StarSolver {
    grid: TorusGrid,
    profile: Profile,
    lambda: f64,
    method: CorrectorMethod,
    spectral: Spectral,
    cg: Option<CorrectorSolver>,
    /// `κ_k = Π_λ 1_{ε_k}`: the origin row of the projection.
    kernel_rows: Vec<Vec<f64>>,
}

impl StarSolver {
    pub(crate) fn new(grid: TorusGrid, profile: Profile, lambda: f64, method: CorrectorMethod) -> Self {
        let spectral = Spectral::new(grid);
        let kernel_rows = kernel_rows(&spectral, lambda);
        let cg = matches!(method, CorrectorMethod::Cg { .. }).then(|| CorrectorSolver::new(grid));
        Self { grid, profile, lambda, method, spectral, cg, kernel_rows }
    }

    pub(crate) fn kernel_rows(&self) -> &[Vec<f64>] {
        &self.kernel_rows
    }

    pub(crate) fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// `(−Π_λ b)ⁿ e_m` at the origin star: `out[m][k][n]` for `n = 0..=order`.
    pub(crate) fn neumann_star(&self, b: &[f64], order: usize) -> Vec<Vec<Vec<f64>>> {
        let g = self.grid;
        let (d, ns) = (g.d(), g.sites());
        let mut out = vec![vec![vec![0.0; order + 1]; d]; d];
        let mut fields: Vec<Vec<f64>> = (0..d).map(|m| (0..g.edges()).map(|e| if e / ns == m { 1.0 } else { 0.0 }).collect()).collect();
        for m in 0..d {
            out[m][m][0] = 1.0;
        }
        for n in 1..=order {
            let weighted: Vec<Vec<f64>> = fields.iter().map(|f| f.iter().zip(b).map(|(x, y)| x * y).collect()).collect();
            if n == order {
                // only the origin star is needed: Π is symmetric, so (Πv)(ε_k) = ⟨κ_k, v⟩
                for m in 0..d {
                    for k in 0..d {
                        out[m][k][n] = -crate::lattice::dot(&self.kernel_rows[k], &weighted[m]);
                    }
                }
                break;
            }
            let mut next = Vec::with_capacity(d);
            for pair in weighted.chunks(2) {
                if pair.len() == 2 {
                    let (p, q) = self.spectral.project_pair(&pair[0], &pair[1], self.lambda);
                    next.push(p);
                    next.push(q);
                } else {
                    next.push(self.spectral.project(&pair[0], self.lambda));
                }
            }
            for (m, f) in next.iter_mut().enumerate() {
                f.iter_mut().for_each(|v| *v = -*v);
                for k in 0..d {
                    out[m][k][n] = f[k * ns];
                }
            }
            fields = next;
        }
        out
    }

    /// `A(τ)` (row-major `d×d`, row = corrector direction) for each τ.
    pub(crate) fn star(&self, zeta: &[f64], taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.grid.d();
        match self.method {
            CorrectorMethod::Neumann { order } => {
                let b: Vec<f64> = zeta.iter().map(|&z| self.profile.b(z)).collect();
                let c = self.neumann_star(&b, order);
                Ok(taus
                    .iter()
                    .map(|&tau| {
                        let mut a = vec![0.0; d * d];
                        for m in 0..d {
                            for k in 0..d {
                                a[m * d + k] = c[m][k].iter().rev().fold(0.0, |acc, v| acc * tau + v);
                            }
                        }
                        a
                    })
                    .collect())
            }
            CorrectorMethod::Cg { tol } => {
                let solver = self.cg.as_ref().expect("CG solver present for the CG method");
                taus.iter()
                    .map(|&tau| {
                        let mut a = vec![0.0; d * d];
                        for m in 0..d {
                            a[m * d + m] = 1.0;
                        }
                        if tau == 0.0 {
                            return Ok(a);
                        }
                        let field = ConductanceField::from_driver(self.grid, self.profile, tau, zeta.to_vec())?;
                        for m in 0..d {
                            let mut eta = vec![0.0; d];
                            eta[m] = 1.0;
                            let phi = solver.solve(&field, &eta, self.lambda, tol)?.phi.values;
                            for k in 0..d {
                                a[m * d + k] += phi[self.grid.stride(k)] - phi[0];
                            }
                        }
                        Ok(a)
                    })
                    .collect()
            }
        }
    }
}

fn kernel_rows(spectral: &Spectral, lambda: f64) -> Vec<Vec<f64>> {
    let g = *spectral.grid();
    (0..g.d())
        .map(|k| {
            let mut unit = vec![0.0; g.edges()];
            unit[g.edge(0, k)] = 1.0;
            spectral.project(&unit, lambda)
        })
        .collect()
}

/// Left or right factor `A_ik X_k b′(ζ_{ε_k})` with `X_k = Σ_m ξ_m A_mk`, as `out[i·d + k]`.
fn star_factor(a: &[f64], xi: &[f64], db: &[f64]) -> Vec<f64> {
    let d = xi.len();
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        let x: f64 = (0..d).map(|m| xi[m] * a[m * d + k]).sum();
        for i in 0..d {
            out[i * d + k] = a[i * d + k] * x * db[k];
        }
    }
    out
}

/// `Q(τ)/τ²` samples on a τ grid with common random numbers.
pub fn q_tensor_grid(params: &QParams, taus: &[f64]) -> Result<QSamples> {
    params.check(taus)?;
    let grid = params.grid;
    let (d, ns, ne) = (grid.d(), grid.sites(), grid.edges());
    let nodes = mehler_nodes(params.mehler.nodes)?;
    let solver = StarSolver::new(grid, params.profile, params.lambda, params.method);
    let origin_db = |z: &[f64]| -> Vec<f64> { (0..d).map(|k| params.profile.db(z[k * ns])).collect() };
    let pairs = params.mehler.pairs;
    let resolved_db = if params.control_variate {
        Some(HermiteSeries::from_fn(|z| params.profile.db(z), Profile::HERMITE_DEGREE, TAIL_TOL)?.resolvent())
    } else {
        None
    };

    let values = (0..params.n_env)
        .into_par_iter()
        .map(|env| -> Result<Vec<f64>> {
            let zeta = NoiseKey::derive(params.seed, &[Q_ENV_STREAM, env as u64]).normals(ne);
            let left_a = solver.star(&zeta, taus)?;
            let left_db = origin_db(&zeta);
            let mut right = vec![vec![0.0; d * d]; taus.len()];
            // Σ_t w_t·avg± b′ at the star, and its exact counterpart
            let mut control = vec![0.0; d];
            let mut fresh = vec![0.0; ne];
            let mut mixed = vec![0.0; ne];
            for (t, node) in nodes.iter().enumerate() {
                for r in 0..pairs {
                    NoiseKey::derive(params.seed, &[Q_FRESH_STREAM, env as u64, t as u64, r as u64]).fill_normals(0, &mut fresh);
                    for sign in [1.0, -1.0] {
                        node.mix(&zeta, &fresh, sign, &mut mixed);
                        let a = solver.star(&mixed, taus)?;
                        let db = origin_db(&mixed);
                        let w = node.weight / (2.0 * pairs as f64);
                        for (c, v) in control.iter_mut().zip(&db) {
                            *c += w * v;
                        }
                        for (acc, at) in right.iter_mut().zip(&a) {
                            for (x, v) in acc.iter_mut().zip(star_factor(at, &params.xi, &db)) {
                                *x += w * v;
                            }
                        }
                    }
                }
            }
            if let Some(series) = &resolved_db {
                for k in 0..d {
                    let shift = params.xi[k] * (series.eval(zeta[k * ns]) - control[k]);
                    for acc in right.iter_mut() {
                        acc[k * d + k] += shift;
                    }
                }
            }
            let mut out = vec![0.0; taus.len() * d * d];
            for (t, (la, res)) in left_a.iter().zip(&right).enumerate() {
                let left = star_factor(la, &params.xi, &left_db);
                for i in 0..d {
                    for j in 0..d {
                        let s: f64 = (0..d).map(|k| left[i * d + k] * res[j * d + k] + left[j * d + k] * res[i * d + k]).sum();
                        out[t * d * d + i * d + j] = 0.5 * s;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QSamples { params: params.clone(), taus: taus.to_vec(), values })
}

/// Estimate of `Q_ξ` at one contrast.
pub fn q_tensor_mc(params: &QParams, tau: f64) -> Result<QEstimate> {
    Ok(q_tensor_grid(params, &[tau])?.estimate(0))
}

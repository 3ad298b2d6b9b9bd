//! Random conductances `a = 1 + τ b(ζ)`, the corrector equation
//! `∇*a(∇φ_η + η) = 0` (optionally with mass λ), its Neumann series, and the
//! homogenized matrix ā.

use crate::error::{Error, Result};
use crate::lattice::{apply_operator_into, dot, grad_into, ConductanceField, EdgeField, SiteField, Spectral, TorusGrid};
use crate::linalg::SpdMatrix;
use crate::rng::NoiseKey;
use serde::{Deserialize, Serialize};

/// Stream label of the environment driver; other consumers use distinct labels.
pub const ENVIRONMENT_STREAM: u64 = 0;

/// Mean-zero perturbation profile `b: ℝ → [−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `b(z) = tanh z`.
    Tanh,
    /// `b(z) = z·exp((1 − z²)/2)`, the first Hermite function scaled to sup-norm 1.
    HermiteBump,
}

impl Profile {
    pub const ALL: [Profile; 2] = [Profile::Tanh, Profile::HermiteBump];
    /// Hermite degree cap used for exact resolvent evaluations.
    pub const HERMITE_DEGREE: usize = 120;

    pub fn b(&self, z: f64) -> f64 {
        match self {
            Profile::Tanh => z.tanh(),
            Profile::HermiteBump => z * (0.5 * (1.0 - z * z)).exp(),
        }
    }

    pub fn db(&self, z: f64) -> f64 {
        match self {
            Profile::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Profile::HermiteBump => (1.0 - z * z) * (0.5 * (1.0 - z * z)).exp(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Tanh => "tanh",
            Profile::HermiteBump => "hermite-bump",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Domain(format!("unknown profile '{name}' (expected tanh or hermite-bump)")))
    }
}

/// Edge-wise i.i.d. standard Gaussian driver, normal number = edge index.
pub fn environment_driver(grid: &TorusGrid, seed: u64) -> Vec<f64> {
    NoiseKey::derive(seed, &[ENVIRONMENT_STREAM]).normals(grid.edges())
}

pub fn sample_conductance(grid: TorusGrid, profile: Profile, tau: f64, seed: u64) -> Result<ConductanceField> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Ellipticity(tau));
    }
    ConductanceField::from_driver(grid, profile, tau, environment_driver(&grid, seed))
}

#[derive(Clone, Debug)]
pub struct CorrectorSolution {
    pub eta: Vec<f64>,
    pub phi: SiteField,
    pub residual: f64,
    pub lambda: f64,
    pub iterations: usize,
}

impl CorrectorSolution {
    /// `η + ∇φ` as an edge field.
    pub fn flux_free_gradient(&self) -> EdgeField {
        let g = self.phi.grid;
        let mut out = EdgeField::zeros(g);
        grad_into(&g, &self.phi.values, &mut out.values);
        let n = g.sites();
        for (e, v) in out.values.iter_mut().enumerate() {
            *v += self.eta[e / n];
        }
        out
    }
}

/// Default relative residual target.
pub const CG_TOL: f64 = 1e-10;

/// Preconditioned conjugate gradient for `(λ + ∇*a∇)φ = −∇*(aη)`.
///
/// The preconditioner is the exact spectral inverse of `λ − Δ`. For `λ = 0`
/// all iterates stay in the mean-zero subspace, where the operator is definite.
pub struct CorrectorSolver {
    spectral: Spectral,
    max_iterations: usize,
}

impl CorrectorSolver {
    pub fn new(grid: TorusGrid) -> Self {
        Self { max_iterations: 10 * grid.l(), spectral: Spectral::new(grid) }
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn solve(&self, a: &ConductanceField, eta: &[f64], lambda: f64, tol: f64) -> Result<CorrectorSolution> {
        let grid = *self.spectral.grid();
        if a.grid != grid {
            return Err(Error::Dimension("conductance grid differs from solver grid".into()));
        }
        if eta.len() != grid.d() {
            return Err(Error::Dimension(format!("direction has {} components, d = {}", eta.len(), grid.d())));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!("mass lambda = {lambda} must be >= 0")));
        }
        let n = grid.sites();
        // rhs = −∇*(aη) = Σᵢ ηᵢ (aᵢ(x) − aᵢ(x−eᵢ))
        let mut flux = vec![0.0; grid.edges()];
        for (e, f) in flux.iter_mut().enumerate() {
            *f = a.values[e] * eta[e / n];
        }
        let mut rhs = vec![0.0; n];
        crate::lattice::div_adj_into(&grid, &flux, &mut rhs);
        rhs.iter_mut().for_each(|v| *v = -*v);

        let precond = self.spectral.resolvent_multiplier(lambda);
        let apply = |x: &[f64], out: &mut [f64]| {
            apply_operator_into(&grid, &a.values, x, out);
            if lambda > 0.0 {
                out.iter_mut().zip(x).for_each(|(o, v)| *o += lambda * v);
            }
        };
        let pre = |r: &[f64], out: &mut [f64]| self.spectral.apply_multiplier(&precond, r, out, None);
        let (mut phi, iterations, residual) = pcg(apply, pre, &rhs, tol, self.max_iterations)?;
        if lambda == 0.0 {
            let m = phi.iter().sum::<f64>() / n as f64;
            phi.iter_mut().for_each(|v| *v -= m);
        }
        Ok(CorrectorSolution {
            eta: eta.to_vec(),
            phi: SiteField { grid, values: phi },
            residual,
            lambda,
            iterations,
        })
    }
}

pub fn solve_corrector(a: &ConductanceField, eta: &[f64], lambda: f64, tol: f64) -> Result<CorrectorSolution> {
    CorrectorSolver::new(a.grid).solve(a, eta, lambda, tol)
}

fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok((x, it, rel));
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = *history.last().unwrap_or(&1.0);
    Err(Error::Solver { iterations: max_iter, residual, history })
}

/// Powers of the contraction `K = −τ∇(λ − Δ)⁻¹∇* b` applied to a constant field.
pub struct NeumannSeries<'a> {
    spectral: &'a Spectral,
    b: Vec<f64>,
    tau: f64,
    lambda: f64,
}

impl<'a> NeumannSeries<'a> {
    pub fn new(spectral: &'a Spectral, a: &ConductanceField, lambda: f64) -> Self {
        Self { spectral, b: a.perturbation(), tau: a.tau, lambda }
    }

    /// From an explicit perturbation field `b(e)` and contrast.
    pub fn from_perturbation(spectral: &'a Spectral, b: Vec<f64>, tau: f64, lambda: f64) -> Self {
        Self { spectral, b, tau, lambda }
    }

    /// `K X`.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        let bx: Vec<f64> = x.iter().zip(&self.b).map(|(v, b)| v * b).collect();
        let mut out = self.spectral.project(&bx, self.lambda);
        out.iter_mut().for_each(|v| *v *= -self.tau);
        out
    }

    /// `X₀, …, X_k` for direction `η`.
    pub fn terms(&self, eta: &[f64], k: usize) -> Vec<Vec<f64>> {
        let grid = self.spectral.grid();
        let mut out = vec![EdgeField::constant(*grid, eta).values];
        for _ in 0..k {
            let next = self.step(out.last().unwrap());
            out.push(next);
        }
        out
    }
}

/// `X_{k,η} = [−τ∇(−Δ)⁻¹∇* b]ᵏ η`.
pub fn neumann_term(k: usize, eta: &[f64], a: &ConductanceField) -> EdgeField {
    let spectral = Spectral::new(a.grid);
    let series = NeumannSeries::new(&spectral, a, 0.0);
    let values = series.terms(eta, k).pop().unwrap();
    EdgeField { grid: a.grid, values }
}

/// Power-iteration estimate of `‖∇(−Δ)⁻¹∇* b‖` on edge fields, i.e. the constant `C` in `‖K‖ ≤ Cτ`.
pub fn contraction_constant(spectral: &Spectral, a: &ConductanceField, iterations: usize, seed: u64) -> f64 {
    let b = a.perturbation();
    let mut v = NoiseKey::derive(seed, &[0xC0]).normals(b.len());
    let mut rayleigh = 0.0;
    for _ in 0..iterations {
        let nv = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        // b Π b is symmetric positive semidefinite
        let bv: Vec<f64> = v.iter().zip(&b).map(|(x, b)| x * b).collect();
        let w: Vec<f64> = spectral.project(&bv, 0.0).iter().zip(&b).map(|(x, b)| x * b).collect();
        rayleigh = dot(&v, &w);
        v = w;
    }
    rayleigh.max(0.0).sqrt()
}

/// ā estimate with standard errors over independent environments.
#[derive(Clone, Debug, Serialize)]
pub struct HomogenizedEstimate {
    pub matrix: SpdMatrix,
    pub stderr: Vec<f64>,
    pub per_sample: Vec<SpdMatrix>,
}

/// `ā_s[i][j] = ⟨eᵢ · a(eⱼ + ∇φ_{eⱼ})⟩_sites` for one environment, symmetrized.
pub fn homogenized_sample(a: &ConductanceField, solutions: &[CorrectorSolution]) -> Result<SpdMatrix> {
    let grid = a.grid;
    let d = grid.d();
    let n = grid.sites();
    let mut m = vec![0.0; d * d];
    for sol in solutions {
        let j = match sol.eta.iter().position(|&v| v == 1.0) {
            Some(j) if sol.eta.iter().filter(|&&v| v != 0.0).count() == 1 => j,
            _ => return Err(Error::Domain("homogenized estimate needs solutions for unit directions".into())),
        };
        let g = sol.flux_free_gradient();
        for i in 0..d {
            m[i * d + j] = (0..n).map(|s| a.values[i * n + s] * g.values[i * n + s]).sum::<f64>() / n as f64;
        }
    }
    if solutions.len() != d {
        return Err(Error::Domain(format!("need {d} unit-direction solutions, got {}", solutions.len())));
    }
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = v;
            m[j * d + i] = v;
        }
    }
    SpdMatrix::symmetric(d, m)
}

pub fn homogenized_estimate(samples: &[(ConductanceField, Vec<CorrectorSolution>)]) -> Result<HomogenizedEstimate> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", samples.len())));
    }
    let per_sample = samples.iter().map(|(a, s)| homogenized_sample(a, s)).collect::<Result<Vec<_>>>()?;
    let d = per_sample[0].d();
    let ns = per_sample.len() as f64;
    let mut mean = vec![0.0; d * d];
    let mut stderr = vec![0.0; d * d];
    for k in 0..d * d {
        let vals: Vec<f64> = per_sample.iter().map(|m| m.as_slice()[k]).collect();
        let mu = vals.iter().sum::<f64>() / ns;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (ns - 1.0);
        mean[k] = mu;
        stderr[k] = (var / ns).sqrt();
    }
    Ok(HomogenizedEstimate { matrix: SpdMatrix::symmetric(d, mean)?, stderr, per_sample })
}

/// `Ψ = ∇(λ − Δ)⁻¹∇*F`.
pub fn projection_field(field: &EdgeField, lambda: f64) -> Result<EdgeField> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("mass lambda = {lambda} must be >= 0")));
    }
    let sp = Spectral::new(field.grid);
    Ok(EdgeField { grid: field.grid, values: sp.project(&field.values, lambda) })
}

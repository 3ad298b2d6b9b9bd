use super::{div_adj_into, grad_into, TorusGrid};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Discrete Fourier transforms on a torus and the multipliers built from them.
///
/// Frequencies share the site indexing: frequency `k` has coordinates
/// `kᵢ ∈ [0, L)` and angles `θᵢ = 2πkᵢ/L`. With `f̂(k) = Σₓ f(x)e^{−ik·θ}`,
/// `∇ᵢ` has symbol `gᵢ(k) = e^{iθᵢ} − 1` and `∇ᵢ*` has symbol `conj(gᵢ(k))`.
///
/// Every multiplier used here is real and even in `k`, so two real fields are
/// transformed at once as the real and imaginary parts of one complex array.
pub struct Spectral {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `e^{2πik/L} − 1` for `k ∈ [0, L)`.
    phase: Vec<Complex64>,
    /// Symbol of `−Δ`: `σ(k) = Σᵢ |gᵢ(k)|² = Σᵢ 4 sin²(θᵢ/2)`.
    sigma: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let l = grid.l();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(l);
        let inv = planner.plan_fft_inverse(l);
        let phase: Vec<Complex64> = (0..l)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / l as f64) - 1.0)
            .collect();
        let sigma = (0..grid.sites())
            .map(|s| grid.coords(s).iter().map(|&k| phase[k as usize].norm_sqr()).sum())
            .collect();
        Self { grid, fwd, inv, phase, sigma }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// `σ(k)` for every frequency.
    pub fn laplacian_symbol(&self) -> &[f64] {
        &self.sigma
    }

    /// `gᵢ(k) = e^{iθᵢ} − 1`.
    pub fn direction_symbol(&self, k: usize, i: usize) -> Complex64 {
        let c = (k / self.grid.stride(i)) % self.grid.l();
        self.phase[c]
    }

    /// Symbol of `∇*M∇`: `σ_M(k) = Σᵢⱼ conj(gᵢ) Mᵢⱼ gⱼ` for symmetric `M` (row-major d×d).
    pub fn form_symbol(&self, m: &[f64]) -> Vec<f64> {
        let d = self.grid.d();
        let mut g = vec![Complex64::new(0.0, 0.0); d];
        (0..self.grid.sites())
            .map(|k| {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = self.direction_symbol(k, i);
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..d {
                    for j in 0..d {
                        acc += g[i].conj() * m[i * d + j] * g[j];
                    }
                }
                acc.re
            })
            .collect()
    }

    fn transform(&self, data: &mut Vec<Complex64>, plan: &Arc<dyn Fft<f64>>) {
        let n = data.len();
        let l = self.grid.l();
        let rows = n / l;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        // FFT the contiguous axis, then rotate axes so the next one becomes
        // contiguous; after d rotations the original layout is restored.
        for _ in 0..self.grid.d() {
            plan.process_with_scratch(data, &mut scratch);
            for r in 0..rows {
                let src = &data[r * l..(r + 1) * l];
                for (c, v) in src.iter().enumerate() {
                    buf[c * rows + r] = *v;
                }
            }
            std::mem::swap(data, &mut buf);
        }
    }

    /// Unnormalized forward transform of a complex array.
    pub fn forward(&self, data: &mut Vec<Complex64>) {
        self.transform(data, &self.fwd);
    }

    /// Inverse transform including the `1/Lᵈ` normalization.
    pub fn inverse(&self, data: &mut Vec<Complex64>) {
        self.transform(data, &self.inv);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex64> {
        let mut z: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut z);
        z
    }

    /// Applies the real even multiplier `m(k)` to `f` (and optionally to `g` in the same pass).
    pub fn apply_multiplier(&self, m: &[f64], f: &[f64], out_f: &mut [f64], g: Option<(&[f64], &mut [f64])>) {
        let mut z: Vec<Complex64> = match &g {
            Some((g, _)) => f.iter().zip(g.iter()).map(|(&a, &b)| Complex64::new(a, b)).collect(),
            None => f.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        };
        self.forward(&mut z);
        z.iter_mut().zip(m).for_each(|(v, &w)| *v *= w);
        self.inverse(&mut z);
        for (o, v) in out_f.iter_mut().zip(&z) {
            *o = v.re;
        }
        if let Some((_, out_g)) = g {
            for (o, v) in out_g.iter_mut().zip(&z) {
                *o = v.im;
            }
        }
    }

    /// Multiplier `1/(λ + σ(k))`, with the zero mode removed when `λ = 0`.
    pub fn resolvent_multiplier(&self, lambda: f64) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|&s| if s + lambda > 0.0 { 1.0 / (lambda + s) } else { 0.0 })
            .collect()
    }

    /// `(λ − Δ)⁻¹ f`; for `λ = 0` the mean-zero solution of `−Δu = f − ⟨f⟩`.
    pub fn solve_massive(&self, lambda: f64, f: &[f64]) -> Vec<f64> {
        let m = self.resolvent_multiplier(lambda);
        let mut out = vec![0.0; f.len()];
        self.apply_multiplier(&m, f, &mut out, None);
        out
    }

    /// `Ψ = ∇(λ − Δ)⁻¹∇*F` computed as divergence, spectral solve, gradient.
    pub fn project(&self, field: &[f64], lambda: f64) -> Vec<f64> {
        let n = self.grid.sites();
        let mut div = vec![0.0; n];
        div_adj_into(&self.grid, field, &mut div);
        let u = self.solve_massive(lambda, &div);
        let mut out = vec![0.0; field.len()];
        grad_into(&self.grid, &u, &mut out);
        out
    }
    /// [`Spectral::project`] for two fields sharing one complex transform.
    pub fn project_pair(&self, f: &[f64], g: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.sites();
        let (mut df, mut dg) = (vec![0.0; n], vec![0.0; n]);
        div_adj_into(&self.grid, f, &mut df);
        div_adj_into(&self.grid, g, &mut dg);
        let m = self.resolvent_multiplier(lambda);
        let (mut uf, mut ug) = (vec![0.0; n], vec![0.0; n]);
        self.apply_multiplier(&m, &df, &mut uf, Some((&dg, &mut ug)));
        let (mut of, mut og) = (vec![0.0; f.len()], vec![0.0; g.len()]);
        grad_into(&self.grid, &uf, &mut of);
        grad_into(&self.grid, &ug, &mut og);
        (of, og)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_naive_dft() {
        let g = TorusGrid::new(3, 4).unwrap();
        let sp = Spectral::new(g);
        let f: Vec<f64> = (0..g.sites()).map(|s| ((s * 7919) % 13) as f64 - 6.0).collect();
        let fast = sp.forward_real(&f);
        for k in [0usize, 1, 5, 17, 63] {
            let kc = g.coords(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, &v) in f.iter().enumerate() {
                let x = g.coords(s);
                let ph: f64 = kc.iter().zip(&x).map(|(a, b)| (a * b) as f64).sum::<f64>() * std::f64::consts::TAU / 4.0;
                acc += v * Complex64::from_polar(1.0, -ph);
            }
            assert!((acc - fast[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip() {
        let g = TorusGrid::new(2, 6).unwrap();
        let sp = Spectral::new(g);
        let f: Vec<f64> = (0..g.sites()).map(|s| (s as f64).sin()).collect();
        let mut z = sp.forward_real(&f);
        sp.inverse(&mut z);
        for (a, b) in f.iter().zip(&z) {
            assert!((a - b.re).abs() < 1e-13 && b.im.abs() < 1e-13);
        }
    }
}

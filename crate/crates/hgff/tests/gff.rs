use hgff::gff::*;
use hgff::lattice::{SiteField, Spectral, TorusGrid};
use hgff::linalg::SpdMatrix;
use hgff::rng::NoiseKey;
use hgff::Error;
use std::f64::consts::TAU;

const SAMPLES: u64 = 10_000;

fn abar() -> SpdMatrix {
    SpdMatrix::new(3, vec![1.6, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 1.3]).unwrap()
}

fn q() -> SpdMatrix {
    SpdMatrix::new(3, vec![0.8, 0.0, 0.25, 0.0, 1.4, 0.1, 0.25, 0.1, 0.6]).unwrap()
}

fn mean_zero(grid: TorusGrid, seed: u64) -> SiteField {
    let mut v = NoiseKey::new(seed, 9).normals(grid.sites());
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
    SiteField::from_values(grid, v).unwrap()
}

fn stats(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `σ_M(θ) = Σᵢⱼ Mᵢⱼ Re[conj(e^{iθᵢ} − 1)(e^{iθⱼ} − 1)]`, written out in cosines.
fn symbol(m: &SpdMatrix, theta: &[f64]) -> f64 {
    let d = theta.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let re = (theta[j] - theta[i]).cos() - theta[i].cos() - theta[j].cos() + 1.0;
            acc += m.get(i, j) * re;
        }
    }
    acc
}

#[test]
fn empirical_covariance_matches_exact_pairing() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let sampler = GffSampler::new(GffSpec::new(abar(), q(), grid, 3).unwrap());
    let fields: Vec<SiteField> = (0..SAMPLES).map(|k| sampler.sample(k).phi).collect();
    for p in 0..10 {
        let f = mean_zero(grid, 2 * p);
        let g = mean_zero(grid, 2 * p + 1);
        let exact = covariance_pair(&f, &g, &abar(), &q()).unwrap();
        assert!(!exact.projected);
        let prods: Vec<f64> = fields.iter().map(|phi| test_pairing(phi, &f) * test_pairing(phi, &g)).collect();
        let (mean, se) = stats(&prods);
        assert!((mean - exact.value).abs() < 3.0 * se, "pair {p}: {mean} ± {se} vs {}", exact.value);
    }
}

#[test]
fn single_mode_covariance() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let h = 1.0 / 8.0;
    for k in [[1i64, 0, 0], [1, 2, 3], [3, 1, 1]] {
        let theta: Vec<f64> = k.iter().map(|&c| TAU * c as f64 / 8.0).collect();
        let f = SiteField::from_fn(grid, |x| x.iter().zip(&theta).map(|(&a, t)| a as f64 * t).sum::<f64>().cos());
        let want = h * h / 2.0 * symbol(&q(), &theta) / symbol(&abar(), &theta).powi(2);
        let got = covariance_pair(&f, &f, &abar(), &q()).unwrap().value;
        assert!((got - want).abs() < 1e-12 * want, "{k:?}: {got} vs {want}");
    }
}

#[test]
fn proportional_coefficients_give_classical_field() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let h = 1.0 / 8.0f64;
    let sp = Spectral::new(grid);
    let f = mean_zero(grid, 1);
    let g = mean_zero(grid, 2);
    // ā = Q = cI: E[Φ(f)Φ(g)] = h^{d+2}⟨f, (−cΔ)⁻¹g⟩
    let green = sp.solve_massive(0.0, &g.values);
    let lattice: f64 = f.values.iter().zip(&green).map(|(a, b)| a * b).sum();
    for c in [1.0, 2.0] {
        let m = SpdMatrix::identity(3).scaled(c);
        let v = covariance_pair(&f, &g, &m, &m).unwrap().value;
        let want = h.powi(5) * lattice / c;
        assert!((v - want).abs() < 1e-12 * want.abs(), "{v} vs {want}");
    }
    // linear in Q
    let base = covariance_pair(&f, &g, &abar(), &q()).unwrap().value;
    for eps in [0.5, 1e-3] {
        let v = covariance_pair(&f, &g, &abar(), &q().scaled(eps)).unwrap().value;
        assert!((v - eps * base).abs() < 1e-12 * base.abs());
    }
    let shifted = SiteField::from_fn(grid, |x| 1.0 + x[0] as f64);
    assert!(covariance_pair(&shifted, &g, &abar(), &q()).unwrap().projected);
}

#[test]
fn samples_are_linear_and_solve_the_equation() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let sampler = GffSampler::new(GffSpec::new(abar(), q(), grid, 5).unwrap());
    let (x, y) = (sampler.sample(0), sampler.sample(1));
    let mut w = x.w.clone();
    w.values.iter_mut().zip(&y.w.values).for_each(|(a, b)| *a += b);
    let sum = sampler.solve(&w);
    for ((s, a), b) in sum.values.iter().zip(&x.phi.values).zip(&y.phi.values) {
        assert!((s - a - b).abs() < 1e-12);
    }
    let f = mean_zero(grid, 1);
    let g = mean_zero(grid, 2);
    let mut fg = f.clone();
    fg.values.iter_mut().zip(&g.values).for_each(|(a, b)| *a += b);
    let lhs = test_pairing(&x.phi, &fg);
    assert!((lhs - test_pairing(&x.phi, &f) - test_pairing(&x.phi, &g)).abs() < 1e-12);
    for k in 0..5 {
        let s = sampler.sample(k);
        assert!(s.phi.mean().abs() < 1e-12);
        assert!(sampler.equation_residual(&s) < 1e-10);
        assert!(sampler.helmholtz_residual(&s, &mean_zero(grid, 10 + k)) < 1e-10);
    }
    // same index, same field
    assert_eq!(sample_gff(sampler.spec(), 3).phi.values, sampler.sample(3).phi.values);
}

#[test]
fn field_statistics_are_gaussian() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let sampler = GffSampler::new(GffSpec::new(abar(), q(), grid, 8).unwrap());
    let fields: Vec<SiteField> = (0..SAMPLES).map(|k| sampler.sample(k).phi).collect();
    let n = SAMPLES as f64;
    for p in 0..10 {
        let f = mean_zero(grid, 100 + p);
        let x: Vec<f64> = fields.iter().map(|phi| test_pairing(phi, &f)).collect();
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let skew = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n / m2.powf(1.5);
        let kurt = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n / (m2 * m2) - 3.0;
        assert!(skew.abs() < 4.0 * (6.0 / n).sqrt(), "skewness {skew}");
        assert!(kurt.abs() < 4.0 * (24.0 / n).sqrt(), "excess kurtosis {kurt}");
    }
}

#[test]
fn domain_decomposition() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let sampler = GffSampler::new(GffSpec::new(abar(), q(), grid, 12).unwrap());
    let all = vec![true; grid.sites()];
    let (pa, pc, full) = sampler.sample_restricted(0, &all).unwrap();
    assert!(pa.values.iter().zip(&full.phi.values).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(pc.values.iter().all(|v| v.abs() < 1e-12));
    assert!(sampler.sample_restricted(0, &all[1..]).is_err());

    let mask: Vec<bool> = NoiseKey::new(4, 4).normals(grid.sites()).iter().map(|&z| z > 0.3).collect();
    let pairs: Vec<(SiteField, SiteField)> = (0..SAMPLES)
        .map(|k| {
            let (a, c, full) = sampler.sample_restricted(k, &mask).unwrap();
            for ((x, y), z) in a.values.iter().zip(&c.values).zip(&full.phi.values) {
                assert!((x + y - z).abs() < 1e-12);
            }
            (a, c)
        })
        .collect();
    for p in 0..10 {
        let f = mean_zero(grid, 200 + p);
        let g = mean_zero(grid, 300 + p);
        let x: Vec<f64> = pairs.iter().map(|(a, _)| test_pairing(a, &f)).collect();
        let y: Vec<f64> = pairs.iter().map(|(_, c)| test_pairing(c, &g)).collect();
        let (mx, my) = (x.iter().sum::<f64>() / SAMPLES as f64, y.iter().sum::<f64>() / SAMPLES as f64);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 3.0 / (SAMPLES as f64).sqrt(), "pair {p}: {corr}");
    }
}

#[test]
fn restricted_field_is_harmonic_away_from_its_noise() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let sampler = GffSampler::new(GffSpec::new(abar(), q(), grid, 13).unwrap());
    let half: Vec<bool> = (0..grid.sites()).map(|s| grid.coords(s)[0] < 4).collect();
    let (pa, _, _) = sampler.sample_restricted(1, &half).unwrap();
    assert!(harmonicity_check(&pa, &abar(), &half).unwrap() <= 1e-10);

    let mask: Vec<bool> = NoiseKey::new(8, 8).normals(grid.sites()).iter().map(|&z| z > 1.0).collect();
    let (pa, _, _) = sampler.sample_restricted(2, &mask).unwrap();
    assert!(harmonicity_check(&pa, &abar(), &mask).unwrap() <= 1e-10);
    let r = apply_constant(&grid, &abar(), &pa.values);
    let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let interior = exterior_interior(&grid, &mask);
    let boundary = (0..grid.sites()).filter(|s| !mask[*s] && !interior.contains(s));
    let worst = boundary.map(|s| r[s].abs()).fold(0.0, f64::max);
    assert!(worst > 1e-2 * scale, "boundary-adjacent residual {worst} vs scale {scale}");
    assert!(matches!(harmonicity_check(&pa, &abar(), &vec![true; grid.sites()]), Err(Error::Domain(_))));
}

fn bump(grid: TorusGrid, center: f64, radius: f64) -> SiteField {
    let l = grid.l() as f64;
    SiteField::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|&c| ((c as f64 - center) / l).powi(2)).sum::<f64>() / radius.powi(2);
        if r2 < 1.0 {
            (1.0 - r2).powi(3)
        } else {
            0.0
        }
    })
}

#[test]
fn regularity_ratio_is_bounded() {
    let (a, qm) = (abar(), q());
    // smooth bump of fixed physical radius under mesh refinement
    let ratios: Vec<f64> = [8usize, 16, 32]
        .iter()
        .map(|&l| {
            let g = TorusGrid::new(3, l).unwrap();
            let c = (l / 2) as i64;
            regularity_bound_check(&bump(g, c as f64, 0.2), &[c, c, c], &a, &qm).unwrap()
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi < 1.05 * lo, "{ratios:?}");

    // single-site spike against the spectral sum h^{2d+2} Σ σ_Q/σ_ā²
    let mut prev = f64::INFINITY;
    for l in [8usize, 16] {
        let g = TorusGrid::new(3, l).unwrap();
        let c = (l / 2) as i64;
        let spike = SiteField::from_fn(g, |x| (x == [c, c, c]) as i32 as f64);
        let ratio = regularity_bound_check(&spike, &[c, c, c], &a, &qm).unwrap();
        let h = 1.0 / l as f64;
        let mut sum = 0.0;
        for k in 1..g.sites() {
            let theta: Vec<f64> = g.coords(k).iter().map(|&v| TAU * v as f64 / l as f64).collect();
            sum += symbol(&qm, &theta) / symbol(&a, &theta).powi(2);
        }
        // the spike has mean h^d ≠ 0; only its mean-zero part is paired
        let want = (h.powi(8) * sum).sqrt() / h.powf(1.5);
        assert!((ratio - want).abs() < 1e-10 * want, "{ratio} vs {want}");
        assert!(ratio < prev);
        prev = ratio;
    }

    // rescaled family g(x/ε)
    let g = TorusGrid::new(3, 32).unwrap();
    let fam: Vec<f64> = [1.0, 0.5, 0.25]
        .iter()
        .map(|&eps| regularity_bound_check(&bump(g, 16.0, 0.2 * eps), &[16, 16, 16], &a, &qm).unwrap())
        .collect();
    assert!(fam.iter().all(|r| r.is_finite() && *r <= fam[0] * (1.0 + 1e-9)), "{fam:?}");

    let wide = bump(g, 16.0, 0.3);
    assert!(matches!(regularity_bound_check(&wide, &[16, 16, 16], &a, &qm), Err(Error::Domain(_))));
}

#[test]
fn spec_validation_and_dump_header() {
    let grid = TorusGrid::new(3, 4).unwrap();
    assert!(matches!(GffSpec::new(SpdMatrix::identity(2), q(), grid, 0), Err(Error::Dimension(_))));
    assert!(matches!(GffSpec::new(abar(), SpdMatrix::diag(&[1.0, 0.0, 1.0]), grid, 0), Err(Error::Domain(_))));
    let spec = GffSpec::new(abar(), q(), grid, 0xABCD).unwrap();
    let s = sample_gff(&spec, 9);
    let b = field_bytes(&s);
    assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 4);
    assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 0xABCD);
    let last = f64::from_le_bytes(b[b.len() - 8..].try_into().unwrap());
    assert_eq!(last, *s.phi.values.last().unwrap());
}

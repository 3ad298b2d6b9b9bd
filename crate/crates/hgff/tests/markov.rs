use hgff::linalg::SpdMatrix;
use hgff::markov::*;
use hgff::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn bump(c: [f64; 3], r: f64) -> BumpFunction {
    BumpFunction::new(c.to_vec(), r).unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> SpdMatrix {
    // random rotation from Gram–Schmidt, spectrum drawn in [lo, hi]
    let mut v: Vec<[f64; 3]> = (0..3).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    for i in 0..3 {
        for j in 0..i {
            let p: f64 = (0..3).map(|k| v[i][k] * v[j][k]).sum();
            for k in 0..3 {
                v[i][k] -= p * v[j][k];
            }
        }
        let n = (0..3).map(|k| v[i][k] * v[i][k]).sum::<f64>().sqrt();
        v[i].iter_mut().for_each(|x| *x /= n);
    }
    let lam: Vec<f64> = (0..3).map(|_| rng.random_range(lo..hi)).collect();
    let mut m = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            m[i * 3 + j] = (0..3).map(|k| lam[k] * v[k][i] * v[k][j]).sum();
        }
    }
    for i in 0..3 {
        for j in 0..i {
            let s = 0.5 * (m[i * 3 + j] + m[j * 3 + i]);
            m[i * 3 + j] = s;
            m[j * 3 + i] = s;
        }
    }
    SpdMatrix::new(3, m).unwrap()
}

/// `Σᵢⱼ Aᵢⱼ ∂ᵢ∂ⱼ u` by centered differences.
fn l_a(u: &dyn Fn([f64; 3]) -> f64, a: &SpdMatrix, x: [f64; 3], h: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let at = |si: f64, sj: f64| {
                let mut y = x;
                y[i] += si * h;
                y[j] += sj * h;
                u(y)
            };
            acc += a.get(i, j) * (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    acc
}

#[test]
fn kernel_matches_differentiated_green_function() {
    // K = ∇·A∇(∇·A∇𝒢) with 𝒢 = 1/(4π|x|), by Richardson-extrapolated finite differences
    let g = |y: [f64; 3]| 1.0 / (4.0 * PI * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for a in [SpdMatrix::diag(&[2.0, 1.0, 1.0]), random_spd(&mut rng, 0.5, 2.0)] {
        for x in [[0.0, 0.0, 1.0], [0.6, -0.5, 0.7]] {
            let twice = |h: f64| {
                let inner = |y: [f64; 3]| l_a(&g, &a, y, h);
                l_a(&inner, &a, x, h)
            };
            let h = 0.01;
            let fd = (4.0 * twice(h / 2.0) - twice(h)) / 3.0;
            let exact = kernel_constant(3) * kernel_K(&x, &a).unwrap();
            // a wrong coefficient or constant would be off at O(1)
            assert!((fd - exact).abs() < 1e-4 * exact.abs(), "x={x:?}: {fd} vs {exact}");
        }
    }
}

#[test]
fn proportional_coefficients_give_local_form() {
    let q = SpdMatrix::new(3, vec![1.5, 0.4, -0.2, 0.4, 1.0, 0.3, -0.2, 0.3, 2.5]).unwrap();
    let a = q.scaled(3.0);
    let (f1, f2) = (bump([0.0, 0.0, -1.5], 0.5), bump([0.0, 0.0, 1.5], 0.5));
    let p = pairing_fourier(&f1, &f2, &a, &q).unwrap();
    let n1 = pairing_fourier(&f1, &f1, &a, &q).unwrap().value;
    let n2 = pairing_fourier(&f2, &f2, &a, &q).unwrap().value;
    assert!(p.value.abs() < 1e-8 * (n1 * n2).sqrt(), "{p:?}");
}

#[test]
fn diagonal_example_is_nonlocal_in_both_representations() {
    let a = SpdMatrix::diag(&[2.0, 1.0, 1.0]);
    let q = SpdMatrix::identity(3);
    let (f1, f2) = (bump([0.0, 0.0, -1.5], 0.5), bump([0.0, 0.0, 1.5], 0.5));
    let p = pairing_fourier(&f1, &f2, &a, &q).unwrap();
    assert!(p.value.abs() > 10.0 * p.error);
    let r = pairing_realspace(&f1, &f2, &a).unwrap();
    assert!((p.value - r.value).abs() < 1e-6 * p.value.abs(), "{p:?} {r:?}");
    let swapped = pairing_realspace(&f2, &f1, &a).unwrap();
    assert!((swapped.value - r.value).abs() < 1e-12 * r.value.abs());
}

#[test]
fn identity_kernel_pairs_to_zero() {
    let r = pairing_realspace(&bump([0.3, 0.0, 0.0], 0.4), &bump([-0.5, 0.2, 0.1], 0.3), &SpdMatrix::identity(3)).unwrap();
    assert!(r.value.abs() < 1e-12);
}

#[test]
fn fourier_and_realspace_agree_for_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let a = random_spd(&mut rng, 0.5, 2.0);
        let q = random_spd(&mut rng, 0.5, 2.0);
        let (f1, f2) = (bump([0.1, -0.9, 0.2], 0.4), bump([0.0, 0.5, -0.3], 0.5));
        let p = pairing_fourier(&f1, &f2, &a, &q).unwrap();
        let r = pairing_realspace_mapped(&f1, &f2, &a, &q).unwrap();
        assert!((p.value - r.value).abs() <= 3.0 * (p.error + r.error) + 1e-8 * p.value.abs(), "{p:?} {r:?}");
    }
}

#[test]
fn self_pairing_dominates_gradient_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = bump([0.2, 0.1, -0.3], 0.6);
    // ‖∇f‖² = r·4π∫₀¹ φ′(ρ)²ρ²dρ with φ′ = −8ρ(1−ρ²)³
    let grad2 = 0.6 * 4.0 * PI * {
        let n = 200;
        (0..n).map(|k| {
            let r = (k as f64 + 0.5) / n as f64;
            64.0 * r.powi(4) * (1.0 - r * r).powi(6) / n as f64
        }).sum::<f64>()
    };
    for _ in 0..3 {
        let a = random_spd(&mut rng, 0.5, 2.0);
        let q = random_spd(&mut rng, 0.5, 2.0);
        let la = a.eigenvalues()[0];
        let lq = q.eigenvalues()[2];
        let p = pairing_fourier(&f, &f, &a, &q).unwrap();
        assert!(p.value >= 0.999 * la * la / lq * grad2, "{} vs {}", p.value, la * la / lq * grad2);
    }
}

#[test]
fn witnesses_and_proportional_verdicts() {
    let u3 = HalfSpace::new(vec![0.0, 0.0, 1.0], 0.0).unwrap();
    let u1 = HalfSpace::new(vec![1.0, 0.0, 0.0], 0.0).unwrap();
    let q = SpdMatrix::diag(&[1.0, 2.0, 0.5]);
    assert!(matches!(
        nonlocality_witness(&q.scaled(3.0), &q, &u3, DEFAULT_PROPORTIONALITY_TOL).unwrap(),
        Locality::Proportional { .. }
    ));
    for (a, q, u) in [
        (SpdMatrix::diag(&[2.0, 1.0, 1.0]), SpdMatrix::identity(3), &u3),
        (SpdMatrix::identity(3), SpdMatrix::diag(&[1.0, 1.0, 4.0]), &u1),
    ] {
        match nonlocality_witness(&a, &q, u, DEFAULT_PROPORTIONALITY_TOL).unwrap() {
            Locality::Witness(w) => {
                assert!(w.pairing.value.abs() > 10.0 * w.pairing.error);
                assert!(u.signed_distance(&w.f1.center) < -w.f1.radius);
                assert!(u.signed_distance(&w.f2.center) > w.f2.radius);
            }
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn divisibility_sweeps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let c: f64 = rng.random_range(0.1..10.0);
        let r = quartic_divisibility(3, &SpdMatrix::identity(3).scaled(c).as_slice().to_vec(), 1e-10).unwrap();
        match r.verdict {
            Divisibility::MultipleOfIdentity { c: got, b } => {
                assert!((got - c).abs() < 1e-10 * c);
                for i in 0..3 {
                    for j in 0..3 {
                        let want = if i == j { c * c } else { 0.0 };
                        assert!((b[i * 3 + j] - want).abs() < 1e-10 * c * c);
                    }
                }
            }
            v => panic!("{c}: {v:?}"),
        }
        let a = random_spd(&mut rng, 0.5, 3.0);
        let r = quartic_divisibility(3, a.as_slice(), 1e-10).unwrap();
        assert_eq!(r.verdict, Divisibility::NotDivisible);
        assert!(r.consistent);
    }
}

#[test]
fn one_dimensional_pairings_need_one_dimensional_bumps() {
    assert!(matches!(counterexample_1d(&bump([0.0; 3], 1.0), &bump([0.0; 3], 1.0)), Err(Error::Dimension(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_even_and_homogeneous(x in prop::array::uniform3(-2.0f64..2.0), s in 0.1f64..10.0, seed in 0u64..1000) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-2);
        let a = random_spd(&mut ChaCha8Rng::seed_from_u64(seed), 0.3, 3.0);
        let k = kernel_K(&x, &a).unwrap();
        let sx: Vec<f64> = x.iter().map(|v| s * v).collect();
        let mx: Vec<f64> = x.iter().map(|v| -v).collect();
        // the bracket's terms are of size ~300·λ_max²/|x|⁵ and may cancel
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let terms = 300.0 * a.eigenvalues()[2].powi(2) * r.powi(-5);
        prop_assert!((kernel_K(&sx, &a).unwrap() - s.powi(-5) * k).abs() <= 1e-12 * terms * s.powi(-5));
        prop_assert_eq!(kernel_K(&mx, &a).unwrap(), k);
    }

    #[test]
    fn kernel_vanishes_exactly_for_divisible_quartics(c in 0.1f64..10.0, seed in 0u64..1000, spread in prop::bool::ANY) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = if spread { random_spd(&mut rng, 0.5, 3.0) } else { SpdMatrix::identity(3).scaled(c) };
        let local = matches!(quartic_divisibility(3, a.as_slice(), 1e-10).unwrap().verdict, Divisibility::MultipleOfIdentity { .. });
        let scale = a.eigenvalues()[2].powi(2);
        let max_k = (0..1000)
            .map(|_| {
                let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let n = x.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
                let x = [x[0] / n, x[1] / n, x[2] / n];
                kernel_K(&x, &a).unwrap().abs()
            })
            .fold(0.0, f64::max);
        prop_assert_eq!(local, max_k < 1e-12 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fourier_pairing_is_symmetric(seed in 0u64..1000, h in 0.9f64..1.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, 0.5, 2.0);
        let q = random_spd(&mut rng, 0.5, 2.0);
        let (f1, f2) = (bump([0.0, 0.0, -h], 0.4), bump([0.2, 0.1, h], 0.3));
        let p = pairing_fourier(&f1, &f2, &a, &q).unwrap();
        let r = pairing_fourier(&f2, &f1, &a, &q).unwrap();
        prop_assert!((p.value - r.value).abs() <= 2.0 * (p.error + r.error));
    }
}

use gauss_quad::legendre::GaussLegendre;
use hgff::green::*;
use hgff::Error;
use std::f64::consts::PI;

/// `(2π)^{−3}∫ cos(x·θ)/(λ + Σ4sin²(θᵢ/2))` by tensor Gauss–Legendre on the
/// octant `[0,π]³`, split into dyadic shells around the singular corner.
fn fourier_oracle(x: [i64; 3], lambda: f64, order: usize) -> f64 {
    let rule = GaussLegendre::new(std::num::NonZeroUsize::new(order).unwrap());
    let pairs = rule.as_node_weight_pairs();
    let mut total = 0.0;
    let mut h = PI;
    for _ in 0..40 {
        let half = h / 2.0;
        for corner in 1..8u32 {
            let lo: Vec<f64> = (0..3).map(|b| if corner >> b & 1 == 1 { half } else { 0.0 }).collect();
            let mut acc = 0.0;
            for &(n0, w0) in pairs {
                let t0 = lo[0] + half * (n0 + 1.0) / 2.0;
                for &(n1, w1) in pairs {
                    let t1 = lo[1] + half * (n1 + 1.0) / 2.0;
                    for &(n2, w2) in pairs {
                        let t2 = lo[2] + half * (n2 + 1.0) / 2.0;
                        let sigma = 4.0 * ((t0 / 2.0).sin().powi(2) + (t1 / 2.0).sin().powi(2) + (t2 / 2.0).sin().powi(2));
                        let num = (x[0] as f64 * t0).cos() * (x[1] as f64 * t1).cos() * (x[2] as f64 * t2).cos();
                        acc += w0 * w1 * w2 * num / (lambda + sigma);
                    }
                }
            }
            total += acc * (half / 2.0).powi(3);
        }
        h = half;
    }
    total / PI.powi(3)
}

#[test]
fn green_function_matches_fourier_quadrature() {
    for (x, lambda) in [([0, 0, 0], 0.0), ([1, 0, 0], 0.0), ([2, 1, 0], 0.0), ([0, 0, 0], 0.1), ([1, 1, 1], 1.0)] {
        let coarse = fourier_oracle(x, lambda, 12);
        let fine = fourier_oracle(x, lambda, 24);
        assert!((coarse - fine).abs() < 1e-11, "oracle not converged at {x:?}");
        let g = green_value(&x, lambda, 3, DEFAULT_ORDER).unwrap();
        assert!(g.error < 1e-12);
        assert!((g.value - fine).abs() < 1e-10, "{x:?} λ={lambda}: {} vs {fine}", g.value);
    }
}

#[test]
fn watson_value_at_origin() {
    let g = green_value(&[0, 0, 0], 0.0, 3, DEFAULT_ORDER).unwrap().value;
    assert!((g - 0.2527).abs() < 1e-4);
    assert!((g - 0.252731009859).abs() < 1e-11);
}

#[test]
fn errors_for_invalid_mass() {
    assert!(matches!(green_value(&[0, 0], 0.0, 2, 16), Err(Error::Divergence(2))));
    assert!(matches!(green_value(&[0, 0, 0], -0.1, 3, 16), Err(Error::Domain(_))));
    assert!(matches!(hessian_l2_sum(0, 1, 0.0, 1, 3), Err(Error::Domain(_))));
}

#[test]
fn symmetric_under_reflection_and_permutation() {
    let t = GreenTable::build(3, 0.0, 6, DEFAULT_ORDER).unwrap();
    for x in [[1i64, 2, 3], [0, 4, 5], [6, 1, 1]] {
        let v = t.get(&x).unwrap();
        for y in [[-x[0], x[1], x[2]], [x[1], x[0], x[2]], [x[2], -x[1], x[0]], [-x[0], -x[1], -x[2]]] {
            assert_eq!(t.get(&y).unwrap(), v);
        }
        let direct = green_value(&[-x[2], x[0], -x[1]], 0.0, 3, DEFAULT_ORDER).unwrap().value;
        assert!((direct - v).abs() < 1e-15);
    }
}

#[test]
fn table_solves_the_lattice_equation() {
    let t = GreenTable::build(3, 0.0, 8, DEFAULT_ORDER).unwrap();
    assert!(t.equation_residual(&[0, 0, 0]).unwrap().abs() < 1e-8);
    assert!(t.equation_residual(&[1, 0, 0]).unwrap().abs() < 1e-8);
    let massive = GreenTable::build(3, 0.3, 6, DEFAULT_ORDER).unwrap();
    for a in -5..=5 {
        for b in -5..=5 {
            for c in -5..=5 {
                assert!(massive.equation_residual(&[a, b, c]).unwrap().abs() < 1e-12);
            }
        }
    }
    assert!(massive.equation_residual(&[6, 0, 0]).is_err());
}

#[test]
fn decreasing_in_mass() {
    let mut prev = f64::INFINITY;
    for lambda in [0.0, 1e-3, 0.01, 0.1, 1.0, 10.0] {
        let g = green_value(&[0, 0, 0], lambda, 3, DEFAULT_ORDER).unwrap().value;
        assert!(g < prev);
        prev = g;
    }
    // G_λ(0) ≈ 1/(λ + 2d) for large λ
    let g = green_value(&[0, 0, 0], 1e4, 3, DEFAULT_ORDER).unwrap().value;
    assert!((g * (1e4 + 6.0) - 1.0).abs() < 1e-6);
}

#[test]
fn hessian_is_a_second_difference_of_green_values() {
    let g = |x: [i64; 3]| green_value(&x, 0.0, 3, DEFAULT_ORDER).unwrap().value;
    let h = grad_grad_green(0, 0, &[0, 0, 0], 0.0).unwrap();
    assert!((h - (2.0 * g([0, 0, 0]) - 2.0 * g([1, 0, 0]))).abs() < 1e-13);
    let h = grad_grad_green(0, 1, &[1, 0, 0], 0.0).unwrap();
    let want = g([2, -1, 0]) - g([2, 0, 0]) - g([1, -1, 0]) + g([1, 0, 0]);
    assert!((h - want).abs() < 1e-13);
    assert!(grad_grad_green(3, 0, &[0, 0, 0], 0.0).is_err());
}

#[test]
fn divergence_of_hessian_is_a_dipole() {
    // Σᵢ ∇ᵢ*ˣ Hᵢⱼ(x) = δ_{x,eⱼ} − δ_{x,0} for λ = 0
    let t = GreenTable::build(3, 0.0, 6, DEFAULT_ORDER).unwrap();
    for j in 0..3 {
        for x in [[0i64, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [2, -1, 3], [-1, 0, 0]] {
            let mut acc = 0.0;
            for i in 0..3 {
                let mut xm = x;
                xm[i] -= 1;
                acc += t.hessian(i, j, &xm).unwrap() - t.hessian(i, j, &x).unwrap();
            }
            let mut ej = [0i64; 3];
            ej[j] = 1;
            let want = (x == ej) as i32 as f64 - (x == [0, 0, 0]) as i32 as f64;
            assert!((acc - want).abs() < 1e-10, "j={j} x={x:?}: {acc}");
        }
    }
}

#[test]
fn off_diagonal_row_sums_vanish() {
    let t = GreenTable::build(3, 0.0, 17, DEFAULT_ORDER).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let s: Vec<f64> = [4, 8, 16].iter().map(|&r| t.hessian_row_sum(i, j, r).unwrap().abs()).collect();
            assert!(s[1] < s[0] && s[2] < s[1], "({i},{j}): {s:?}");
            // R^{1−d} decay
            assert!(s[2] < 0.5 * s[1], "({i},{j}): {s:?}");
        }
    }
    assert!(t.hessian_row_sum(0, 1, 17).is_err());
}

#[test]
fn hessian_l2_sums_are_positive_stable_and_symmetric() {
    let t = GreenTable::build(3, 0.0, 17, DEFAULT_ORDER).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let s = t.hessian_l2_sum(i, j, 16).unwrap();
            assert!(s.value > 0.0 && s.tail >= 0.0);
            let sw = t.hessian_l2_sum(j, i, 16).unwrap();
            assert!((s.value - sw.value).abs() < 1e-14 * s.value);
            let p: Vec<f64> = [4, 8, 16].iter().map(|&r| t.hessian_partial_sum(i, j, r).unwrap()).collect();
            let rel8 = (p[1] - p[0]) / p[1];
            let rel16 = (p[2] - p[1]) / p[2];
            // remainder ~ R^{−d}: doubling R shrinks the increment about eightfold
            assert!(rel16 < rel8 / 4.0, "({i},{j}): {rel8} {rel16}");
        }
    }
}

#[test]
fn heavy_mass_localizes_hessian_sum() {
    let t = GreenTable::build(3, 100.0, 9, DEFAULT_ORDER).unwrap();
    for (i, j) in [(0, 0), (0, 1)] {
        let s = t.hessian_l2_sum(i, j, 8).unwrap();
        let near = t.hessian_partial_sum(i, j, 1).unwrap();
        assert!((s.value - near).abs() < 1e-3 * s.value);
    }
}

#[test]
fn triple_differences_commute_and_decay() {
    let t = GreenTable::build(3, 1.0, 4, DEFAULT_ORDER).unwrap();
    for x in [[1i64, 0, 0], [0, 1, 0], [0, 0, -1]] {
        for (i, j, k) in [(0, 1, 2), (0, 0, 1), (2, 2, 2)] {
            let v = t.triple_difference(i, j, k, &x).unwrap();
            assert!(v.is_finite());
            for (a, b, c) in [(j, i, k), (k, j, i), (i, k, j)] {
                assert!((t.triple_difference(a, b, c, &x).unwrap() - v).abs() < 1e-15);
            }
        }
    }
    let report = triple_grad_decay_check(&[0.0, 0.01, 0.1, 1.0], 16).unwrap();
    assert!(report.worst_exponent <= -4.0 + 0.3, "{report:?}");
    // one constant serves every mass: screening only shrinks the massive ones
    assert!(report.max_constant <= 2.0 * report.fits[0].constant, "{report:?}");
    assert!(report.fits.iter().all(|f| f.exponent <= -3.7));
    assert!(matches!(triple_grad_decay_check(&[0.0], 3), Err(Error::Fit(_))));
}

//! The fluctuation tensor `Q_ξ`: Hermite and Mehler machinery for the
//! Ornstein–Uhlenbeck resolvent `(1 + 𝓛)⁻¹`, the Monte Carlo estimator, and
//! the small-contrast coefficients `c₀`, `c₁`, `c₂`.

pub mod hermite;
pub mod mehler;
pub mod qtensor;

pub use hermite::{gaussian_expectation, resolvent_1d_pair, resolvent_two_edge_pair, HermiteSeries};
pub use mehler::{mehler_nodes, resolvent_mc, McEstimate, MehlerNode, MehlerParams};
pub use qtensor::{q_tensor_grid, q_tensor_mc, CorrectorMethod, PolyFit, QEstimate, QMeta, QParams, QSamples};

use crate::corrector::Profile;
use crate::error::{Error, Result};
use crate::green::{GreenTable, HessianSum};
use crate::par::*;
use crate::rng::NoiseKey;
use hermite::{hermite_values, TAIL_TOL};
use qtensor::{StarSolver, Q_ENV_STREAM, Q_FRESH_STREAM};
use serde::Serialize;

/// Hermite expansions of `b`, `b′` and `b·b′` for one profile.
#[derive(Clone, Debug)]
pub struct ProfileSeries {
    pub b: HermiteSeries,
    pub db: HermiteSeries,
    pub b_db: HermiteSeries,
}

impl ProfileSeries {
    pub fn new(profile: Profile, degree: usize) -> Result<Self> {
        Ok(Self {
            b: HermiteSeries::from_fn(|z| profile.b(z), degree, TAIL_TOL)?,
            db: HermiteSeries::from_fn(|z| profile.db(z), degree, TAIL_TOL)?,
            b_db: HermiteSeries::from_fn(|z| profile.b(z) * profile.db(z), degree, TAIL_TOL)?,
        })
    }
}

/// `⟨b(ζ)²⟩`.
pub fn second_moment(profile: Profile) -> f64 {
    gaussian_expectation(|z| profile.b(z).powi(2))
}

fn check_xi(xi: &[f64], d: usize) -> Result<()> {
    if xi.len() != d {
        return Err(Error::Dimension(format!("xi has {} components, d = {d}", xi.len())));
    }
    Ok(())
}

/// `c_{ξ,0} = diag(ξᵢ²⟨b²⟩)`, row-major.
pub fn c0(profile: Profile, xi: &[f64]) -> Vec<f64> {
    let d = xi.len();
    let m = second_moment(profile);
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        out[i * d + i] = xi[i] * xi[i] * m;
    }
    out
}

/// Number of edge placements producing each of the two `c₂` contractions.
///
/// The two first-order factors can sit on the left pair, the right pair, or
/// straddle the resolvent in two mirror-image ways; the mirror images are
/// equal because `S` is symmetric in `(i, j)` and the resolvent is self-adjoint.
pub const C2_MULTIPLICITY: f64 = 2.0;

#[derive(Clone, Debug, Serialize)]
pub struct C2Report {
    pub value: f64,
    /// `Σ_y |∇∇ᵢG(eⱼ, y)|²` with its truncation data.
    pub hessian_sum: HessianSum,
    /// `⟨b²⟩·⟨b′(1 + 𝓛)⁻¹b′⟩`.
    pub single_edge: f64,
    /// `⟨b b′(1 + 𝓛)⁻¹b′ b⟩` on two distinct edges.
    pub two_edge: f64,
    pub multiplicity: f64,
    /// Size of the extrapolated Hessian tail relative to the total.
    pub truncation: f64,
}

/// Off-diagonal fourth-order coefficient of `Q_ξ`.
pub fn c2_offdiag(profile: Profile, xi: &[f64], i: usize, j: usize, green: &GreenTable, radius: usize) -> Result<C2Report> {
    c2_offdiag_with_degree(profile, xi, i, j, green, radius, Profile::HERMITE_DEGREE)
}

pub fn c2_offdiag_with_degree(
    profile: Profile,
    xi: &[f64],
    i: usize,
    j: usize,
    green: &GreenTable,
    radius: usize,
    degree: usize,
) -> Result<C2Report> {
    let d = green.d();
    check_xi(xi, d)?;
    if i == j {
        return Err(Error::Domain("the fourth-order formula is derived for i != j".into()));
    }
    if i >= d || j >= d {
        return Err(Error::Domain(format!("indices ({i}, {j}) out of range for d = {d}")));
    }
    let series = ProfileSeries::new(profile, degree)?;
    let hessian_sum = green.hessian_l2_sum(i, j, radius)?;
    let single_edge = second_moment(profile) * resolvent_1d_pair(&series.db, &series.db);
    let two_edge = resolvent_two_edge_pair(&series.b, &series.db);
    let value = C2_MULTIPLICITY * xi[i] * xi[j] * hessian_sum.value * (single_edge + two_edge);
    Ok(C2Report {
        value,
        truncation: (hessian_sum.tail / hessian_sum.value).abs(),
        hessian_sum,
        single_edge,
        two_edge,
        multiplicity: C2_MULTIPLICITY,
    })
}

/// τ grid on which [`c1_check`] fits by default.
pub const C1_TAUS: [f64; 5] = [0.02, 0.03, 0.04, 0.05, 0.06];

/// Cubic fit of `[Q]ᵢⱼ(τ)/τ²`; the linear coefficient must vanish for `i ≠ j`.
pub fn c1_check(params: &QParams, taus: &[f64], i: usize, j: usize) -> Result<PolyFit> {
    if i == j {
        return Err(Error::Domain("the vanishing of c1 is stated for i != j".into()));
    }
    q_tensor_grid(params, taus)?.fit(i, j, 3)
}

/// Largest `n₁ + n₂ + n₃ + n₄` accepted by [`q_term`].
pub const MAX_TERM_ORDER: usize = 8;

/// `Q^λ_{n₁n₂n₃n₄}(i, j, ξ) = Σ_k ⟨(𝒫ⁿ¹eᵢ)_k(𝒫ⁿ²ξ)_k b′_k(1+𝓛)⁻¹b′_k(𝒫ⁿ³eⱼ)_k(𝒫ⁿ⁴ξ)_k⟩`
/// with `𝒫 = −∇(λ − Δ)⁻¹∇*b`, averaged over `params.n_env` environments.
///
/// The factor with the smaller order goes to the right of the resolvent. A
/// right factor of order 0 or 1 is a function of at most two edges per term
/// and is resolved exactly through Hermite series; higher orders use the
/// Mehler estimator with `params.mehler`.
pub fn q_term(orders: [usize; 4], i: usize, j: usize, params: &QParams) -> Result<McEstimate> {
    Ok(McEstimate::from_samples(&q_term_samples(orders, i, j, params)?))
}

fn q_term_samples(orders: [usize; 4], i: usize, j: usize, params: &QParams) -> Result<Vec<f64>> {
    let grid = params.grid;
    let d = grid.d();
    check_xi(&params.xi, d)?;
    if i >= d || j >= d {
        return Err(Error::Domain(format!("indices ({i}, {j}) out of range for d = {d}")));
    }
    let total: usize = orders.iter().sum();
    if total > MAX_TERM_ORDER {
        return Err(Error::Unsupported(format!("total order {total} exceeds {MAX_TERM_ORDER}")));
    }
    if params.n_env < 2 {
        return Err(Error::Domain(format!("need at least 2 environments, got {}", params.n_env)));
    }
    // Q_{n₁n₂n₃n₄}(i, j) = Q_{n₃n₄n₁n₂}(j, i) by self-adjointness of the resolvent
    let (orders, i, j) = if orders[2] + orders[3] > orders[0] + orders[1] {
        ([orders[2], orders[3], orders[0], orders[1]], j, i)
    } else {
        (orders, i, j)
    };
    let [n1, n2, n3, n4] = orders;
    let top = n1.max(n2).max(n3).max(n4);
    let (ns, ne) = (grid.sites(), grid.edges());
    let solver = StarSolver::new(grid, params.profile, params.lambda, CorrectorMethod::Neumann { order: top.max(1) });
    let series = ProfileSeries::new(params.profile, Profile::HERMITE_DEGREE)?;
    let xi = &params.xi;
    let profile = params.profile;
    // (𝒫ⁿe_m)(ε_k) → value of (𝒫ⁿη)(ε_k)
    let apply = |c: &Vec<Vec<Vec<f64>>>, eta: &[f64], k: usize, n: usize| -> f64 { (0..d).map(|m| eta[m] * c[m][k][n]).sum() };
    let unit = |m: usize| -> Vec<f64> { (0..d).map(|r| if r == m { 1.0 } else { 0.0 }).collect() };
    let (ei, ej) = (unit(i), unit(j));
    let nodes = mehler_nodes(params.mehler.nodes)?;

    (0..params.n_env)
        .into_par_iter()
        .map(|env| -> Result<f64> {
            let zeta = NoiseKey::derive(params.seed, &[Q_ENV_STREAM, env as u64]).normals(ne);
            let b: Vec<f64> = zeta.iter().map(|&z| profile.b(z)).collect();
            let c = solver.neumann_star(&b, top.max(1));
            let left: Vec<f64> =
                (0..d).map(|k| apply(&c, &ei, k, n1) * apply(&c, xi, k, n2) * profile.db(zeta[k * ns])).collect();
            let right: Vec<f64> = match n3 + n4 {
                0 => (0..d).map(|k| ej[k] * xi[k] * resolved_db(&series, zeta[k * ns])).collect(),
                1 => {
                    let (alpha, eta): (Vec<f64>, &[f64]) =
                        if n3 == 1 { (xi.clone(), &ej) } else { (ej.clone(), xi.as_slice()) };
                    resolved_first_order(&series, &solver, &zeta, eta)
                        .into_iter()
                        .enumerate()
                        .map(|(k, v)| alpha[k] * v)
                        .collect()
                }
                _ => {
                    let mut acc = vec![0.0; d];
                    let mut fresh = vec![0.0; ne];
                    let mut mixed = vec![0.0; ne];
                    let pairs = params.mehler.pairs;
                    for (t, node) in nodes.iter().enumerate() {
                        for r in 0..pairs {
                            NoiseKey::derive(params.seed, &[Q_FRESH_STREAM, env as u64, t as u64, r as u64])
                                .fill_normals(0, &mut fresh);
                            for sign in [1.0, -1.0] {
                                node.mix(&zeta, &fresh, sign, &mut mixed);
                                let bt: Vec<f64> = mixed.iter().map(|&z| profile.b(z)).collect();
                                let ct = solver.neumann_star(&bt, top.max(1));
                                let w = node.weight / (2.0 * pairs as f64);
                                for (k, a) in acc.iter_mut().enumerate() {
                                    *a += w * apply(&ct, &ej, k, n3) * apply(&ct, xi, k, n4) * profile.db(mixed[k * ns]);
                                }
                            }
                        }
                    }
                    acc
                }
            };
            Ok(left.iter().zip(&right).map(|(l, r)| l * r).sum())
        })
        .collect()
}

/// `((1 + 𝓛)⁻¹b′)(z) = Σₙ b′ₙHₙ(z)/(1 + n)`.
fn resolved_db(series: &ProfileSeries, z: f64) -> f64 {
    series.db.resolvent().eval(z)
}

/// `(1 + 𝓛)⁻¹[b′(ζ_{ε_k})·(𝒫η)(ε_k)](ζ)` for every `k`.
///
/// `(𝒫η)(ε_k) = −Σ_e κ_k(e)η_e b(ζ_e)` splits into two-edge terms `b(ζ_e)b′(ζ_{ε_k})`,
/// resolved as `Σ_{m,n} b_m b′_n H_m(ζ_e)H_n(ζ_{ε_k})/(1+m+n)`, and the
/// single-edge term `e = ε_k`.
fn resolved_first_order(series: &ProfileSeries, solver: &StarSolver, zeta: &[f64], eta: &[f64]) -> Vec<f64> {
    let grid = solver.spectral().grid();
    let (d, ns) = (grid.d(), grid.sites());
    let nb = series.b.coeffs.len();
    let rows = solver.kernel_rows();
    let mut w = vec![vec![0.0; nb]; d];
    let mut h = Vec::with_capacity(nb);
    for (e, &z) in zeta.iter().enumerate() {
        let dir = e / ns;
        if eta[dir] == 0.0 {
            continue;
        }
        hermite_values(z, nb - 1, &mut h);
        for k in 0..d {
            if e == k * ns {
                continue;
            }
            let c = rows[k][e] * eta[dir];
            for (acc, hm) in w[k].iter_mut().zip(&h) {
                *acc += c * hm;
            }
        }
    }
    let self_term = series.b_db.resolvent();
    (0..d)
        .map(|k| {
            let zk = zeta[k * ns];
            let mut hk = Vec::new();
            hermite_values(zk, series.db.coeffs.len() - 1, &mut hk);
            let mut two_edge = 0.0;
            for (m, bm) in series.b.coeffs.iter().enumerate() {
                for (n, dn) in series.db.coeffs.iter().enumerate() {
                    two_edge += bm * dn * w[k][m] * hk[n] / (1.0 + (m + n) as f64);
                }
            }
            -(two_edge + rows[k][k * ns] * eta[k] * self_term.eval(zk))
        })
        .collect()
}

/// Richardson extrapolation of [`q_term`] to `λ = 0` from `λ ∈ {16, 8, 4}/L²`,
/// assuming an expansion in integer powers of λ; samples share environments.
pub fn q_term_limit(orders: [usize; 4], i: usize, j: usize, params: &QParams) -> Result<McEstimate> {
    let l2 = (params.grid.l() * params.grid.l()) as f64;
    let weights = [(16.0, 1.0 / 3.0), (8.0, -2.0), (4.0, 8.0 / 3.0)];
    let mut combined = vec![0.0; params.n_env];
    for (scale, w) in weights {
        let p = QParams { lambda: scale / l2, ..params.clone() };
        for (c, s) in combined.iter_mut().zip(q_term_samples(orders, i, j, &p)?) {
            *c += w * s;
        }
    }
    Ok(McEstimate::from_samples(&combined))
}

/// `c_{ξ,l}` for entry `(i, j)`: the sum of `q_term` over `n₁ + n₂ + n₃ + n₄ = l`.
pub fn c_coefficient(l: usize, i: usize, j: usize, params: &QParams) -> Result<McEstimate> {
    let mut samples = vec![0.0; params.n_env];
    for n1 in 0..=l {
        for n2 in 0..=l - n1 {
            for n3 in 0..=l - n1 - n2 {
                let n4 = l - n1 - n2 - n3;
                for (acc, s) in samples.iter_mut().zip(q_term_samples([n1, n2, n3, n4], i, j, params)?) {
                    *acc += s;
                }
            }
        }
    }
    Ok(McEstimate::from_samples(&samples))
}

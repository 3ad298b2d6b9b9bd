//! `(1 + 𝓛)⁻¹F = ∫₀^∞ e^{−t} P_t F dt` with the Ornstein–Uhlenbeck semigroup
//! `P_tF(ζ) = E′[F(e^{−t}ζ + √(1 − e^{−2t}) ζ′)]`: Gauss–Laguerre in `t`,
//! antithetic pairs `ζ′, −ζ′` for the inner expectation.

use crate::error::{Error, Result};
use crate::rng::NoiseKey;
use gauss_quad::laguerre::GaussLaguerre;
use gauss_quad::FiniteAboveNegOneF64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MehlerParams {
    /// Gauss–Laguerre nodes in `t`.
    pub nodes: usize,
    /// Antithetic pairs per node.
    pub pairs: usize,
}

impl Default for MehlerParams {
    fn default() -> Self {
        Self { nodes: 16, pairs: 1 }
    }
}

/// One `t` node: weight of `∫e^{−t}·dt`, and the mixing coefficients `e^{−t}`, `√(1 − e^{−2t})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MehlerNode {
    pub weight: f64,
    pub decay: f64,
    pub spread: f64,
}

impl MehlerNode {
    /// `e^{−t}ζ + s√(1 − e^{−2t})ζ′` written into `out`.
    pub fn mix(&self, zeta: &[f64], fresh: &[f64], sign: f64, out: &mut [f64]) {
        let s = sign * self.spread;
        for ((o, z), w) in out.iter_mut().zip(zeta).zip(fresh) {
            *o = self.decay * z + s * w;
        }
    }
}

pub fn mehler_nodes(n: usize) -> Result<Vec<MehlerNode>> {
    if n == 0 {
        return Err(Error::Domain("Mehler quadrature needs at least one node".into()));
    }
    let rule = GaussLaguerre::new(std::num::NonZeroUsize::new(n).unwrap(), FiniteAboveNegOneF64::new(0.0).unwrap());
    Ok(rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(t, w)| {
            let decay = (-t).exp();
            MehlerNode { weight: w, decay, spread: (-(-2.0 * t).exp_m1()).sqrt() }
        })
        .collect())
}

/// Monte Carlo value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// Mean and standard error of i.i.d. samples (`stderr` is NaN for fewer than two).
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let value = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self { value, stderr: f64::NAN };
        }
        let var = samples.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1.0);
        Self { value, stderr: (var / n).sqrt() }
    }
}

/// Estimates `(1 + 𝓛)⁻¹F(ζ)`.
///
/// Replica `r` uses one fresh Gaussian vector per node from stream
/// `(key, node, r)`; the replicas are the batches behind the standard error.
pub fn resolvent_mc(f: impl Fn(&[f64]) -> f64, zeta: &[f64], params: MehlerParams, key: NoiseKey) -> Result<McEstimate> {
    if params.pairs == 0 {
        return Err(Error::Domain("resolvent Monte Carlo needs at least one inner sample".into()));
    }
    let nodes = mehler_nodes(params.nodes)?;
    let mut fresh = vec![0.0; zeta.len()];
    let mut mixed = vec![0.0; zeta.len()];
    let batches: Vec<f64> = (0..params.pairs)
        .map(|r| {
            let mut acc = 0.0;
            for (t, node) in nodes.iter().enumerate() {
                NoiseKey::derive(key.seed, &[key.stream, t as u64, r as u64]).fill_normals(0, &mut fresh);
                let mut pair = 0.0;
                for sign in [1.0, -1.0] {
                    node.mix(zeta, &fresh, sign, &mut mixed);
                    pair += f(&mixed);
                }
                acc += node.weight * 0.5 * pair;
            }
            acc
        })
        .collect();
    Ok(McEstimate::from_samples(&batches))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_fixed() {
        let est = resolvent_mc(|_| 2.5, &[0.3, -1.0], MehlerParams { nodes: 16, pairs: 3 }, NoiseKey::new(1, 2)).unwrap();
        assert!((est.value - 2.5).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn first_chaos_is_exact_under_antithetics() {
        let z = [0.7];
        let est = resolvent_mc(|x| x[0], &z, MehlerParams { nodes: 16, pairs: 2 }, NoiseKey::new(4, 0)).unwrap();
        assert!((est.value - 0.35).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn zero_inner_samples_rejected() {
        assert!(resolvent_mc(|x| x[0], &[0.0], MehlerParams { nodes: 16, pairs: 0 }, NoiseKey::new(0, 0)).is_err());
    }
}

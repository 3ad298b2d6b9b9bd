//! Small dense symmetric matrices (ā, Q, A, B live here).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Symmetric positive-definite d×d matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::symmetric(d, data)?;
        let lmin = m.eigenvalues()[0];
        if !(lmin > 0.0) {
            return Err(Error::Domain(format!("matrix is not positive definite (smallest eigenvalue {lmin:.3e})")));
        }
        Ok(m)
    }

    /// Symmetric but not necessarily definite; used for fitted or intermediate matrices.
    pub fn symmetric(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::Dimension(format!("{} entries for a {d}x{d} matrix", data.len())));
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (data[i * d + j] - data[j * d + i]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!("matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { d, data })
    }

    pub fn identity(d: usize) -> Self {
        Self::diag(&vec![1.0; d])
    }

    pub fn diag(v: &[f64]) -> Self {
        let d = v.len();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = v[i];
        }
        Self { d, data }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { d: self.d, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        let d = self.d;
        (0..d).map(|i| x[i] * (0..d).map(|j| self.data[i * d + j] * x[j]).sum::<f64>()).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d).map(|i| (0..d).map(|j| self.data[i * d + j] * x[j]).sum()).collect()
    }

    pub fn matmul(&self, other: &SpdMatrix) -> SpdMatrix {
        let d = self.d;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = (0..d).map(|k| self.get(i, k) * other.get(k, j)).sum();
            }
        }
        // products of commuting symmetric matrices stay symmetric; symmetrize roundoff
        let mut m = SpdMatrix { d, data };
        m.symmetrize();
        m
    }

    /// `M·self·M` for symmetric `M`; symmetric whether or not the factors commute.
    pub fn congruence(&self, m: &SpdMatrix) -> SpdMatrix {
        let a = DMatrix::from_row_slice(self.d, self.d, &self.data);
        let mm = DMatrix::from_row_slice(m.d, m.d, &m.data);
        let p = &mm * a * &mm;
        let mut out = SpdMatrix { d: self.d, data: p.transpose().as_slice().to_vec() };
        out.symmetrize();
        out
    }

    fn symmetrize(&mut self) {
        let d = self.d;
        for i in 0..d {
            for j in 0..i {
                let v = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = v;
                self.data[j * d + i] = v;
            }
        }
    }

    fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        DMatrix::from_row_slice(self.d, self.d, &self.data).symmetric_eigen()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigen().eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Applies `f` to the spectrum: `V f(Λ) Vᵗ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SpdMatrix {
        let e = self.eigen();
        let lam = DMatrix::from_diagonal(&e.eigenvalues.map(f));
        let m = &e.eigenvectors * lam * e.eigenvectors.transpose();
        let mut out = SpdMatrix { d: self.d, data: m.transpose().as_slice().to_vec() };
        out.symmetrize();
        out
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.map_spectrum(|l| l.max(0.0).sqrt())
    }

    pub fn inverse(&self) -> SpdMatrix {
        self.map_spectrum(|l| 1.0 / l)
    }

    pub fn determinant(&self) -> f64 {
        self.eigenvalues().iter().product()
    }

    /// Frobenius distance.
    pub fn distance(&self, other: &SpdMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = SpdMatrix::new(3, vec![2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]).unwrap();
        let r = m.sqrt();
        assert!(r.matmul(&r).distance(&m) < 1e-12);
        assert!(m.matmul(&m.inverse()).distance(&SpdMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn congruence_of_noncommuting_pair() {
        let a = SpdMatrix::diag(&[1.0, 2.0]);
        let m = SpdMatrix::new(2, vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        // [[1,1],[1,2]]·diag(1,2)·[[1,1],[1,2]] = [[3,5],[5,9]]
        assert_eq!(a.congruence(&m).as_slice(), &[3.0, 5.0, 5.0, 9.0]);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        assert!(SpdMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(SpdMatrix::new(2, vec![1.0, 0.5, 0.0, 1.0]).is_err());
    }
}

//! Forecast-error distributions: single Gaussian, EM-fitted mixtures and
//! genetic EM with MDL model selection, plus sampling and quantiles.

mod dist;
mod em;
mod gaem;

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use dist::{
    eta_ratio, mixture_cdf, mixture_quantile, moment_match, normal_quantile, sample, ETA_BINS, QUANTILE_TOL,
};
pub use em::{em_fit, em_fit_from, log_likelihood, mdl_score, EMConfig};
pub use gaem::{gaem_fit, write_fit_report, GAEMConfig, GaemGeneration, GaemOutcome};

#[derive(Debug, thiserror::Error)]
pub enum UncertaintyError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Gaussian mixture over `q`-dimensional samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GMMModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// one `q x q` matrix per component, row-major nested
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl GMMModel {
    pub fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Self {
        Self { k: 1, weights: vec![1.0], means: vec![mean], covariances: vec![cov] }
    }

    /// 1-D mixture from `(weight, mean, variance)` triples.
    pub fn univariate(parts: &[(f64, f64, f64)]) -> Self {
        Self {
            k: parts.len(),
            weights: parts.iter().map(|p| p.0).collect(),
            means: parts.iter().map(|p| vec![p.1]).collect(),
            covariances: parts.iter().map(|p| vec![vec![p.2]]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let q = self.dim();
        if self.k == 0 || q == 0 {
            return Err(UncertaintyError::Model("empty model".into()));
        }
        if self.weights.len() != self.k || self.means.len() != self.k || self.covariances.len() != self.k {
            return Err(UncertaintyError::Model(format!("k = {} but component arrays differ in length", self.k)));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(UncertaintyError::Model("weights must be finite and non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(UncertaintyError::Model(format!("weights sum to {total}")));
        }
        for (n, (m, c)) in self.means.iter().zip(&self.covariances).enumerate() {
            if m.len() != q || c.len() != q || c.iter().any(|r| r.len() != q) {
                return Err(UncertaintyError::Model(format!("component {n} has inconsistent dimension")));
            }
            if m.iter().chain(c.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(UncertaintyError::Model(format!("component {n} has non-finite entries")));
            }
            let mat = to_matrix(c);
            if (&mat - mat.transpose()).amax() > 1e-9 * mat.amax().max(1.0) {
                return Err(UncertaintyError::Model(format!("covariance {n} is not symmetric")));
            }
            if SymmetricEigen::new(mat).eigenvalues.min() <= 0.0 {
                return Err(UncertaintyError::Model(format!("covariance {n} is not positive definite")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, UncertaintyError> {
        let m: Self = serde_json::from_str(text).map_err(|e| UncertaintyError::Model(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, UncertaintyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UncertaintyError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), UncertaintyError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| UncertaintyError::Io { path: path.display().to_string(), msg: e.to_string() })
    }
}

fn to_matrix(c: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(c.len(), c.len(), |i, j| c[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Symmetrize, then raise every eigenvalue to at least `floor`.
fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(floor));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(floor)));
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&vals) * v.transpose();
    (&r + r.transpose()) * 0.5
}

/// Per-component data needed for log densities.
#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: Vec<f64>,
    /// inverse of the lower Cholesky factor, row-major `q x q`
    inv_chol: Vec<f64>,
    log_norm: f64,
}

impl Component {
    fn prepare(m: &GMMModel) -> Result<Vec<Component>, UncertaintyError> {
        let q = m.dim();
        (0..m.k)
            .map(|n| {
                if q == 1 {
                    let v = m.covariances[n][0][0];
                    if !(v > 0.0) {
                        return Err(UncertaintyError::Model(format!("covariance {n} is not positive definite")));
                    }
                    return Ok(Component {
                        log_weight: m.weights[n].ln(),
                        mean: m.means[n].clone(),
                        inv_chol: vec![1.0 / v.sqrt()],
                        log_norm: -0.5 * ((2.0 * std::f64::consts::PI).ln() + v.ln()),
                    });
                }
                let c = to_matrix(&m.covariances[n]);
                let chol = c
                    .cholesky()
                    .ok_or_else(|| UncertaintyError::Model(format!("covariance {n} is not positive definite")))?;
                let l = chol.l();
                let log_det: f64 = 2.0 * (0..q).map(|i| l[(i, i)].ln()).sum::<f64>();
                let inv =
                    l.try_inverse().ok_or_else(|| UncertaintyError::Model(format!("covariance {n} is singular")))?;
                Ok(Component {
                    log_weight: m.weights[n].ln(),
                    mean: m.means[n].clone(),
                    inv_chol: (0..q * q).map(|t| inv[(t / q, t % q)]).collect(),
                    log_norm: -0.5 * (q as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
                })
            })
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let q = self.mean.len();
        let mut quad = 0.0;
        for i in 0..q {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.inv_chol[i * q + j] * (x[j] - self.mean[j]);
            }
            quad += s * s;
        }
        self.log_norm - 0.5 * quad
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_data(data: &[Vec<f64>]) -> Result<usize, UncertaintyError> {
    let q = data.first().map(Vec::len).unwrap_or(0);
    if data.is_empty() || q == 0 {
        return Err(UncertaintyError::Input("no samples".into()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != q {
            return Err(UncertaintyError::Input(format!("sample {i} has dimension {} instead of {q}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(UncertaintyError::Input(format!("sample {i} is not finite")));
        }
    }
    Ok(q)
}

/// Sample mean and biased sample covariance.
fn moments(data: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let q = data[0].len();
    let m = data.len() as f64;
    let mut mean = vec![0.0; q];
    for x in data {
        for d in 0..q {
            mean[d] += x[d];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut cov = DMatrix::zeros(q, q);
    for x in data {
        for i in 0..q {
            for j in 0..q {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    (mean, cov / m)
}

/// Wraps scalar samples as 1-D vectors.
pub fn as_samples(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_models() {
        assert!(GMMModel::univariate(&[(0.5, 0.0, 1.0), (0.5, 1.0, 2.0)]).validate().is_ok());
        assert!(GMMModel::univariate(&[(0.6, 0.0, 1.0), (0.5, 1.0, 2.0)]).validate().is_err());
        assert!(GMMModel::univariate(&[(1.0, 0.0, -1.0)]).validate().is_err());
        let mut m = GMMModel::univariate(&[(1.0, 0.0, 1.0)]);
        m.k = 2;
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_round_trip_uses_flat_field_names() {
        let m = GMMModel::gaussian(vec![0.0, 1.0], vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
        let text = m.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["k", "weights", "means", "covariances"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(GMMModel::from_json(&text).unwrap(), m);
    }

    #[test]
    fn eigen_floor_raises_small_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0]);
        let f = floor_eigenvalues(&m, 0.01);
        assert!(SymmetricEigen::new(f).eigenvalues.min() >= 0.01 - 1e-12);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_data, to_matrix, Component, GMMModel, UncertaintyError};
use crate::rng::SeedTree;

pub const ETA_BINS: usize = 100;
pub const QUANTILE_TOL: f64 = 1e-10;

fn require_1d(m: &GMMModel) -> Result<(), UncertaintyError> {
    m.validate()?;
    if m.dim() != 1 {
        return Err(UncertaintyError::Model(format!("expected a 1-D model, got dimension {}", m.dim())));
    }
    Ok(())
}

fn phi(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn cdf_unchecked(m: &GMMModel, x: f64) -> f64 {
    (0..m.k).map(|n| m.weights[n] * phi((x - m.means[n][0]) / m.covariances[n][0][0].sqrt())).sum()
}

pub fn mixture_cdf(m: &GMMModel, x: f64) -> Result<f64, UncertaintyError> {
    require_1d(m)?;
    Ok(cdf_unchecked(m, x))
}

/// Inverse of the 1-D mixture CDF by bisection.
pub fn mixture_quantile(m: &GMMModel, p: f64) -> Result<f64, UncertaintyError> {
    require_1d(m)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(UncertaintyError::Input(format!("probability must lie in (0, 1), got {p}")));
    }
    let sd = |n: usize| m.covariances[n][0][0].sqrt();
    let mut lo = (0..m.k).map(|n| m.means[n][0] - 40.0 * sd(n)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..m.k).map(|n| m.means[n][0] + 40.0 * sd(n)).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let c = cdf_unchecked(m, mid);
        if (c - p).abs() <= QUANTILE_TOL || mid == lo || mid == hi {
            return Ok(mid);
        }
        if c < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64, UncertaintyError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(UncertaintyError::Input(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// Mean and variance of a 1-D mixture.
pub fn moment_match(m: &GMMModel) -> Result<(f64, f64), UncertaintyError> {
    require_1d(m)?;
    let mean: f64 = (0..m.k).map(|n| m.weights[n] * m.means[n][0]).sum();
    let second: f64 = (0..m.k).map(|n| m.weights[n] * (m.covariances[n][0][0] + m.means[n][0].powi(2))).sum();
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// Draws `n` samples: a component by weight, then a Gaussian draw from it.
pub fn sample(m: &GMMModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, UncertaintyError> {
    m.validate()?;
    if n == 0 {
        return Err(UncertaintyError::Input("sample count must be at least 1".into()));
    }
    let q = m.dim();
    let chols: Vec<DMatrix<f64>> = m
        .covariances
        .iter()
        .map(|c| to_matrix(c).cholesky().map(|c| c.l()))
        .collect::<Option<_>>()
        .ok_or_else(|| UncertaintyError::Model("covariance is not positive definite".into()))?;
    let mut rng = SeedTree::new(seed).stream("gmm-sample");
    let mut out = Vec::with_capacity(n);
    let mut z = vec![0.0; q];
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = m.k - 1;
        for (i, w) in m.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        // skip past zero-weight tail components picked by round-off
        while m.weights[comp] == 0.0 && comp > 0 {
            comp -= 1;
        }
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let l = &chols[comp];
        out.push((0..q).map(|i| m.means[comp][i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>()).collect());
    }
    Ok(out)
}

/// Residual deviation of the fitted density against the data histogram, in
/// percent. Both envelopes are normalized to unit area over `bins`
/// equal-width bins spanning the data.
pub fn eta_ratio(m: &GMMModel, data: &[f64], bins: usize) -> Result<f64, UncertaintyError> {
    require_1d(m)?;
    if bins < 10 {
        return Err(UncertaintyError::Config(format!("eta needs at least 10 bins, got {bins}")));
    }
    if data.len() < 100 {
        return Err(UncertaintyError::Input(format!("eta needs at least 100 samples, got {}", data.len())));
    }
    let samples: Vec<Vec<f64>> = data.iter().map(|&v| vec![v]).collect();
    check_data(&samples)?;
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(UncertaintyError::Input("data has zero range".into()));
    }
    let w = (hi - lo) / bins as f64;
    let mut hist = vec![0.0; bins];
    for &v in data {
        let b = (((v - lo) / w) as usize).min(bins - 1);
        hist[b] += 1.0;
    }
    let comps = Component::prepare(m)?;
    let mut fit: Vec<f64> = (0..bins)
        .map(|b| {
            let x = [lo + (b as f64 + 0.5) * w];
            comps.iter().map(|c| (c.log_weight + c.log_density(&x)).exp()).sum()
        })
        .collect();
    let area_h: f64 = hist.iter().sum::<f64>() * w;
    let area_f: f64 = fit.iter().sum::<f64>() * w;
    hist.iter_mut().for_each(|h| *h /= area_h);
    if area_f > 0.0 {
        fit.iter_mut().for_each(|f| *f /= area_f);
    }
    let num: f64 = fit.iter().zip(&hist).map(|(f, h)| (f - h).powi(2)).sum();
    let den: f64 = hist.iter().map(|h| h * h).sum();
    Ok(100.0 * num / den)
}

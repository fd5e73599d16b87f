use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_data, floor_eigenvalues, from_matrix, log_sum_exp, moments, Component, GMMModel, UncertaintyError};
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EMConfig {
    pub max_iter: usize,
    /// stop once the log-likelihood moves by at most this much
    pub loglik_tol: f64,
    /// eigenvalue floor as a fraction of the data variance
    pub covariance_floor: f64,
    pub seed: u64,
}

impl Default for EMConfig {
    fn default() -> Self {
        Self { max_iter: 1_000, loglik_tol: 1e-8, covariance_floor: 1e-6, seed: 0 }
    }
}

impl EMConfig {
    fn validate(&self) -> Result<(), UncertaintyError> {
        if !(self.loglik_tol > 0.0 && self.covariance_floor > 0.0) || self.max_iter == 0 {
            return Err(UncertaintyError::Config("EM tolerances and max_iter must be positive".into()));
        }
        Ok(())
    }
}

pub fn log_likelihood(data: &[Vec<f64>], m: &GMMModel) -> Result<f64, UncertaintyError> {
    m.validate()?;
    let q = check_data(data)?;
    if q != m.dim() {
        return Err(UncertaintyError::Input(format!("data dimension {q} but model dimension {}", m.dim())));
    }
    let comps = Component::prepare(m)?;
    let mut buf = vec![0.0; m.k];
    Ok(data
        .iter()
        .map(|x| {
            for (b, c) in buf.iter_mut().zip(&comps) {
                *b = c.log_weight + c.log_density(x);
            }
            log_sum_exp(&buf)
        })
        .sum())
}

pub(super) fn free_params(k: usize, q: usize) -> usize {
    (k - 1) + k * q + k * q * (q + 1) / 2
}

/// `-loglik + (nu / 2) log M`; lower is better.
pub fn mdl_score(m: &GMMModel, data: &[Vec<f64>]) -> Result<f64, UncertaintyError> {
    let ll = log_likelihood(data, m)?;
    Ok(-ll + 0.5 * free_params(m.k, m.dim()) as f64 * (data.len() as f64).ln())
}

/// Shared state of an EM run on one data set.
pub(super) struct EmRunner<'a> {
    data: &'a [Vec<f64>],
    data_cov: DMatrix<f64>,
    floor: f64,
}

impl<'a> EmRunner<'a> {
    pub(super) fn new(data: &'a [Vec<f64>], covariance_floor: f64) -> Self {
        let (_, cov) = moments(data);
        let q = cov.nrows();
        let var = (cov.trace() / q as f64).max(f64::MIN_POSITIVE);
        EmRunner { data, data_cov: cov, floor: covariance_floor * var }
    }

    pub(super) fn data_cov(&self) -> &DMatrix<f64> {
        &self.data_cov
    }

    /// Responsibilities (row-major `M x k`) and the log-likelihood of `m`.
    fn e_step(&self, m: &GMMModel) -> Result<(Vec<f64>, f64), UncertaintyError> {
        let comps = Component::prepare(m)?;
        let k = m.k;
        let mut resp = vec![0.0; self.data.len() * k];
        let mut ll = 0.0;
        // 1-D: (log weight + log norm, mean, 1 / sd)
        let flat: Vec<(f64, f64, f64)> = if self.data[0].len() == 1 {
            comps.iter().map(|c| (c.log_weight + c.log_norm, c.mean[0], c.inv_chol[0])).collect()
        } else {
            Vec::new()
        };
        for (i, x) in self.data.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            let mut top = f64::NEG_INFINITY;
            if flat.is_empty() {
                for (r, c) in row.iter_mut().zip(&comps) {
                    *r = c.log_weight + c.log_density(x);
                    top = top.max(*r);
                }
            } else {
                let v = x[0];
                for (r, &(base, mu, is)) in row.iter_mut().zip(&flat) {
                    let z = (v - mu) * is;
                    *r = base - 0.5 * z * z;
                    top = top.max(*r);
                }
            }
            let mut sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - top).exp();
                sum += *r;
            }
            ll += top + sum.ln();
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|r| *r *= inv);
        }
        Ok((resp, ll))
    }

    fn m_step(&self, resp: &[f64], k: usize, rng: &mut impl Rng) -> GMMModel {
        let q = self.data[0].len();
        let big_m = self.data.len() as f64;
        let mut mass = vec![0.0; k];
        let mut sums = vec![0.0; k * q];
        for (i, x) in self.data.iter().enumerate() {
            for n in 0..k {
                let r = resp[i * k + n];
                mass[n] += r;
                for d in 0..q {
                    sums[n * q + d] += r * x[d];
                }
            }
        }
        let means: Vec<f64> = (0..k * q).map(|t| if mass[t / q] > 0.0 { sums[t] / mass[t / q] } else { 0.0 }).collect();
        // second pass on centered data keeps the covariance accurate
        let mut second = vec![0.0; k * q * q];
        for (i, x) in self.data.iter().enumerate() {
            for n in 0..k {
                let r = resp[i * k + n];
                let mu = &means[n * q..(n + 1) * q];
                let c = &mut second[n * q * q..(n + 1) * q * q];
                for a in 0..q {
                    let da = r * (x[a] - mu[a]);
                    for b in 0..=a {
                        c[a * q + b] += da * (x[b] - mu[b]);
                    }
                }
            }
        }
        let mut out = GMMModel {
            k,
            weights: Vec::with_capacity(k),
            means: Vec::with_capacity(k),
            covariances: Vec::with_capacity(k),
        };
        for n in 0..k {
            if mass[n] < 1e-8 {
                let at = rng.random_range(0..self.data.len());
                log::info!("EM component {n} lost its mass; re-seeded at datum {at}");
                out.weights.push(1.0 / big_m);
                out.means.push(self.data[at].clone());
                out.covariances.push(from_matrix(&floor_eigenvalues(&self.data_cov, self.floor)));
                continue;
            }
            let c = &second[n * q * q..(n + 1) * q * q];
            let cov = DMatrix::from_fn(q, q, |a, b| if b <= a { c[a * q + b] } else { c[b * q + a] } / mass[n]);
            out.weights.push(mass[n] / big_m);
            out.means.push(means[n * q..(n + 1) * q].to_vec());
            out.covariances.push(from_matrix(&floor_eigenvalues(&cov, self.floor)));
        }
        let total: f64 = out.weights.iter().sum();
        out.weights.iter_mut().for_each(|w| *w /= total);
        out
    }

    /// Alternates E and M steps starting from `m`. Returns the last model and
    /// the log-likelihood of every model visited (the final entry belongs to
    /// the returned model).
    pub(super) fn run(
        &self,
        mut m: GMMModel,
        max_steps: usize,
        tol: Option<f64>,
        rng: &mut impl Rng,
    ) -> Result<(GMMModel, Vec<f64>), UncertaintyError> {
        let mut trace = Vec::new();
        loop {
            let (resp, ll) = self.e_step(&m)?;
            let done = match (tol, trace.last()) {
                (Some(t), Some(&prev)) => (ll - prev as f64).abs() <= t,
                _ => false,
            };
            trace.push(ll);
            if done || trace.len() > max_steps {
                return Ok((m, trace));
            }
            m = self.m_step(&resp, m.k, rng);
        }
    }

    /// k-means++ style start: means spread by squared distance, shared data covariance.
    pub(super) fn initial(&self, k: usize, rng: &mut impl Rng) -> GMMModel {
        let data = self.data;
        let mut means: Vec<Vec<f64>> = vec![data[rng.random_range(0..data.len())].clone()];
        let dist2 = |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        while means.len() < k {
            let d: Vec<f64> =
                data.iter().map(|x| means.iter().map(|c| dist2(x, c)).fold(f64::INFINITY, f64::min)).collect();
            let total: f64 = d.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random_range(0.0..total);
                d.iter()
                    .position(|&v| {
                        u -= v;
                        u < 0.0
                    })
                    .unwrap_or(data.len() - 1)
            } else {
                rng.random_range(0..data.len())
            };
            means.push(data[pick].clone());
        }
        let cov = from_matrix(&floor_eigenvalues(&(&self.data_cov / (k * k) as f64), self.floor));
        GMMModel { k, weights: vec![1.0 / k as f64; k], means, covariances: vec![cov; k] }
    }
}

/// Fixed-`k` EM from a seeded k-means++ start, run until the log-likelihood settles.
pub fn em_fit(data: &[Vec<f64>], k: usize, cfg: &EMConfig) -> Result<(GMMModel, Vec<f64>), UncertaintyError> {
    cfg.validate()?;
    check_data(data)?;
    if k == 0 || data.len() < 5 * k {
        return Err(UncertaintyError::Input(format!(
            "need k >= 1 and at least {} samples, got {}",
            5 * k.max(1),
            data.len()
        )));
    }
    let mut rng = SeedTree::new(cfg.seed).stream("em");
    let runner = EmRunner::new(data, cfg.covariance_floor);
    let init = runner.initial(k, &mut rng);
    runner.run(init, cfg.max_iter, Some(cfg.loglik_tol), &mut rng)
}

/// EM run from a caller-supplied starting model.
pub fn em_fit_from(
    data: &[Vec<f64>],
    init: GMMModel,
    cfg: &EMConfig,
) -> Result<(GMMModel, Vec<f64>), UncertaintyError> {
    cfg.validate()?;
    init.validate()?;
    let q = check_data(data)?;
    if q != init.dim() || data.len() < 5 * init.k {
        return Err(UncertaintyError::Input("data does not match the starting model".into()));
    }
    let mut rng = SeedTree::new(cfg.seed).stream("em");
    EmRunner::new(data, cfg.covariance_floor).run(init, cfg.max_iter, Some(cfg.loglik_tol), &mut rng)
}

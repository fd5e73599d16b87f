//! Epsilon-insensitive kernel SVR trained by pairwise coordinate ascent on the dual.

use serde::{Deserialize, Serialize};

use super::ForecastError;

/// Stop when the maximal KKT violation drops below this.
pub const KKT_TOL: f64 = 1e-3;
pub const MAX_SMO_ITER: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl HyperParams {
    pub fn new(gamma: f64, c: f64, epsilon: f64) -> Result<Self, ForecastError> {
        let h = Self { gamma, c, epsilon };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let ok = self.gamma.is_finite()
            && self.c.is_finite()
            && self.epsilon.is_finite()
            && self.gamma > 0.0
            && self.c > 0.0
            && self.epsilon >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ForecastError::Input(format!("invalid hyper-parameters {self:?}")))
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.gamma, self.c, self.epsilon]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { gamma: a[0], c: a[1], epsilon: a[2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SVRModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i - alpha_i^*` per support vector
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub hyper: HyperParams,
    /// maximal KKT violation at exit
    pub kkt_violation: f64,
    pub iterations: usize,
}

pub fn rbf(gamma: f64, u: &[f64], v: &[f64]) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize, ForecastError> {
    if x.len() != y.len() {
        return Err(ForecastError::Input(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(ForecastError::Input(format!("need at least 2 samples, got {}", x.len())));
    }
    let dim = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(ForecastError::Input(format!("row {i} has {} features, expected {dim}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::Input(format!("row {i} has a non-finite feature")));
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(ForecastError::Input(format!("target {i} is not finite")));
    }
    Ok(dim)
}

/// Trains on `(x, y)`.
///
/// The dual is written over `2n` variables `a = (alpha, alpha^*)` with signs
/// `s = (+1, -1)`: minimize `a^T Q a / 2 + p^T a` subject to `s^T a = 0`,
/// `0 <= a <= C`, where `Q_uv = s_u s_v k(x_u, x_v)` and
/// `p = (eps - y, eps + y)`. Each step moves the maximal violator and the
/// partner with the largest second-order gain.
pub fn train_svr(x: &[Vec<f64>], y: &[f64], h: HyperParams) -> Result<SVRModel, ForecastError> {
    h.validate()?;
    check_data(x, y)?;
    let n = x.len();
    let mut kern = vec![0.0; n * n];
    for i in 0..n {
        kern[i * n + i] = 1.0;
        for j in 0..i {
            let k = rbf(h.gamma, &x[i], &x[j]);
            kern[i * n + j] = k;
            kern[j * n + i] = k;
        }
    }
    let m = 2 * n;
    let sign = |u: usize| if u < n { 1.0 } else { -1.0 };
    let c = h.c;
    let mut a = vec![0.0f64; m];
    let mut g: Vec<f64> = (0..m).map(|u| if u < n { h.epsilon - y[u] } else { h.epsilon + y[u - n] }).collect();

    let up = |a: &[f64], u: usize| if sign(u) > 0.0 { a[u] < c } else { a[u] > 0.0 };
    let low = |a: &[f64], u: usize| if sign(u) > 0.0 { a[u] > 0.0 } else { a[u] < c };

    let mut iterations = 0;
    let mut violation;
    loop {
        // i: maximal violator; j: largest second-order gain among its partners
        let (mut gmax, mut i_sel) = (f64::NEG_INFINITY, usize::MAX);
        for u in 0..m {
            let v = -sign(u) * g[u];
            if up(&a, u) && v > gmax {
                gmax = v;
                i_sel = u;
            }
        }
        let mut gmin = f64::INFINITY;
        let (mut best_gain, mut j_sel) = (f64::INFINITY, usize::MAX);
        if i_sel != usize::MAX {
            let ki = i_sel % n;
            for t in 0..m {
                if !low(&a, t) {
                    continue;
                }
                let v = -sign(t) * g[t];
                gmin = gmin.min(v);
                let diff = gmax - v;
                if diff > 0.0 {
                    let kt = t % n;
                    let quad = (2.0 - 2.0 * kern[ki * n + kt]).max(TAU);
                    let gain = -diff * diff / quad;
                    if gain < best_gain {
                        best_gain = gain;
                        j_sel = t;
                    }
                }
            }
        }
        violation = if i_sel == usize::MAX || gmin == f64::INFINITY { 0.0 } else { gmax - gmin };
        if violation <= KKT_TOL || iterations >= MAX_SMO_ITER || j_sel == usize::MAX {
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (a[i], a[j]);
        let quad = (2.0 - 2.0 * kern[(i % n) * n + j % n]).max(TAU);
        if sign(i) != sign(j) {
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        // g_u += Q_ui di + Q_uj dj, with Q_ui = s_u s_i k(u mod n, i mod n)
        let (di, dj) = (sign(i) * (a[i] - old_i), sign(j) * (a[j] - old_j));
        let (ri, rj) = (&kern[(i % n) * n..(i % n + 1) * n], &kern[(j % n) * n..(j % n + 1) * n]);
        for k in 0..n {
            let d = ri[k] * di + rj[k] * dj;
            g[k] += d;
            g[k + n] -= d;
        }
    }

    // offset from free variables, else midpoint of the feasible interval
    let (mut ub, mut lb, mut sum_free, mut nfree) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for u in 0..m {
        let yg = sign(u) * g[u];
        if a[u] >= c {
            if sign(u) > 0.0 {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        } else if a[u] <= 0.0 {
            if sign(u) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sum_free += yg;
        }
    }
    let rho = if nfree > 0 { sum_free / nfree as f64 } else { 0.5 * (ub + lb) };

    let mut support_vectors = Vec::new();
    let mut dual_coeffs = Vec::new();
    for i in 0..n {
        let beta = a[i] - a[i + n];
        if beta != 0.0 {
            support_vectors.push(x[i].clone());
            dual_coeffs.push(beta);
        }
    }
    Ok(SVRModel { support_vectors, dual_coeffs, bias: -rho, hyper: h, kkt_violation: violation, iterations })
}

impl SVRModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(|v| v.len())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ForecastError> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(ForecastError::Input(format!("model expects {d} features, got {}", x.len())));
            }
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors.iter().zip(&self.dual_coeffs).map(|(sv, c)| c * rbf(self.hyper.gamma, sv, x)).sum::<f64>()
            + self.bias
    }
}

pub fn predict(m: &SVRModel, x: &[f64]) -> Result<f64, ForecastError> {
    m.predict(x)
}

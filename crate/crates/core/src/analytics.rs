//! Multivariate linear regression by ordinary and feasible generalized least
//! squares, with min-max normalization.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("design matrix is rank deficient: {0}")]
    Singular(String),
    #[error("{file}:{row}: {msg}")]
    Parse { file: String, row: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Response `y` and explanatory columns `x[i]`, all of one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// column-major: `x[i][row]`
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl RegressionData {
    /// Builds from columns with labels `x1..xk` and time index `0..n`.
    pub fn new(y: Vec<f64>, x: Vec<Vec<f64>>) -> Result<Self, AnalyticsError> {
        let labels = (1..=x.len()).map(|i| format!("x{i}")).collect();
        let d = RegressionData { t: (0..y.len()).map(|i| i as f64).collect(), y, x, labels };
        d.validate()?;
        Ok(d)
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let n = self.y.len();
        if n == 0 || self.x.is_empty() {
            return Err(AnalyticsError::Input("need at least one row and one explanatory column".into()));
        }
        if self.t.len() != n || self.x.iter().any(|c| c.len() != n) || self.labels.len() != self.x.len() {
            return Err(AnalyticsError::Input("columns and labels must have equal lengths".into()));
        }
        if self.y.iter().chain(self.x.iter().flatten()).chain(&self.t).any(|v| !v.is_finite()) {
            return Err(AnalyticsError::Input("data contain non-finite entries".into()));
        }
        Ok(())
    }

    /// `n x (k + 1)` design matrix with a leading column of ones.
    fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.x.len() + 1, |r, c| if c == 0 { 1.0 } else { self.x[c - 1][r] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Ols,
    Fgls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub method: Method,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub labels: Vec<String>,
    /// in-sample `sum (y - y_hat)^2` on the scale of the data passed in
    pub squared_error: f64,
    /// FGLS observation weights `1 / sigma_t^2`
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<Vec<f64>>,
}

impl RegressionFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, d: &RegressionData) -> Vec<f64> {
        (0..d.rows()).map(|r| self.predict_row(&d.x.iter().map(|c| c[r]).collect::<Vec<_>>())).collect()
    }

    /// Label of the coefficient with the largest magnitude.
    pub fn dominant(&self) -> &str {
        let i = (0..self.coefficients.len())
            .max_by(|&a, &b| self.coefficients[a].abs().total_cmp(&self.coefficients[b].abs()))
            .expect("at least one coefficient");
        &self.labels[i]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

fn minmax(v: &[f64], name: &str) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        log::warn!("column {name} is constant; mapped to 0");
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Rescales the response and every explanatory column to `[0, 1]`.
pub fn normalize_minmax(d: &RegressionData) -> RegressionData {
    RegressionData {
        t: d.t.clone(),
        y: minmax(&d.y, "y"),
        x: d.x.iter().zip(&d.labels).map(|(c, l)| minmax(c, l)).collect(),
        labels: d.labels.clone(),
    }
}

/// Least squares through Householder QR with a rank check on `R`.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, AnalyticsError> {
    let (n, p) = a.shape();
    if n < p {
        return Err(AnalyticsError::Singular(format!("{n} rows for {p} unknowns")));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(i) = (0..p).find(|&i| !(r[(i, i)].abs() > 1e-10 * scale)) {
        return Err(AnalyticsError::Singular(format!("column {i} is a combination of the others")));
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or_else(|| AnalyticsError::Singular("triangular solve failed".into()))
}

fn assemble(d: &RegressionData, beta: &DVector<f64>, method: Method, weights: Option<Vec<f64>>) -> RegressionFit {
    let mut fit = RegressionFit {
        method,
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        labels: d.labels.clone(),
        squared_error: 0.0,
        weights,
    };
    fit.squared_error = fit.predict(d).iter().zip(&d.y).map(|(p, y)| (y - p).powi(2)).sum();
    fit
}

pub fn ols_fit(d: &RegressionData) -> Result<RegressionFit, AnalyticsError> {
    d.validate()?;
    let beta = least_squares(&d.design(), &DVector::from_column_slice(&d.y))?;
    Ok(assemble(d, &beta, Method::Ols, None))
}

/// Floor inside `log(e^2 + floor)` for the skedastic regression.
pub const FGLS_FLOOR: f64 = 1e-12;

/// OLS, then a regression of `log(e^2 + floor)` on the same columns for the
/// per-observation variance, then weighted least squares with `1 / sigma^2`.
pub fn fgls_fit(d: &RegressionData) -> Result<RegressionFit, AnalyticsError> {
    d.validate()?;
    let a = d.design();
    let y = DVector::from_column_slice(&d.y);
    let beta_ols = least_squares(&a, &y)?;
    let resid = &y - &a * &beta_ols;
    let z = resid.map(|e| (e * e + FGLS_FLOOR).ln());
    let g = least_squares(&a, &z)?;
    let weights: Vec<f64> = (&a * g).iter().map(|s| (-s).exp()).collect();
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(AnalyticsError::Singular("variance model produced a non-positive weight".into()));
    }
    let sw = DVector::from_iterator(weights.len(), weights.iter().map(|w| w.sqrt()));
    let aw = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * sw[r]);
    let yw = y.component_mul(&sw);
    let beta = least_squares(&aw, &yw)?;
    Ok(assemble(d, &beta, Method::Fgls, Some(weights)))
}

/// Reads `t,y,x1..xk`; column labels come from the header.
pub fn read_regression_csv(path: &Path) -> Result<RegressionData, AnalyticsError> {
    let file = path.display().to_string();
    let io = |e: csv::Error| AnalyticsError::Io { path: file.clone(), msg: e.to_string() };
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(io)?;
    let head: Vec<String> = rd
        .headers()
        .map_err(|e| AnalyticsError::Parse { file: file.clone(), row: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if head.len() < 3 || head[0] != "t" || head[1] != "y" {
        return Err(AnalyticsError::Parse { file, row: 1, msg: "expected header t,y,x1[,x2...]".into() });
    }
    let k = head.len() - 2;
    let mut d = RegressionData { t: vec![], y: vec![], x: vec![vec![]; k], labels: head[2..].to_vec() };
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| AnalyticsError::Parse { file: file.clone(), row, msg: e.to_string() })?;
        if rec.len() != head.len() {
            return Err(AnalyticsError::Parse {
                file: file.clone(),
                row,
                msg: format!("expected {} fields", head.len()),
            });
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| AnalyticsError::Parse {
                    file: file.clone(),
                    row,
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        d.t.push(vals[0]);
        d.y.push(vals[1]);
        for j in 0..k {
            d.x[j].push(vals[j + 2]);
        }
    }
    d.validate()?;
    Ok(d)
}

pub fn write_regression_csv(d: &RegressionData, path: &Path) -> Result<(), AnalyticsError> {
    let io = |e: csv::Error| AnalyticsError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut wr = csv::Writer::from_path(path).map_err(io)?;
    let mut head = vec!["t".to_string(), "y".to_string()];
    head.extend(d.labels.iter().cloned());
    wr.write_record(&head).map_err(io)?;
    for r in 0..d.rows() {
        let mut rec = vec![d.t[r].to_string(), d.y[r].to_string()];
        rec.extend(d.x.iter().map(|c| c[r].to_string()));
        wr.write_record(&rec).map_err(io)?;
    }
    wr.flush().map_err(|e| AnalyticsError::Io { path: path.display().to_string(), msg: e.to_string() })
}

/// True coefficients of [`heteroscedastic`] (intercept first).
pub const HETERO_BETA: [f64; 4] = [1.0, 2.0, -1.0, 0.5];

/// Inputs uniform on `[0, 1]^3`, noise standard deviation `0.05 exp(4 x1)`.
/// Returns the data and the noise-free response.
pub fn heteroscedastic(n: usize, seed: u64) -> (RegressionData, Vec<f64>) {
    let mut rng = SeedTree::new(seed).stream("hetero");
    let x: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let clean: Vec<f64> =
        (0..n).map(|r| HETERO_BETA[0] + (0..3).map(|j| HETERO_BETA[j + 1] * x[j][r]).sum::<f64>()).collect();
    let y = (0..n)
        .map(|r| {
            let z: f64 = rng.sample(StandardNormal);
            clean[r] + 0.05 * (4.0 * x[0][r]).exp() * z
        })
        .collect();
    (RegressionData::new(y, x).expect("generated data are valid"), clean)
}

/// Five correlated building-HVAC style signals over a week of hourly samples;
/// the load depends most on the fourth (a duct temperature).
pub fn hvac_fixture(seed: u64) -> RegressionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 168;
    let mut x = vec![Vec::with_capacity(n); 5];
    let mut y = Vec::with_capacity(n);
    for h in 0..n {
        let day = 2.0 * std::f64::consts::PI * (h % 24) as f64 / 24.0;
        let mut noise = || rng.sample::<f64, _>(StandardNormal);
        let p1 = 101.0 + 0.3 * day.sin() + 0.1 * noise();
        let fan = 40.0 + 15.0 * (day - 1.0).sin().max(0.0) + 2.0 * noise();
        let t1 = 18.0 + 3.0 * (day - 0.5).sin() + 0.5 * noise();
        let t2 = 21.0 + 4.0 * (day - 0.8).sin() + 0.5 * noise();
        let p2 = 99.0 + 0.5 * (day + 0.7).cos() + 0.2 * noise();
        let load = 0.02 * p1 + 0.05 * fan + 0.08 * t1 + 0.17 * t2 + 0.04 * p2 + 0.02 * noise();
        for (c, v) in x.iter_mut().zip([p1, fan, t1, t2, p2]) {
            c.push(v);
        }
        y.push(load);
    }
    let mut d = RegressionData::new(y, x).expect("fixture is valid");
    d.labels =
        ["air_pressure_1", "fan_index", "duct_temp_1", "duct_temp_2", "air_pressure_2"].map(String::from).to_vec();
    d
}

use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::svr::{train_svr, HyperParams, SVRModel};
use super::tune::{optimize_hyperparams, GridSpec, TuneConfig, TuneOutcome};
use super::ForecastError;
use crate::workers::WorkerPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, values: Vec<f64>) -> Result<Self, ForecastError> {
        if timestamps.len() != values.len() {
            return Err(ForecastError::Input(format!("{} timestamps but {} values", timestamps.len(), values.len())));
        }
        Ok(Self { timestamps, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self { timestamps: self.timestamps[..n].to_vec(), values: self.values[..n].to_vec() }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

/// Reads `timestamp,value` with ISO-8601 timestamps.
pub fn read_series(path: &Path) -> Result<TimeSeries, ForecastError> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ForecastError::Io { path: file.clone(), msg: e.to_string() })?;
    let hdr: Vec<String> = rdr
        .headers()
        .map_err(|e| ForecastError::Parse { file: file.clone(), row: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if hdr != ["timestamp", "value"] {
        return Err(ForecastError::Parse {
            file,
            row: 1,
            msg: format!("expected header `timestamp,value`, found `{}`", hdr.join(",")),
        });
    }
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ForecastError::Parse { file: file.clone(), row: 0, msg: e.to_string() })?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |msg: String| ForecastError::Parse { file: file.clone(), row, msg };
        let t = rec.get(0).and_then(parse_timestamp).ok_or_else(|| bad("bad timestamp".into()))?;
        let v: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad("bad value".into()))?;
        ts.push(t);
        vs.push(v);
    }
    TimeSeries::new(ts, vs)
}

pub fn write_series(series: &TimeSeries, path: &Path) -> Result<(), ForecastError> {
    let io = |e: csv::Error| ForecastError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut wr = csv::Writer::from_path(path).map_err(io)?;
    wr.write_record(["timestamp", "value"]).map_err(io)?;
    for (t, v) in series.timestamps.iter().zip(&series.values) {
        wr.write_record([t.format("%Y-%m-%dT%H:%M:%S").to_string(), v.to_string()]).map_err(io)?;
    }
    wr.flush().map_err(|e| io(e.into()))?;
    Ok(())
}

/// Hourly synthetic load, kW: daily sinusoid, weekly pattern and a slow
/// trend, with multiplicative Gaussian noise of relative size `noise`.
pub fn synthetic_load(hours: usize, noise: f64, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date");
    let mut ts = Vec::with_capacity(hours);
    let mut vs = Vec::with_capacity(hours);
    for h in 0..hours {
        let t = h as f64;
        let daily = 0.25 * (std::f64::consts::TAU * (t - 8.0) / 24.0).sin();
        let weekly = 0.08 * (std::f64::consts::TAU * t / 168.0).sin();
        let trend = 0.05 * t / hours.max(1) as f64;
        let clean = 1000.0 * (1.0 + daily + weekly + trend);
        ts.push(start + Duration::hours(h as i64));
        vs.push(clean * (1.0 + noise * normal.sample(&mut rng)));
    }
    TimeSeries { timestamps: ts, values: vs }
}

/// Lag features: sample `t` has features `v[t-window..t]` and target `v[t]`.
pub fn lag_dataset(values: &[f64], window: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in window..values.len() {
        x.push(values[t - window..t].to_vec());
        y.push(values[t]);
    }
    (x, y)
}

/// One-step SVR on min-max scaled lag windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub model: SVRModel,
    pub window: usize,
    pub min: f64,
    pub max: f64,
}

impl Forecaster {
    fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            v - self.min
        }
    }

    fn unscale(&self, s: f64) -> f64 {
        if self.max > self.min {
            self.min + s * (self.max - self.min)
        } else {
            s + self.min
        }
    }

    /// Next value after `history` (at least `window` samples, last = most recent).
    pub fn predict_next(&self, history: &[f64]) -> Result<f64, ForecastError> {
        if history.len() < self.window {
            return Err(ForecastError::Input(format!(
                "need {} samples of history, got {}",
                self.window,
                history.len()
            )));
        }
        let feat: Vec<f64> = history[history.len() - self.window..].iter().map(|&v| self.scale(v)).collect();
        Ok(self.unscale(self.model.predict(&feat)?))
    }
}

fn scaled_lags(values: &[f64], window: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64, f64), ForecastError> {
    if window == 0 || window >= values.len() {
        return Err(ForecastError::Input(format!(
            "window {window} needs a series longer than it, got {}",
            values.len()
        )));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = values.iter().map(|&v| if max > min { (v - min) / (max - min) } else { v - min }).collect();
    let (x, y) = lag_dataset(&scaled, window);
    Ok((x, y, min, max))
}

pub fn train_forecaster(series: &TimeSeries, window: usize, h: HyperParams) -> Result<Forecaster, ForecastError> {
    let (x, y, min, max) = scaled_lags(&series.values, window)?;
    let model = train_svr(&x, &y, h)?;
    Ok(Forecaster { model, window, min, max })
}

/// Tunes on the lag dataset of `series`, then trains on all of it.
pub fn tune_forecaster(
    series: &TimeSeries,
    window: usize,
    grid: &GridSpec,
    cfg: &TuneConfig,
    pool: &WorkerPool,
) -> Result<(Forecaster, TuneOutcome), ForecastError> {
    let (x, y, _, _) = scaled_lags(&series.values, window)?;
    let outcome = optimize_hyperparams(&x, &y, grid, cfg, pool)?;
    let f = train_forecaster(series, window, outcome.best)?;
    Ok((f, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// timestamp of the last observed sample
    pub origin: NaiveDateTime,
    pub horizon_step: usize,
    pub predicted: f64,
    pub actual: f64,
}

/// For every origin `o` with a full window behind it and `horizon` actuals
/// ahead, predicts steps `1..=horizon` recursively from `series[..o]`.
pub fn forecast_sliding(
    f: &Forecaster,
    series: &TimeSeries,
    horizon: usize,
    start: usize,
) -> Result<Vec<ForecastPoint>, ForecastError> {
    if f.window >= series.len() {
        return Err(ForecastError::Input(format!(
            "window {} must be shorter than the series ({})",
            f.window,
            series.len()
        )));
    }
    if horizon == 0 {
        return Err(ForecastError::Input("horizon must be at least 1".into()));
    }
    let mut out = Vec::new();
    let first = start.max(f.window);
    for o in first..=series.len().saturating_sub(horizon) {
        let mut hist: Vec<f64> = series.values[o - f.window..o].to_vec();
        for step in 1..=horizon {
            let p = f.predict_next(&hist)?;
            out.push(ForecastPoint {
                origin: series.timestamps[o - 1],
                horizon_step: step,
                predicted: p,
                actual: series.values[o + step - 1],
            });
            hist.remove(0);
            hist.push(p);
        }
    }
    Ok(out)
}

pub fn write_forecast_csv<W: std::io::Write>(points: &[ForecastPoint], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["origin", "horizon_step", "predicted", "actual"])?;
    for p in points {
        wr.write_record([
            p.origin.format("%Y-%m-%dT%H:%M:%S").to_string(),
            p.horizon_step.to_string(),
            format!("{:.6}", p.predicted),
            format!("{:.6}", p.actual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// percent
    pub mape: f64,
    /// RMSE over the range of the actuals, percent
    pub nrmse: f64,
    /// MAPE terms dropped because the actual was zero
    pub skipped: usize,
}

pub fn error_metrics(pred: &[f64], actual: &[f64]) -> Result<ErrorMetrics, ForecastError> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(ForecastError::Input(format!("metric inputs of length {} and {}", pred.len(), actual.len())));
    }
    let mut ape = 0.0;
    let mut counted = 0usize;
    for (p, a) in pred.iter().zip(actual) {
        if *a != 0.0 {
            ape += ((p - a) / a).abs();
            counted += 1;
        }
    }
    let skipped = pred.len() - counted;
    if skipped > 0 {
        log::warn!("{skipped} zero actual values skipped in MAPE");
    }
    let mape = if counted > 0 { 100.0 * ape / counted as f64 } else { 0.0 };
    let rmse = (pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64).sqrt();
    let lo = actual.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = actual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let nrmse = if range > 0.0 {
        100.0 * rmse / range
    } else if rmse == 0.0 {
        0.0
    } else {
        100.0 * rmse / actual.iter().map(|a| a.abs()).sum::<f64>().max(f64::MIN_POSITIVE) * actual.len() as f64
    };
    Ok(ErrorMetrics { mape, nrmse, skipped })
}

//! Day-ahead hourly scheduling at the substation with chance constraints on
//! load and renewable forecast errors and optional corrective-action resale.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;
use crate::uncertainty::{self, mixture_quantile, moment_match, normal_quantile, GMMModel, UncertaintyError};
use crate::workers::WorkerPool;

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("hour {hour} infeasible: {constraint}")]
    Infeasible { hour: usize, constraint: String },
    #[error("{file}:{row}: {msg}")]
    Parse { file: String, row: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Model(#[from] UncertaintyError),
}

/// Hourly prices in $/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPrices {
    pub rho_da: Vec<f64>,
    pub rho_rt: Vec<f64>,
    pub rho_r: Vec<f64>,
    pub rho_s: Vec<f64>,
}

impl MarketPrices {
    pub fn hours(&self) -> usize {
        self.rho_da.len()
    }

    /// Lengths agree and `rho_s < rho_r < rho_da < rho_rt` every hour.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let t = self.hours();
        if t == 0 || self.rho_rt.len() != t || self.rho_r.len() != t || self.rho_s.len() != t {
            return Err(ScheduleError::Input("price arrays must be non-empty and of equal length".into()));
        }
        for h in 0..t {
            let (s, r, da, rt) = (self.rho_s[h], self.rho_r[h], self.rho_da[h], self.rho_rt[h]);
            if ![s, r, da, rt].iter().all(|v| v.is_finite()) || !(s < r && r < da && da < rt) {
                return Err(ScheduleError::Input(format!(
                    "hour {h}: prices must satisfy rho_s < rho_r < rho_da < rho_rt, got {s} {r} {da} {rt}"
                )));
            }
        }
        Ok(())
    }
}

/// Relative load forecast error, Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadError {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastInputs {
    /// renewable forecast per hour (kWh)
    pub g_r: Vec<f64>,
    /// load forecast per hour (kWh)
    pub g_dl: Vec<f64>,
    /// relative renewable error, 1-D mixture
    pub error_model_r: GMMModel,
    pub error_model_l: LoadError,
}

impl ForecastInputs {
    pub fn hours(&self) -> usize {
        self.g_dl.len()
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.g_r.len() != self.g_dl.len() || self.g_dl.is_empty() {
            return Err(ScheduleError::Input("renewable and load forecasts must be non-empty and equally long".into()));
        }
        if self.g_r.iter().chain(&self.g_dl).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScheduleError::Input("forecasts must be finite and non-negative".into()));
        }
        self.error_model_r.validate()?;
        if self.error_model_r.dim() != 1 {
            return Err(ScheduleError::Input("renewable error model must be 1-D".into()));
        }
        let l = self.error_model_l;
        if !l.mean.is_finite() || !l.variance.is_finite() || l.variance < 0.0 {
            return Err(ScheduleError::Input(format!("bad load error model {l:?}")));
        }
        Ok(())
    }
}

/// Where the renewable error quantile comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantileSource {
    /// exact inverse of the fitted mixture CDF
    #[default]
    Mixture,
    /// standard normal quantile on the mixture's first two moments
    NormalMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChanceParams {
    pub gamma: f64,
    pub alpha: f64,
    pub renewable_share: f64,
    pub r1_fraction: f64,
    pub quantile: QuantileSource,
}

impl Default for ChanceParams {
    fn default() -> Self {
        Self { gamma: 0.95, alpha: 0.95, renewable_share: 0.8, r1_fraction: 0.975, quantile: QuantileSource::Mixture }
    }
}

impl ChanceParams {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        for (name, p) in [("gamma", self.gamma), ("alpha", self.alpha)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(ScheduleError::Config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        if !(self.renewable_share > 0.0 && self.renewable_share < 1.0) {
            return Err(ScheduleError::Config(format!(
                "renewable_share must lie in (0, 1), got {}",
                self.renewable_share
            )));
        }
        if !(self.r1_fraction > 0.0 && self.r1_fraction <= 1.0) {
            return Err(ScheduleError::Config(format!("r1_fraction must lie in (0, 1], got {}", self.r1_fraction)));
        }
        Ok(())
    }
}

/// Box bounds on day-ahead purchase, real-time deviation and substation renewables (kWh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub da_min: f64,
    pub da_max: f64,
    /// real-time deviation limited to `[-rt_max, rt_max]`
    pub rt_max: f64,
    /// unbounded by default; JSON `null` stands for infinity
    #[serde(with = "unbounded")]
    pub r1_max: f64,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self { da_min: 0.0, da_max: 5_000.0, rt_max: 5_000.0, r1_max: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub use_ca: bool,
    pub n_samples: usize,
    pub grid_points: usize,
    /// golden-section bracket width (kWh)
    pub tol: f64,
    pub seed: u64,
    pub bounds: Bounds,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { use_ca: true, n_samples: 2_000, grid_points: 200, tol: 1e-3, seed: 0, bounds: Bounds::default() }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<(), ScheduleError> {
        let b = self.bounds;
        if self.n_samples == 0 || self.grid_points < 3 || !(self.tol > 0.0) {
            return Err(ScheduleError::Config("need n_samples >= 1, grid_points >= 3 and tol > 0".into()));
        }
        if !(b.da_min <= b.da_max)
            || !(b.rt_max >= 0.0)
            || !(b.r1_max >= 0.0)
            || !b.da_min.is_finite()
            || !b.da_max.is_finite()
        {
            return Err(ScheduleError::Config(format!("inconsistent bounds {b:?}")));
        }
        Ok(())
    }
}

/// Lower bounds from the deterministic form of the two chance constraints:
/// `(g_w + g_da)_min` for the load and `g_w_min` for the renewable share.
pub fn deterministic_bounds(inp: &ForecastInputs, cp: &ChanceParams, t: usize) -> Result<(f64, f64), ScheduleError> {
    cp.validate()?;
    if t >= inp.hours() {
        return Err(ScheduleError::Input(format!("hour {t} outside a {}-hour horizon", inp.hours())));
    }
    let dl = inp.g_dl[t];
    let l = inp.error_model_l;
    let load = dl * (1.0 + l.mean + normal_quantile(cp.gamma)? * l.variance.sqrt());
    let gr = inp.g_r[t];
    let rho = cp.renewable_share;
    let renew = match cp.quantile {
        QuantileSource::Mixture => rho * cp.r1_fraction * gr * (1.0 + mixture_quantile(&inp.error_model_r, cp.alpha)?),
        QuantileSource::NormalMoments => {
            let (mu, var) = moment_match(&inp.error_model_r)?;
            let gr1 = cp.r1_fraction * gr;
            normal_quantile(cp.alpha)? * rho * (gr * var * gr).sqrt() + rho * gr1 + rho * mu * gr1
        }
    };
    Ok((load, renew))
}

/// Relative rounding slack under which `g_da + g_w` still counts as equal to the load.
pub const DELTA_TOL: f64 = 1e-12;

/// One hour of the schedule. `g_rt` is the deviation at forecast values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourDecision {
    pub hour: usize,
    pub g_dl: f64,
    pub g_da: f64,
    pub g_w: f64,
    pub g_rt: f64,
    /// 1 when `g_da + g_w <= g_dl`, equality up to [`DELTA_TOL`] included
    pub delta: u8,
    /// sample-average expected cost ($)
    pub cost: f64,
    /// expected resale revenue ($), zero without corrective action
    pub resale: f64,
    /// share of scenarios with surplus energy
    pub surplus_share: f64,
    pub load_bound: f64,
    pub renewable_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HourStatus {
    Solved(HourDecision),
    Infeasible { hour: usize, constraint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub hours: Vec<HourStatus>,
    /// sum of solved hourly costs
    pub f_sub: f64,
}

impl Schedule {
    pub fn feasible(&self) -> bool {
        self.hours.iter().all(|h| matches!(h, HourStatus::Solved(_)))
    }

    pub fn decision(&self, t: usize) -> Option<&HourDecision> {
        match self.hours.get(t) {
            Some(HourStatus::Solved(d)) => Some(d),
            _ => None,
        }
    }
}

/// Realized load and delivered renewable energy per scenario.
struct Scenarios {
    load: Vec<f64>,
    renewable_r1: Vec<f64>,
}

fn draw(
    inp: &ForecastInputs,
    cp: &ChanceParams,
    t: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Scenarios, ScheduleError> {
    let e1 = uncertainty::sample(&inp.error_model_r, n, rng.random())?;
    let l = inp.error_model_l;
    let sd = l.variance.sqrt();
    let load = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            inp.g_dl[t] * (1.0 + l.mean + sd * z)
        })
        .collect();
    let renewable_r1 = e1.iter().map(|e| cp.r1_fraction * inp.g_r[t] * (1.0 + e[0])).collect();
    Ok(Scenarios { load, renewable_r1 })
}

/// Sample-average cost of buying `x` day-ahead. Renewables used are
/// `min(g_w, G^R1, G^DL)` (the excess is curtailed), so any surplus is
/// day-ahead energy. Deficits are bought at the RT price and surpluses resold
/// at `rho_s` under corrective action (worth nothing otherwise).
struct HourCost {
    /// realized load minus delivered renewables, per scenario
    net: Vec<f64>,
    renewable_cost: f64,
    prices: (f64, f64, f64),
    use_ca: bool,
}

impl HourCost {
    fn new(sc: &Scenarios, g_w: f64, prices: &MarketPrices, t: usize, use_ca: bool) -> Self {
        let n = sc.load.len() as f64;
        let mut net = Vec::with_capacity(sc.load.len());
        let mut renew = 0.0;
        for (d, r) in sc.load.iter().zip(&sc.renewable_r1) {
            let w = g_w.min(r.max(0.0)).min(d.max(0.0));
            renew += w;
            net.push(d - w);
        }
        HourCost {
            net,
            renewable_cost: prices.rho_r[t] * renew / n,
            prices: (prices.rho_da[t], prices.rho_rt[t], prices.rho_s[t]),
            use_ca,
        }
    }

    /// (expected cost, expected resale revenue, surplus share)
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let (da, rt, s) = self.prices;
        let mut buy = 0.0;
        let mut surplus = 0.0;
        let mut count = 0usize;
        for &v in &self.net {
            let dev = v - x;
            if dev >= 0.0 {
                buy += dev;
            } else {
                surplus -= dev;
                count += 1;
            }
        }
        let n = self.net.len() as f64;
        let resale = if self.use_ca { s * surplus / n } else { 0.0 };
        (da * x + self.renewable_cost + rt * buy / n - resale, resale, count as f64 / n)
    }

    fn cost(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Grid, then golden section around the best grid point, then a snap to
    /// the cost breakpoints inside the final bracket. The cost is convex and
    /// piecewise linear, so the snap returns an exact minimizer.
    fn minimize(&self, lo: f64, hi: f64, grid_points: usize, tol: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        let step = (hi - lo) / (grid_points - 1) as f64;
        let at = |k: usize| {
            if k + 1 == grid_points {
                hi
            } else {
                lo + step * k as f64
            }
        };
        let mut best = 0;
        let mut best_c = f64::INFINITY;
        for k in 0..grid_points {
            let c = self.cost(at(k));
            if c < best_c {
                best_c = c;
                best = k;
            }
        }
        let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(grid_points - 1)));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (self.cost(c), self.cost(d));
        while b - a > tol {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.cost(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.cost(d);
            }
        }
        let mut cands: Vec<f64> = vec![lo, hi, 0.5 * (a + b)];
        cands.extend(self.net.iter().copied().filter(|&v| v >= a - tol && v <= b + tol && v >= lo && v <= hi));
        cands.sort_by(f64::total_cmp);
        let mut x = cands[0];
        let mut fx = self.cost(x);
        for &v in &cands[1..] {
            let fv = self.cost(v);
            if fv < fx {
                x = v;
                fx = fv;
            }
        }
        x
    }
}

/// Solves one hour. The day-ahead purchase minimizes the sample-average cost
/// over the capacity interval; by convexity the chance-constrained optimum is
/// that minimizer clamped to the chance bound.
pub fn solve_hour(
    inp: &ForecastInputs,
    prices: &MarketPrices,
    cp: &ChanceParams,
    opts: &SolveOptions,
    t: usize,
) -> Result<HourDecision, ScheduleError> {
    opts.validate()?;
    let (load_bound, renewable_bound) = deterministic_bounds(inp, cp, t)?;
    let b = opts.bounds;
    let dl = inp.g_dl[t];
    let (mu1, _) = moment_match(&inp.error_model_r)?;
    let expected_r1 = (cp.r1_fraction * inp.g_r[t] * (1.0 + mu1)).max(0.0);
    if renewable_bound > b.r1_max {
        return Err(ScheduleError::Infeasible {
            hour: t,
            constraint: format!("renewable chance bound {renewable_bound:.3} exceeds G^R1 max {}", b.r1_max),
        });
    }
    let g_w = renewable_bound.max(expected_r1.min(b.r1_max));
    let lo0 = b.da_min.max(dl - g_w - b.rt_max);
    let hi0 = b.da_max.min(dl - g_w + b.rt_max);
    if lo0 > hi0 {
        return Err(ScheduleError::Infeasible {
            hour: t,
            constraint: format!(
                "day-ahead bounds [{}, {}] cannot meet the real-time limit {}",
                b.da_min, b.da_max, b.rt_max
            ),
        });
    }
    let lo = lo0.max(load_bound - g_w);
    if lo > hi0 {
        return Err(ScheduleError::Infeasible {
            hour: t,
            constraint: format!(
                "load chance constraint needs g_da >= {:.3}, capacity allows {hi0:.3}",
                load_bound - g_w
            ),
        });
    }
    let mut rng = SeedTree::new(opts.seed).indexed("saa-hour", t as u64);
    let sc = draw(inp, cp, t, opts.n_samples, &mut rng)?;
    let hc = HourCost::new(&sc, g_w, prices, t, opts.use_ca);
    let x = hc.minimize(lo0, hi0, opts.grid_points, opts.tol).clamp(lo, hi0);
    let (cost, resale, surplus_share) = hc.eval(x);
    let g_rt = dl - x - g_w;
    Ok(HourDecision {
        hour: t,
        g_dl: dl,
        g_da: x,
        g_w,
        g_rt,
        delta: u8::from(x + g_w <= dl + DELTA_TOL * dl.abs().max(1.0)),
        cost,
        resale,
        surplus_share,
        load_bound,
        renewable_bound,
    })
}

/// Hours are uncoupled and solved independently; infeasible hours are
/// reported in place and left out of `f_sub`.
pub fn schedule_day(
    inp: &ForecastInputs,
    prices: &MarketPrices,
    cp: &ChanceParams,
    opts: &SolveOptions,
    pool: &WorkerPool,
) -> Result<Schedule, ScheduleError> {
    prices.validate()?;
    inp.validate()?;
    cp.validate()?;
    opts.validate()?;
    if prices.hours() != inp.hours() {
        return Err(ScheduleError::Input(format!("{} price hours but {} forecast hours", prices.hours(), inp.hours())));
    }
    let hours: Vec<usize> = (0..inp.hours()).collect();
    let results = pool.map(&hours, |&t| solve_hour(inp, prices, cp, opts, t));
    let mut out = Vec::with_capacity(hours.len());
    for r in results {
        out.push(match r {
            Ok(d) => HourStatus::Solved(d),
            Err(ScheduleError::Infeasible { hour, constraint }) => {
                log::warn!("hour {hour} infeasible: {constraint}");
                HourStatus::Infeasible { hour, constraint }
            }
            Err(e) => return Err(e),
        });
    }
    let f_sub = out
        .iter()
        .map(|h| match h {
            HourStatus::Solved(d) => d.cost,
            HourStatus::Infeasible { .. } => 0.0,
        })
        .sum();
    Ok(Schedule { hours: out, f_sub })
}

/// `f_sub + beta * f_fee`.
pub fn total_cost(sub: &Schedule, fee_cost: f64, beta: f64) -> Result<f64, ScheduleError> {
    if !(beta > 0.0) {
        return Err(ScheduleError::Config(format!("beta must be positive, got {beta}")));
    }
    Ok(sub.f_sub + beta * fee_cost)
}

/// Real-time share and day-ahead plus renewable share of hour `t`, in percent.
pub fn rt_share(schedule: &Schedule, t: usize) -> Result<(f64, f64), ScheduleError> {
    let d = schedule.decision(t).ok_or_else(|| ScheduleError::Input(format!("hour {t} has no solved decision")))?;
    if !(d.g_dl > 0.0) {
        return Err(ScheduleError::Input(format!("hour {t} has zero load; shares are undefined")));
    }
    Ok((100.0 * d.g_rt / d.g_dl, 100.0 * (d.g_da + d.g_w) / d.g_dl))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourValidation {
    pub hour: usize,
    /// empirical `Pr(G_DL <= g_da + g_w)`
    pub gamma: f64,
    /// empirical `Pr(rho G_R1 <= g_w)`
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub per_hour: Vec<HourValidation>,
    /// worst hour
    pub gamma: f64,
    pub alpha: f64,
    pub samples: usize,
}

pub const MIN_VALIDATION_SAMPLES: usize = 10_000;

/// Fresh Monte-Carlo draws of both errors, checked against the schedule's
/// chance constraints hour by hour.
pub fn monte_carlo_validate(
    schedule: &Schedule,
    inp: &ForecastInputs,
    cp: &ChanceParams,
    n: usize,
    seed: u64,
    pool: &WorkerPool,
) -> Result<ValidationReport, ScheduleError> {
    if n < MIN_VALIDATION_SAMPLES {
        return Err(ScheduleError::Config(format!(
            "validation needs at least {MIN_VALIDATION_SAMPLES} samples, got {n}"
        )));
    }
    inp.validate()?;
    cp.validate()?;
    let solved: Vec<&HourDecision> = schedule
        .hours
        .iter()
        .filter_map(|h| match h {
            HourStatus::Solved(d) => Some(d),
            HourStatus::Infeasible { .. } => None,
        })
        .collect();
    let per_hour = pool.map(&solved, |d| -> Result<HourValidation, ScheduleError> {
        let mut rng = SeedTree::new(seed).indexed("mc-hour", d.hour as u64);
        let sc = draw(inp, cp, d.hour, n, &mut rng)?;
        let ok_load = sc.load.iter().filter(|&&l| l <= d.g_da + d.g_w).count();
        let ok_renew = sc.renewable_r1.iter().filter(|&&r| cp.renewable_share * r <= d.g_w).count();
        Ok(HourValidation { hour: d.hour, gamma: ok_load as f64 / n as f64, alpha: ok_renew as f64 / n as f64 })
    });
    let per_hour: Vec<HourValidation> = per_hour.into_iter().collect::<Result<_, _>>()?;
    let gamma = per_hour.iter().map(|h| h.gamma).fold(1.0, f64::min);
    let alpha = per_hour.iter().map(|h| h.alpha).fold(1.0, f64::min);
    Ok(ValidationReport { per_hour, gamma, alpha, samples: n })
}

/// Windy night, sunny day: wind covers much of the light night load and the
/// solar peak at 13:00 and 14:00 covers the whole load with margin.
pub fn windy_night_sunny_day() -> (MarketPrices, ForecastInputs) {
    let mut g_dl = Vec::with_capacity(24);
    let mut g_r = Vec::with_capacity(24);
    for h in 0..24 {
        let hf = h as f64;
        g_dl.push(2_600.0 + 1_400.0 * (-(hf - 19.0).powi(2) / 8.0).exp() + 800.0 * (-(hf - 13.5).powi(2) / 6.0).exp());
        let wind = if !(6..21).contains(&h) { 2_400.0 } else { 400.0 };
        let solar = 7_000.0 * (-(hf - 13.5).powi(2) / 2.0).exp();
        g_r.push(wind + solar);
    }
    let rho_da: Vec<f64> = (0..24).map(|h| 0.06 + 0.04 * (-((h as f64) - 15.0).powi(2) / 18.0).exp()).collect();
    let prices = MarketPrices {
        rho_rt: rho_da.iter().map(|p| 1.6 * p).collect(),
        rho_r: rho_da.iter().map(|p| 0.6 * p).collect(),
        rho_s: rho_da.iter().map(|p| 0.3 * p).collect(),
        rho_da,
    };
    let inputs = ForecastInputs {
        g_r,
        g_dl,
        error_model_r: default_renewable_error(),
        error_model_l: LoadError { mean: 0.0, variance: 0.03 * 0.03 },
    };
    (prices, inputs)
}

/// Three-mode relative renewable error used by the bundled day.
pub fn default_renewable_error() -> GMMModel {
    GMMModel::univariate(&[(0.5, 0.0, 0.05 * 0.05), (0.3, -0.15, 0.04 * 0.04), (0.2, 0.12, 0.03 * 0.03)])
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScheduleError {
    ScheduleError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>, ScheduleError> {
    let file = path.display().to_string();
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    let head = rd.headers().map_err(|e| ScheduleError::Parse { file: file.clone(), row: 1, msg: e.to_string() })?;
    if head.iter().collect::<Vec<_>>() != header {
        return Err(ScheduleError::Parse { file, row: 1, msg: format!("expected header {}", header.join(",")) });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ScheduleError::Parse { file: file.clone(), row, msg: e.to_string() })?;
        let vals = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| ScheduleError::Parse {
                    file: file.clone(),
                    row,
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != header.len() {
            return Err(ScheduleError::Parse {
                file: file.clone(),
                row,
                msg: format!("expected {} fields", header.len()),
            });
        }
        if vals[0] != (row - 2) as f64 {
            return Err(ScheduleError::Parse {
                file: file.clone(),
                row,
                msg: format!("hours must run 0, 1, 2, ... (got {})", vals[0]),
            });
        }
        rows.push(vals);
    }
    Ok(rows)
}

pub fn read_prices(path: &Path) -> Result<MarketPrices, ScheduleError> {
    let rows = read_table(path, &["hour", "rho_da", "rho_rt", "rho_r", "rho_s"])?;
    let p = MarketPrices {
        rho_da: rows.iter().map(|r| r[1]).collect(),
        rho_rt: rows.iter().map(|r| r[2]).collect(),
        rho_r: rows.iter().map(|r| r[3]).collect(),
        rho_s: rows.iter().map(|r| r[4]).collect(),
    };
    p.validate()?;
    Ok(p)
}

/// `(g_r, g_dl)` per hour.
pub fn read_forecasts(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ScheduleError> {
    let rows = read_table(path, &["hour", "g_r", "g_dl"])?;
    Ok((rows.iter().map(|r| r[1]).collect(), rows.iter().map(|r| r[2]).collect()))
}

pub fn write_prices(p: &MarketPrices, path: &Path) -> Result<(), ScheduleError> {
    let mut wr = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    wr.write_record(["hour", "rho_da", "rho_rt", "rho_r", "rho_s"]).map_err(|e| io_err(path, e))?;
    for h in 0..p.hours() {
        wr.write_record([
            h.to_string(),
            p.rho_da[h].to_string(),
            p.rho_rt[h].to_string(),
            p.rho_r[h].to_string(),
            p.rho_s[h].to_string(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    wr.flush().map_err(|e| io_err(path, e))
}

pub fn write_forecasts(inp: &ForecastInputs, path: &Path) -> Result<(), ScheduleError> {
    let mut wr = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    wr.write_record(["hour", "g_r", "g_dl"]).map_err(|e| io_err(path, e))?;
    for h in 0..inp.hours() {
        wr.write_record([h.to_string(), inp.g_r[h].to_string(), inp.g_dl[h].to_string()])
            .map_err(|e| io_err(path, e))?;
    }
    wr.flush().map_err(|e| io_err(path, e))
}

/// `hour,g_da,g_w,g_rt,delta,cost`; infeasible hours leave the values empty.
pub fn write_schedule_csv<W: std::io::Write>(s: &Schedule, w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["hour", "g_da", "g_w", "g_rt", "delta", "cost"])?;
    for h in &s.hours {
        match h {
            HourStatus::Solved(d) => wr.write_record([
                d.hour.to_string(),
                format!("{:.6}", d.g_da),
                format!("{:.6}", d.g_w),
                format!("{:.6}", d.g_rt),
                d.delta.to_string(),
                format!("{:.6}", d.cost),
            ])?,
            HourStatus::Infeasible { hour, .. } => wr.write_record([
                hour.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?,
        }
    }
    wr.flush()?;
    Ok(())
}

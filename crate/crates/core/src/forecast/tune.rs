//! Two-step hyper-parameter search: exhaustive grid traverse (GTA) over a
//! Cartesian grid, then particle-swarm refinement inside the best cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::svr::{train_svr, HyperParams};
use super::ForecastError;
use crate::rng::SeedTree;
use crate::workers::WorkerPool;

/// Validation share of the chronological split: 5 parts train, 1 part validate.
pub const DEFAULT_SPLIT: f64 = 1.0 / 6.0;
pub const MAX_GRID_CELLS: usize = 1_000_000;

/// Validation RMSE over the standard deviation of the validation targets.
///
/// Trains on the first `1 - split` of the samples (no shuffling).
pub fn risk(x: &[Vec<f64>], y: &[f64], h: HyperParams, split: f64) -> Result<f64, ForecastError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(ForecastError::Input(format!("split must lie in (0, 1), got {split}")));
    }
    if x.len() != y.len() {
        return Err(ForecastError::Input(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    let n_train = ((1.0 - split) * x.len() as f64).floor() as usize;
    if n_train < 2 || n_train >= x.len() {
        return Err(ForecastError::Input(format!(
            "split {split} of {} samples leaves {n_train} for training",
            x.len()
        )));
    }
    let model = train_svr(&x[..n_train], &y[..n_train], h)?;
    let val = &y[n_train..];
    let mse = x[n_train..].iter().zip(val).map(|(xi, yi)| (model.predict_unchecked(xi) - yi).powi(2)).sum::<f64>()
        / val.len() as f64;
    let mean = val.iter().sum::<f64>() / val.len() as f64;
    let var = val.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / val.len() as f64;
    let scale = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { mean.abs().max(1.0) };
    Ok(mse.sqrt() / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub steps: usize,
    /// geometric spacing; the search then runs on `ln` of the parameter
    pub log: bool,
}

impl GridAxis {
    pub fn linear(lower: f64, upper: f64, steps: usize) -> Self {
        Self { lower, upper, steps, log: false }
    }

    pub fn log(lower: f64, upper: f64, steps: usize) -> Self {
        Self { lower, upper, steps, log: true }
    }

    fn validate(&self, name: &str) -> Result<(), ForecastError> {
        if !(self.lower < self.upper) || self.steps < 2 || (self.log && self.lower <= 0.0) {
            return Err(ForecastError::Config(format!("grid axis {name} is invalid: {self:?}")));
        }
        Ok(())
    }

    fn to_search(&self, v: f64) -> f64 {
        if self.log {
            v.ln()
        } else {
            v
        }
    }

    fn from_search(&self, s: f64) -> f64 {
        if self.log {
            s.exp()
        } else {
            s
        }
    }

    /// Grid point `k`, equally spaced in search coordinates.
    pub fn point(&self, k: usize) -> f64 {
        let (a, b) = (self.to_search(self.lower), self.to_search(self.upper));
        let s = a + (b - a) * k as f64 / (self.steps - 1) as f64;
        if k == self.steps - 1 {
            self.upper
        } else if k == 0 {
            self.lower
        } else {
            self.from_search(s)
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps).map(|k| self.point(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub gamma: GridAxis,
    pub c: GridAxis,
    pub epsilon: GridAxis,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            gamma: GridAxis::log(2f64.powi(-10), 2f64.powi(4), 8),
            c: GridAxis::log(2f64.powi(-2), 2f64.powi(10), 8),
            epsilon: GridAxis::log(1e-3, 1e-1, 8),
        }
    }
}

impl GridSpec {
    pub fn axes(&self) -> [GridAxis; 3] {
        [self.gamma, self.c, self.epsilon]
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        self.gamma.validate("gamma")?;
        self.c.validate("c")?;
        self.epsilon.validate("epsilon")?;
        let cells = self.cell_count();
        if cells > MAX_GRID_CELLS {
            return Err(ForecastError::Capacity { cells, limit: MAX_GRID_CELLS });
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.axes().iter().map(|a| a.steps).fold(1usize, |acc, s| acc.saturating_mul(s))
    }

    /// Grid indices in row-major order (gamma slowest).
    pub fn indices(&self) -> Vec<[usize; 3]> {
        let [g, c, e] = self.axes();
        let mut out = Vec::with_capacity(self.cell_count());
        for i in 0..g.steps {
            for j in 0..c.steps {
                for k in 0..e.steps {
                    out.push([i, j, k]);
                }
            }
        }
        out
    }

    pub fn at(&self, idx: [usize; 3]) -> HyperParams {
        let [g, c, e] = self.axes();
        HyperParams { gamma: g.point(idx[0]), c: c.point(idx[1]), epsilon: e.point(idx[2]) }
    }

    /// One grid step around `idx` per axis, clipped to the axis range.
    pub fn neighborhood(&self, idx: [usize; 3]) -> CellBounds {
        let axes = self.axes();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for d in 0..3 {
            let a = axes[d];
            lo[d] = a.point(idx[d].saturating_sub(1));
            hi[d] = a.point((idx[d] + 1).min(a.steps - 1));
        }
        CellBounds { lower: HyperParams::from_array(lo), upper: HyperParams::from_array(hi), log: axes.map(|a| a.log) }
    }
}

/// Box in hyper-parameter space handed from GTA to PSO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellBounds {
    pub lower: HyperParams,
    pub upper: HyperParams,
    pub log: [bool; 3],
}

impl CellBounds {
    pub fn contains(&self, h: HyperParams) -> bool {
        let (lo, hi, v) = (self.lower.to_array(), self.upper.to_array(), h.to_array());
        (0..3).all(|d| v[d] >= lo[d] * (1.0 - 1e-12) && v[d] <= hi[d] * (1.0 + 1e-12))
    }

    fn to_search(&self, h: HyperParams) -> [f64; 3] {
        let v = h.to_array();
        std::array::from_fn(|d| if self.log[d] { v[d].ln() } else { v[d] })
    }

    fn from_search(&self, s: [f64; 3]) -> HyperParams {
        HyperParams::from_array(std::array::from_fn(|d| if self.log[d] { s[d].exp() } else { s[d] }))
    }

    fn search_box(&self) -> ([f64; 3], [f64; 3]) {
        (self.to_search(self.lower), self.to_search(self.upper))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtaCell {
    pub index: [usize; 3],
    pub center: HyperParams,
    pub risk: f64,
    pub bounds: CellBounds,
}

fn finite_or_inf(r: Result<f64, ForecastError>) -> f64 {
    match r {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

/// Evaluates the risk at every grid point (in parallel) and keeps the
/// `keep` lowest, ties broken by grid order.
pub fn gta_search(
    x: &[Vec<f64>],
    y: &[f64],
    g: &GridSpec,
    keep: usize,
    split: f64,
    pool: &WorkerPool,
) -> Result<Vec<GtaCell>, ForecastError> {
    if keep == 0 {
        return Err(ForecastError::Input("keep must be at least 1".into()));
    }
    g.validate()?;
    // surface data errors once instead of as a grid of infinities
    risk(x, y, g.at([0, 0, 0]), split)?;
    let idx = g.indices();
    let risks = pool.map(&idx, |&i| finite_or_inf(risk(x, y, g.at(i), split)));
    let mut order: Vec<usize> = (0..idx.len()).collect();
    order.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(keep)
        .map(|k| GtaCell { index: idx[k], center: g.at(idx[k]), risk: risks[k], bounds: g.neighborhood(idx[k]) })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iters: usize,
    pub phi1: f64,
    pub phi2: f64,
    /// velocity bound as a fraction of the cell width per dimension
    pub velocity_frac: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self { swarm_size: 12, iters: 15, phi1: 2.0, phi2: 2.0, velocity_frac: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: HyperParams,
    /// velocity in search coordinates (`ln` on log axes)
    pub velocity: [f64; 3],
    pub best_position: HyperParams,
    pub best_risk: f64,
    pub bounds: CellBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub global_best: HyperParams,
    pub global_risk: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl Swarm {
    /// Particle `k` lives in cell `k mod cells`; the first particle of each
    /// cell starts at its center, the rest uniformly inside; velocities start at 0.
    pub fn init(cells: &[GtaCell], cfg: &PsoConfig, rng: &mut impl Rng) -> Result<Self, ForecastError> {
        if cells.is_empty() {
            return Err(ForecastError::Input("no cells to refine".into()));
        }
        if cfg.swarm_size < 2 || cfg.iters < 1 {
            return Err(ForecastError::Config(format!(
                "swarm_size must be >= 2 and iters >= 1, got {} and {}",
                cfg.swarm_size, cfg.iters
            )));
        }
        let particles = (0..cfg.swarm_size)
            .map(|k| {
                let cell = &cells[k % cells.len()];
                let b = cell.bounds;
                let pos = if k < cells.len() {
                    cell.center
                } else {
                    let (lo, hi) = b.search_box();
                    b.from_search(std::array::from_fn(|d| {
                        if hi[d] > lo[d] {
                            rng.random_range(lo[d]..=hi[d])
                        } else {
                            lo[d]
                        }
                    }))
                };
                Particle { position: pos, velocity: [0.0; 3], best_position: pos, best_risk: f64::INFINITY, bounds: b }
            })
            .collect();
        Ok(Self::from_particles(particles, cfg))
    }

    pub fn from_particles(particles: Vec<Particle>, cfg: &PsoConfig) -> Self {
        let global_best = particles.first().map(|p| p.position).expect("non-empty swarm");
        Swarm { particles, global_best, global_risk: f64::INFINITY, phi1: cfg.phi1, phi2: cfg.phi2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoOutcome {
    pub best: HyperParams,
    pub risk: f64,
    /// global-best risk after each iteration
    pub trace: Vec<f64>,
}

/// Runs the swarm. Iteration 1 scores the initial positions; every later
/// iteration applies
/// `v <- v + phi1 theta1 (best_i - a) + phi2 theta2 (best_g - a)`, `a <- a + v`
/// with fresh `theta ~ U(0, 1)` per particle, term and dimension.
pub fn run_swarm(
    x: &[Vec<f64>],
    y: &[f64],
    mut swarm: Swarm,
    cfg: &PsoConfig,
    split: f64,
    pool: &WorkerPool,
    rng: &mut impl Rng,
) -> Result<PsoOutcome, ForecastError> {
    if cfg.iters < 1 {
        return Err(ForecastError::Config("iters must be at least 1".into()));
    }
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        if it > 0 {
            for p in swarm.particles.iter_mut() {
                let (lo, hi) = p.bounds.search_box();
                let gbest = p.bounds.to_search(swarm.global_best);
                let pbest = p.bounds.to_search(p.best_position);
                let mut pos = p.bounds.to_search(p.position);
                for d in 0..3 {
                    let (t1, t2): (f64, f64) = (rng.random(), rng.random());
                    let vmax = cfg.velocity_frac * (hi[d] - lo[d]);
                    let v =
                        p.velocity[d] + swarm.phi1 * t1 * (pbest[d] - pos[d]) + swarm.phi2 * t2 * (gbest[d] - pos[d]);
                    p.velocity[d] = v.clamp(-vmax, vmax);
                    pos[d] = (pos[d] + p.velocity[d]).clamp(lo[d], hi[d]);
                }
                p.position = p.bounds.from_search(pos);
            }
        }
        let points: Vec<HyperParams> = swarm.particles.iter().map(|p| p.position).collect();
        let risks = pool.map(&points, |&h| finite_or_inf(risk(x, y, h, split)));
        for (p, &r) in swarm.particles.iter_mut().zip(&risks) {
            if r < p.best_risk {
                p.best_risk = r;
                p.best_position = p.position;
            }
            if r < swarm.global_risk {
                swarm.global_risk = r;
                swarm.global_best = p.position;
            }
        }
        trace.push(swarm.global_risk);
    }
    if !swarm.global_risk.is_finite() {
        return Err(ForecastError::Numerical("no particle produced a finite risk".into()));
    }
    Ok(PsoOutcome { best: swarm.global_best, risk: swarm.global_risk, trace })
}

pub fn pso_refine(
    x: &[Vec<f64>],
    y: &[f64],
    cells: &[GtaCell],
    cfg: &PsoConfig,
    split: f64,
    pool: &WorkerPool,
) -> Result<PsoOutcome, ForecastError> {
    let mut rng = SeedTree::new(cfg.seed).stream("pso");
    let swarm = Swarm::init(cells, cfg, &mut rng)?;
    run_swarm(x, y, swarm, cfg, split, pool, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub keep: usize,
    pub skip_pso: bool,
    pub split: f64,
    pub pso: PsoConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { keep: 3, skip_pso: false, split: DEFAULT_SPLIT, pso: PsoConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: HyperParams,
    pub risk: f64,
    pub cells: Vec<GtaCell>,
    pub pso_trace: Vec<f64>,
}

/// GTA then PSO; with `skip_pso` the best grid point is returned.
pub fn optimize_hyperparams(
    x: &[Vec<f64>],
    y: &[f64],
    g: &GridSpec,
    cfg: &TuneConfig,
    pool: &WorkerPool,
) -> Result<TuneOutcome, ForecastError> {
    let cells = gta_search(x, y, g, cfg.keep, cfg.split, pool)?;
    if cfg.skip_pso {
        let top = &cells[0];
        return Ok(TuneOutcome { best: top.center, risk: top.risk, cells, pso_trace: Vec::new() });
    }
    let out = pso_refine(x, y, &cells, &cfg.pso, cfg.split, pool)?;
    Ok(TuneOutcome { best: out.best, risk: out.risk, cells, pso_trace: out.trace })
}

//! JSON run configuration. Every section is optional and falls back to the
//! library defaults; relative input paths resolve against the config file.

use std::path::{Path, PathBuf};

use gridopt::forecast::{GridSpec, HyperParams, TuneConfig};
use gridopt::opf3::Opf3Settings;
use gridopt::scheduler::{ChanceParams, LoadError, SolveOptions};
use gridopt::solver::ADMMParams;
use gridopt::uncertainty::{EMConfig, GAEMConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub buses: Option<PathBuf>,
    pub branches: Option<PathBuf>,
    /// `timestamp,value` load history
    pub series: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub forecasts: Option<PathBuf>,
    /// fitted renewable error mixture (JSON)
    pub error_model: Option<PathBuf>,
    /// `timestamp,value` relative renewable forecast errors
    pub errors: Option<PathBuf>,
    pub regression: Option<PathBuf>,
}

impl Inputs {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.buses,
            &mut self.branches,
            &mut self.series,
            &mut self.prices,
            &mut self.forecasts,
            &mut self.error_model,
            &mut self.errors,
            &mut self.regression,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        [
            &self.buses,
            &self.branches,
            &self.series,
            &self.prices,
            &self.forecasts,
            &self.error_model,
            &self.errors,
            &self.regression,
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }
}

/// Solver tolerance overrides on top of the branch-flow defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmOverrides {
    pub eps_abs: Option<f64>,
    pub eps_rel: Option<f64>,
    pub max_iter: Option<usize>,
}

impl AdmmOverrides {
    pub fn apply(&self, mut p: ADMMParams) -> ADMMParams {
        if let Some(v) = self.eps_abs {
            p.eps_abs = v;
        }
        if let Some(v) = self.eps_rel {
            p.eps_rel = v;
        }
        if let Some(v) = self.max_iter {
            p.max_iter = v;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub window: usize,
    pub horizon: usize,
    /// share of the series held out for the forecast report
    pub test_fraction: f64,
    pub hyper: HyperParams,
    pub grid: GridSpec,
    pub tune: TuneConfig,
    /// length and noise of the synthetic load used when no series is given
    pub synthetic_hours: usize,
    pub synthetic_noise: f64,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            window: 24,
            horizon: 1,
            test_fraction: 0.25,
            hyper: HyperParams { gamma: 0.1, c: 10.0, epsilon: 0.01 },
            grid: GridSpec::default(),
            tune: TuneConfig::default(),
            synthetic_hours: 24 * 7 * 6,
            synthetic_noise: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconfigSection {
    pub load_scale: f64,
}

impl Default for ReconfigSection {
    fn default() -> Self {
        Self { load_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Opf3Section {
    pub settings: Opf3Settings,
    /// when set, the headroom is the default share of this renewable output
    pub renewable_kw: Option<f64>,
    pub load_scale: f64,
}

impl Default for Opf3Section {
    fn default() -> Self {
        Self { settings: Opf3Settings::default(), renewable_kw: None, load_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorsSection {
    /// component count of the fixed-k mixture
    pub fixed_k: usize,
    pub em: EMConfig,
    pub gaem: GAEMConfig,
    pub bins: usize,
}

impl Default for ErrorsSection {
    fn default() -> Self {
        Self { fixed_k: 3, em: EMConfig::default(), gaem: GAEMConfig::default(), bins: gridopt::uncertainty::ETA_BINS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub chance: ChanceParams,
    pub solve: SolveOptions,
    pub load_error: LoadError,
    pub beta: f64,
    /// regulation fee added to the total as `beta * fee_cost`
    pub fee_cost: f64,
    pub validation_samples: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            chance: ChanceParams::default(),
            solve: SolveOptions::default(),
            load_error: LoadError { mean: 0.0, variance: 0.03 * 0.03 },
            beta: 1.0,
            fee_cost: 0.0,
            validation_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressSection {
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BenchTarget {
    #[default]
    Reconfig,
    Tune,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub target: BenchTarget,
    /// empty means 1, 2, 4 and the machine's parallelism
    pub workers: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub inputs: Inputs,
    pub admm: AdmmOverrides,
    pub forecast: ForecastSection,
    pub reconfig: ReconfigSection,
    pub opf3: Opf3Section,
    pub errors: ErrorsSection,
    pub schedule: ScheduleSection,
    pub regress: RegressSection,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())).at(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inputs.resolve(base);
        if let Some(out) = &cfg.out {
            if out.is_relative() {
                cfg.out = Some(base.join(out));
            }
        }
        Ok(cfg)
    }
}

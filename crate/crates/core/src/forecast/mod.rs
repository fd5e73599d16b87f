//! Short-term load forecasting with kernel SVR and two-step hyper-parameter search.

mod series;
mod svr;
mod tune;

pub use series::{
    error_metrics, forecast_sliding, lag_dataset, read_series, synthetic_load, train_forecaster, tune_forecaster,
    write_forecast_csv, write_series, ErrorMetrics, ForecastPoint, Forecaster, TimeSeries,
};
pub use svr::{predict, rbf, train_svr, HyperParams, SVRModel, KKT_TOL, MAX_SMO_ITER};
pub use tune::{
    gta_search, optimize_hyperparams, pso_refine, risk, run_swarm, CellBounds, GridAxis, GridSpec, GtaCell, Particle,
    PsoConfig, PsoOutcome, Swarm, TuneConfig, TuneOutcome, DEFAULT_SPLIT, MAX_GRID_CELLS,
};

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid has {cells} cells, limit is {limit}")]
    Capacity { cells: usize, limit: usize },
    #[error("{file}:{row}: {msg}")]
    Parse { file: String, row: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

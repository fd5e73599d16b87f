use std::path::Path;

use gridopt::analytics::AnalyticsError;
use gridopt::forecast::ForecastError;
use gridopt::grid::GridError;
use gridopt::opf3::Opf3Error;
use gridopt::reconfig::ReconfigError;
use gridopt::scheduler::ScheduleError;
use gridopt::solver::SolverError;
use gridopt::uncertainty::UncertaintyError;
use gridopt::workers::PoolError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Input,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Input => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

/// Failure of one run, printed as JSON on stderr and written next to the artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, exit_code: kind.exit_code(), message: message.into(), path: None, row: None }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Input, message)
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numerical, message)
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    fn at_row(mut self, path: &str, row: usize) -> Self {
        self.path = Some(path.to_string());
        self.row = Some(row);
        self
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::input(format!("{}: {e}", path.display())).at(path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        let msg = e.to_string();
        match e {
            GridError::Parse { file, row, .. } => Self::input(msg).at_row(&file, row),
            GridError::Io { path, .. } => Self::input(msg).at(path),
            _ => Self::input(msg),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Divergence { .. } => Self::numerical(e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        let msg = e.to_string();
        match e {
            ForecastError::Parse { file, row, .. } => Self::input(msg).at_row(&file, row),
            ForecastError::Io { path, .. } => Self::input(msg).at(path),
            ForecastError::Numerical(_) => Self::numerical(msg),
            _ => Self::input(msg),
        }
    }
}

impl From<ReconfigError> for CliError {
    fn from(e: ReconfigError) -> Self {
        match e {
            ReconfigError::Grid(g) => g.into(),
            ReconfigError::Solver(s) => s.into(),
            ReconfigError::NoFeasible(_) => Self::numerical(e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<Opf3Error> for CliError {
    fn from(e: Opf3Error) -> Self {
        match e {
            Opf3Error::Grid(g) => g.into(),
            Opf3Error::Solver(s) => s.into(),
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<UncertaintyError> for CliError {
    fn from(e: UncertaintyError) -> Self {
        let msg = e.to_string();
        match e {
            UncertaintyError::Io { path, .. } => Self::input(msg).at(path),
            UncertaintyError::Model(_) => Self::numerical(msg),
            _ => Self::input(msg),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        let msg = e.to_string();
        match e {
            ScheduleError::Parse { file, row, .. } => Self::input(msg).at_row(&file, row),
            ScheduleError::Io { path, .. } => Self::input(msg).at(path),
            ScheduleError::Infeasible { .. } => Self::numerical(msg),
            ScheduleError::Model(m) => m.into(),
            _ => Self::input(msg),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        let msg = e.to_string();
        match e {
            AnalyticsError::Parse { file, row, .. } => Self::input(msg).at_row(&file, row),
            AnalyticsError::Io { path, .. } => Self::input(msg).at(path),
            AnalyticsError::Singular(_) => Self::numerical(msg),
            AnalyticsError::Input(_) => Self::input(msg),
        }
    }
}

impl From<PoolError> for CliError {
    fn from(e: PoolError) -> Self {
        Self::usage(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_kind() {
        assert_eq!(CliError::usage("x").exit_code, 1);
        assert_eq!(CliError::from(GridError::Io { path: "a.csv".into(), msg: "gone".into() }).exit_code, 2);
        assert_eq!(CliError::from(SolverError::Divergence { iteration: 3 }).exit_code, 3);
        let e = CliError::from(ScheduleError::Parse { file: "p.csv".into(), row: 4, msg: "bad".into() });
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(
            (v["kind"].as_str(), v["path"].as_str(), v["row"].as_u64()),
            (Some("input"), Some("p.csv"), Some(4))
        );
    }
}

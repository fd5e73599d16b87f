pub mod analytics;
pub mod forecast;
pub mod grid;
pub mod opf3;
pub mod reconfig;
pub mod rng;
pub mod scheduler;
pub mod solver;
pub mod uncertainty;
pub mod workers;

/// Version of the library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Deterministic discrete-event simulator for microservice applications.
//!
//! Client requests are trees of stage requests. A router sends each stage
//! through the gateway's load balancer to one instance of its microservice;
//! the instance orders its queue by a queue policy and, when a stage finishes,
//! forwards its children back through the gateway. The recorder turns the
//! timeline into slowdown, utilization and imbalance figures.
//!
//! ```no_run
//! use msim_core::{config::SimConfig, run::run_simulation};
//!
//! let cfg = SimConfig::default();
//! let out = run_simulation(&cfg).unwrap();
//! println!("{}", out.run.report.to_json());
//! ```

use std::path::PathBuf;

pub mod config;
pub mod deadline;
pub mod engine;
pub mod gateway;
pub mod instance;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod run;
pub mod sim;
pub mod sweep;
pub mod time;
pub mod workload;

pub use config::{load_config, ConfigError, SimConfig};
pub use gateway::LbPolicy;
pub use instance::{DeadlineVariant, QueuePolicy};
pub use metrics::SimReport;
pub use run::{run_simulation, write_outputs};
pub use sim::{simulate, SimError, SimOutput, SimSettings};
pub use time::{Micros, SimTime};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid workload: {0}")]
    Workload(#[from] workload::WorkloadError),
    #[error(transparent)]
    Trace(#[from] workload::TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl Error {
    /// True for problems with the user's inputs (config, trace file) rather
    /// than failures while running or writing results.
    pub fn is_usage_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Workload(_) | Error::Input { .. } => true,
            Error::Trace(workload::TraceError::Malformed { .. } | workload::TraceError::Csv(_)) => true,
            Error::Trace(workload::TraceError::Io(_)) => true,
            Error::Sim(_) | Error::Output { .. } => false,
        }
    }
}

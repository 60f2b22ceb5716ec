//! Simulator configuration: a JSON document whose absent keys take the
//! reference-experiment defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::LbPolicy;
use crate::instance::{QueuePolicy, DEFAULT_QUANTUM_US};
use crate::sim::SimSettings;
use crate::time::{Micros, SimTime};
use crate::workload::{
    ArrivalModel, CommunicationModel, DepthModel, ExecModel, RoutingModel, WorkloadError, WorkloadSpec,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {field}: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Dotted path of the offending key, for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub end_time: Micros,
    pub exec_model: ExecModel,
    pub arrival_model: ArrivalModel,
    pub depth_model: DepthModel,
    pub sla: Micros,
    pub routing: RoutingModel,
    pub communication: CommunicationModel,
    pub lb_policy: LbPolicy,
    pub queue_policy: QueuePolicy,
    pub fair_share_quantum: Micros,
    /// Instance count per microservice.
    pub microservices: Vec<u16>,
    pub seed: u64,
    pub utilization_interval: Micros,
    pub imbalance_interval: Micros,
    pub trace_in: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            end_time: Micros(24 * 3_600_000_000),
            exec_model: ExecModel::default(),
            arrival_model: ArrivalModel::default(),
            depth_model: DepthModel::default(),
            sla: Micros(4_000_000),
            routing: RoutingModel::default(),
            communication: CommunicationModel::default(),
            lb_policy: LbPolicy::RoundRobin,
            queue_policy: QueuePolicy::Fcfs,
            fair_share_quantum: Micros(DEFAULT_QUANTUM_US),
            microservices: vec![4, 2, 1, 1],
            seed: 1,
            utilization_interval: Micros(3_600_000_000),
            imbalance_interval: Micros(300_000_000),
            trace_in: None,
            trace_out: None,
        }
    }
}

impl SimConfig {
    /// Parses a JSON document; an empty document means all defaults.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: SimConfig = if text.trim().is_empty() {
            SimConfig::default()
        } else {
            serde_json::from_str(text).map_err(|source| ConfigError::Parse {
                path: origin.to_path_buf(),
                source,
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn workload(&self) -> WorkloadSpec {
        WorkloadSpec {
            arrival: self.arrival_model.clone(),
            exec: self.exec_model.clone(),
            depth: self.depth_model.clone(),
            routing: self.routing.clone(),
            communication: self.communication.clone(),
            sla: self.sla.get(),
        }
    }

    /// The queue policy with the configured fair-share quantum applied.
    pub fn effective_queue_policy(&self) -> QueuePolicy {
        self.queue_policy.with_quantum(self.fair_share_quantum.get())
    }

    pub fn settings(&self) -> SimSettings {
        SimSettings {
            seed: self.seed,
            lb_policy: self.lb_policy,
            queue_policy: self.effective_queue_policy(),
            instance_counts: self.microservices.clone(),
            end_time: SimTime(self.end_time.get()),
            utilization_interval: self.utilization_interval.get(),
            imbalance_interval: self.imbalance_interval.get(),
            retain_records: true,
            retain_requests: false,
        }
    }

    /// Offered load as a fraction of total instance capacity:
    /// `E[exec] * E[stages] / (mean gap * instances)`.
    pub fn offered_utilization(&self) -> f64 {
        let instances: u64 = self.microservices.iter().map(|&c| c as u64).sum();
        let work = self.exec_model.mean_micros() * self.workload().expected_stages();
        work / (self.arrival_model.mean_interarrival.get() as f64 * instances as f64)
    }

    /// Same config with the execution-time scale chosen so that the offered
    /// load is `target`; the log-normal spread is kept.
    pub fn with_offered_utilization(&self, target: f64) -> SimConfig {
        let instances: u64 = self.microservices.iter().map(|&c| c as u64).sum();
        let mean = target * self.arrival_model.mean_interarrival.get() as f64 * instances as f64
            / self.workload().expected_stages();
        SimConfig {
            exec_model: ExecModel::with_mean(mean, self.exec_model.sigma),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: Micros| {
            if v.get() == 0 {
                Err(ConfigError::validation(field, "must be > 0"))
            } else {
                Ok(())
            }
        };
        positive("end_time", self.end_time)?;
        positive("sla", self.sla)?;
        positive("fair_share_quantum", self.fair_share_quantum)?;
        positive("utilization_interval", self.utilization_interval)?;
        positive("imbalance_interval", self.imbalance_interval)?;
        if self.microservices.is_empty() {
            return Err(ConfigError::validation("microservices", "at least one microservice is required"));
        }
        if let Some(i) = self.microservices.iter().position(|&c| c == 0) {
            return Err(ConfigError::validation(format!("microservices[{i}]"), "instance count must be >= 1"));
        }
        let spec = self.workload();
        spec.validate().map_err(|e| match e {
            WorkloadError::InvalidModel { field, reason } => ConfigError::validation(field, reason),
            WorkloadError::SingleMicroservice { .. } => ConfigError::validation("depth_model.outcomes", e.to_string()),
            WorkloadError::MicroserviceCount { .. } => {
                ConfigError::validation("communication.comm_probabilities", e.to_string())
            }
        })?;
        if spec.microservice_count() != self.microservices.len() {
            return Err(ConfigError::validation(
                "microservices",
                format!(
                    "{} instance counts given but routing.call_probabilities has {} entries",
                    self.microservices.len(),
                    spec.microservice_count()
                ),
            ));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SimConfig::from_json(&text, path)
}

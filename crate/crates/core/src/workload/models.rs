//! Statistical models for arrivals, execution times, depth and call targets.

use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::model::MicroserviceId;
use crate::rng::RngStream;
use crate::time::{round_micros, Micros};

use super::WorkloadError;

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Exponential inter-arrival gaps, i.e. a Poisson arrival process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalModel {
    pub mean_interarrival: Micros,
}

impl Default for ArrivalModel {
    fn default() -> Self {
        ArrivalModel {
            mean_interarrival: Micros(1066),
        }
    }
}

impl ArrivalModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.mean_interarrival.get() == 0 {
            return Err(WorkloadError::invalid("mean_interarrival", "must be > 0"));
        }
        Ok(())
    }

    pub fn sample_interarrival(&self, rng: &mut RngStream) -> u64 {
        // Inverse transform; 1 - u lies in (0, 1] so the log is finite.
        let u = rng.draw_uniform();
        let gap = -(self.mean_interarrival.get() as f64) * (1.0 - u).ln();
        round_micros(gap, 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[serde(alias = "us")]
    Micros,
    #[default]
    #[serde(alias = "ms")]
    Millis,
}

impl TimeUnit {
    pub fn micros(self) -> f64 {
        match self {
            TimeUnit::Micros => 1.0,
            TimeUnit::Millis => 1_000.0,
        }
    }
}

/// Log-normal execution times: `exp(N(mu, sigma))` expressed in `unit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecModel {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub unit: TimeUnit,
}

impl Default for ExecModel {
    fn default() -> Self {
        ExecModel {
            mu: 4.13,
            sigma: 3.48,
            unit: TimeUnit::Millis,
        }
    }
}

impl ExecModel {
    /// A model that always yields `micros`.
    pub fn constant(micros: u64) -> Self {
        ExecModel {
            mu: (micros as f64).ln(),
            sigma: 0.0,
            unit: TimeUnit::Micros,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !self.mu.is_finite() {
            return Err(WorkloadError::invalid("mu", "must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(WorkloadError::invalid("sigma", "must be finite and >= 0"));
        }
        Ok(())
    }

    fn distribution(&self) -> LogNormal<f64> {
        LogNormal::new(self.mu, self.sigma).expect("validated log-normal parameters")
    }

    pub fn sample_exec_time(&self, rng: &mut RngStream) -> u64 {
        let x: f64 = self.distribution().sample(rng);
        round_micros(x * self.unit.micros(), 1)
    }

    /// Log-normal in microseconds with spread `sigma` and mean `mean_us`.
    pub fn with_mean(mean_us: f64, sigma: f64) -> Self {
        ExecModel {
            mu: mean_us.ln() - sigma * sigma / 2.0,
            sigma,
            unit: TimeUnit::Micros,
        }
    }

    /// `exp(mu + sigma^2 / 2)` in microseconds.
    pub fn mean_micros(&self) -> f64 {
        (self.mu + self.sigma * self.sigma / 2.0).exp() * self.unit.micros()
    }
}

/// Discrete distribution over the maximum depth of a client request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthModel {
    pub outcomes: Vec<(u32, f64)>,
}

impl Default for DepthModel {
    fn default() -> Self {
        DepthModel {
            outcomes: vec![(0, 0.5), (2, 0.5)],
        }
    }
}

impl DepthModel {
    pub fn fixed(depth: u32) -> Self {
        DepthModel {
            outcomes: vec![(depth, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.outcomes.is_empty() {
            return Err(WorkloadError::invalid("outcomes", "at least one outcome is required"));
        }
        if self.outcomes.iter().any(|&(_, p)| !(p.is_finite() && p > 0.0)) {
            return Err(WorkloadError::invalid("outcomes", "probabilities must be > 0"));
        }
        check_sum("outcomes", self.outcomes.iter().map(|&(_, p)| p))
    }

    pub fn max_depth(&self) -> u32 {
        self.outcomes.iter().map(|&(d, _)| d).max().unwrap_or(0)
    }

    pub fn sample_depth(&self, rng: &mut RngStream) -> u32 {
        let total: f64 = self.outcomes.iter().map(|&(_, p)| p).sum();
        let target = rng.draw_uniform() * total;
        let mut acc = 0.0;
        for &(depth, p) in &self.outcomes {
            acc += p;
            if target < acc {
                return depth;
            }
        }
        self.outcomes.last().map(|&(d, _)| d).unwrap_or(0)
    }
}

/// Which microservices the router invokes at depth 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingModel {
    pub call_probabilities: Vec<f64>,
    #[serde(default = "one")]
    pub fanout: u32,
}

fn one() -> u32 {
    1
}

pub(crate) const PAPER_CALL_WEIGHTS: [f64; 4] = [0.62, 0.18, 0.08, 0.12];

impl Default for RoutingModel {
    fn default() -> Self {
        RoutingModel {
            call_probabilities: PAPER_CALL_WEIGHTS.to_vec(),
            fanout: 1,
        }
    }
}

impl RoutingModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        check_weights("call_probabilities", &self.call_probabilities)?;
        if self.fanout == 0 {
            return Err(WorkloadError::invalid("fanout", "must be >= 1"));
        }
        let eligible = self.call_probabilities.iter().filter(|&&w| w > 0.0).count();
        if self.fanout as usize > eligible {
            return Err(WorkloadError::invalid(
                "fanout",
                "exceeds the number of microservices with non-zero call probability",
            ));
        }
        Ok(())
    }

    /// `fanout` distinct depth-0 targets.
    pub fn sample_targets(&self, rng: &mut RngStream) -> Vec<MicroserviceId> {
        sample_distinct(&self.call_probabilities, None, self.fanout as usize, rng)
    }
}

/// Which microservices a completed stage forwards to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunicationModel {
    pub comm_probabilities: Vec<f64>,
    #[serde(default = "one")]
    pub fanout: u32,
}

impl Default for CommunicationModel {
    fn default() -> Self {
        CommunicationModel {
            comm_probabilities: PAPER_CALL_WEIGHTS.to_vec(),
            fanout: 1,
        }
    }
}

impl CommunicationModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        check_weights("comm_probabilities", &self.comm_probabilities)?;
        if self.fanout == 0 {
            return Err(WorkloadError::invalid("fanout", "must be >= 1"));
        }
        Ok(())
    }

    /// Checks that every possible caller leaves `fanout` eligible callees.
    pub fn validate_for_callers(&self, callers: impl IntoIterator<Item = MicroserviceId>) -> Result<(), WorkloadError> {
        for caller in callers {
            let eligible = self
                .comm_probabilities
                .iter()
                .enumerate()
                .filter(|&(i, &w)| i != caller.index() && w > 0.0)
                .count();
            if eligible < self.fanout as usize {
                return Err(WorkloadError::invalid(
                    "comm_probabilities",
                    "a caller is left with fewer eligible callees than the fanout after excluding itself",
                ));
            }
        }
        Ok(())
    }

    /// `fanout` distinct callees, never `caller` itself; weights are renormalized
    /// over the remaining microservices.
    pub fn sample_callees(&self, caller: MicroserviceId, rng: &mut RngStream) -> Vec<MicroserviceId> {
        sample_distinct(&self.comm_probabilities, Some(caller), self.fanout as usize, rng)
    }
}

fn check_weights(field: &'static str, weights: &[f64]) -> Result<(), WorkloadError> {
    if weights.is_empty() {
        return Err(WorkloadError::invalid(field, "at least one microservice is required"));
    }
    if weights.len() > u16::MAX as usize {
        return Err(WorkloadError::invalid(field, "too many microservices"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(WorkloadError::invalid(field, "weights must be >= 0"));
    }
    check_sum(field, weights.iter().copied())
}

fn check_sum(field: &'static str, values: impl Iterator<Item = f64>) -> Result<(), WorkloadError> {
    let sum: f64 = values.sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(WorkloadError::invalid(field, "probabilities must sum to 1"));
    }
    Ok(())
}

/// Weighted sampling without replacement, skipping `exclude`.
fn sample_distinct(
    weights: &[f64],
    exclude: Option<MicroserviceId>,
    count: usize,
    rng: &mut RngStream,
) -> Vec<MicroserviceId> {
    let mut taken = vec![false; weights.len()];
    if let Some(ex) = exclude {
        if let Some(slot) = taken.get_mut(ex.index()) {
            *slot = true;
        }
    }
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(w, _)| *w)
            .sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.draw_uniform() * total;
        let mut acc = 0.0;
        let mut choice = None;
        for (i, (&w, &t)) in weights.iter().zip(&taken).enumerate() {
            if t || w <= 0.0 {
                continue;
            }
            acc += w;
            choice = Some(i);
            if target < acc {
                break;
            }
        }
        let i = choice.expect("positive total implies an eligible entry");
        taken[i] = true;
        picked.push(MicroserviceId(i as u16));
    }
    picked
}

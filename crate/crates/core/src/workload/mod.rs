//! Workload generation: client request trees built from statistical models,
//! plus trace export and replay.

mod models;
pub mod trace;

pub use models::{ArrivalModel, CommunicationModel, DepthModel, ExecModel, RoutingModel, TimeUnit};
pub use trace::{export_trace, replay_trace, read_trace, write_trace, TimestampMode, TraceError, TraceRow};

use crate::model::{ClientRequest, MicroserviceId};
use crate::rng::Streams;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("{field}: {reason}")]
    InvalidModel { field: String, reason: &'static str },
    #[error("depth {depth} requested but only one microservice is configured")]
    SingleMicroservice { depth: u32 },
    #[error("routing and communication models disagree on the number of microservices ({routing} vs {communication})")]
    MicroserviceCount { routing: usize, communication: usize },
}

impl WorkloadError {
    pub(crate) fn invalid(field: impl Into<String>, reason: &'static str) -> Self {
        WorkloadError::InvalidModel {
            field: field.into(),
            reason,
        }
    }

    /// Prefixes the offending field with the enclosing config key.
    pub fn within(self, prefix: &str) -> Self {
        match self {
            WorkloadError::InvalidModel { field, reason } => WorkloadError::InvalidModel {
                field: format!("{prefix}.{field}"),
                reason,
            },
            other => other,
        }
    }
}

/// Every model the router needs to build client requests.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkloadSpec {
    pub arrival: ArrivalModel,
    pub exec: ExecModel,
    pub depth: DepthModel,
    pub routing: RoutingModel,
    pub communication: CommunicationModel,
    /// Total deadline budget per client request, microseconds.
    pub sla: u64,
}

impl WorkloadSpec {
    pub fn microservice_count(&self) -> usize {
        self.routing.call_probabilities.len()
    }

    /// Expected number of stages in one client request: every path reaches the
    /// sampled depth and each level multiplies by the fanout.
    pub fn expected_stages(&self) -> f64 {
        let roots = self.routing.fanout as f64;
        let fanout = self.communication.fanout as f64;
        self.depth
            .outcomes
            .iter()
            .map(|&(d, p)| p * (0..=d).map(|k| roots * fanout.powi(k as i32)).sum::<f64>())
            .sum()
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.arrival.validate().map_err(|e| e.within("arrival_model"))?;
        self.exec.validate().map_err(|e| e.within("exec_model"))?;
        self.depth.validate().map_err(|e| e.within("depth_model"))?;
        self.routing.validate().map_err(|e| e.within("routing"))?;
        self.communication.validate().map_err(|e| e.within("communication"))?;
        let n = self.microservice_count();
        if self.communication.comm_probabilities.len() != n {
            return Err(WorkloadError::MicroserviceCount {
                routing: n,
                communication: self.communication.comm_probabilities.len(),
            });
        }
        let max_depth = self.depth.max_depth();
        if max_depth > 0 {
            if n < 2 {
                return Err(WorkloadError::SingleMicroservice { depth: max_depth });
            }
            let callers = (0..n as u16).map(MicroserviceId);
            self.communication
                .validate_for_callers(callers)
                .map_err(|e| e.within("communication"))?;
        }
        Ok(())
    }
}

/// Samples one client request: depth, depth-0 targets, then one level of callees
/// at a time until every path reaches the sampled depth. Execution times are
/// drawn for each stage in level order.
pub fn build_client_request(
    id: u64,
    now: SimTime,
    spec: &WorkloadSpec,
    streams: &mut Streams,
) -> Result<ClientRequest, WorkloadError> {
    let depth = spec.depth.sample_depth(&mut streams.depth);
    if depth > 0 && spec.microservice_count() < 2 {
        return Err(WorkloadError::SingleMicroservice { depth });
    }
    let mut req = ClientRequest::new(id, now, spec.sla);
    let mut frontier = Vec::new();
    for target in spec.routing.sample_targets(&mut streams.routing) {
        let exec = spec.exec.sample_exec_time(&mut streams.exec);
        frontier.push(req.add_root(target, exec));
    }
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * spec.communication.fanout as usize);
        for parent in frontier {
            let caller = req.stage(parent).target;
            for callee in spec.communication.sample_callees(caller, &mut streams.communication) {
                let exec = spec.exec.sample_exec_time(&mut streams.exec);
                next.push(req.add_child(parent, callee, exec));
            }
        }
        frontier = next;
    }
    req.max_depth = depth;
    Ok(req)
}

/// Open-loop client: yields requests with Poisson arrivals until `end`.
///
/// Request ids are assigned from 0 in arrival order.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: WorkloadSpec,
    streams: Streams,
    next_id: u64,
    clock: SimTime,
    end: SimTime,
}

impl Generator {
    pub fn new(spec: WorkloadSpec, seed: u64, end: SimTime) -> Result<Self, WorkloadError> {
        spec.validate()?;
        Ok(Generator {
            spec,
            streams: Streams::new(seed),
            next_id: 0,
            clock: SimTime::ZERO,
            end,
        })
    }
}

impl Iterator for Generator {
    type Item = ClientRequest;

    fn next(&mut self) -> Option<ClientRequest> {
        let gap = self.spec.arrival.sample_interarrival(&mut self.streams.arrival);
        let at = SimTime(self.clock.0.checked_add(gap)?);
        if at >= self.end {
            self.clock = self.end;
            return None;
        }
        self.clock = at;
        let id = self.next_id;
        self.next_id += 1;
        let req = build_client_request(id, at, &self.spec, &mut self.streams)
            .expect("validated workload spec");
        Some(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelError;

    fn spec() -> WorkloadSpec {
        WorkloadSpec {
            sla: 4_000_000,
            ..Default::default()
        }
    }

    #[test]
    fn depth_zero_yields_a_single_stage() {
        let spec = WorkloadSpec {
            depth: DepthModel::fixed(0),
            ..spec()
        };
        let req = build_client_request(3, SimTime(10), &spec, &mut Streams::new(1)).unwrap();
        assert_eq!(req.stage_count(), 1);
        assert_eq!(req.stage(0).called_by, None);
        assert_eq!(req.created_at, SimTime(10));
        assert_eq!(req.request_id, 3);
    }

    #[test]
    fn depth_two_builds_a_sequential_chain() {
        let spec = WorkloadSpec {
            depth: DepthModel::fixed(2),
            ..spec()
        };
        let mut streams = Streams::new(5);
        for id in 0..200 {
            let req = build_client_request(id, SimTime(0), &spec, &mut streams).unwrap();
            req.validate().unwrap();
            assert_eq!(req.stage_count(), 3);
            assert_eq!(req.paths_max_depth(), 2);
            let order = req.level_order();
            for pair in order.windows(2) {
                let (p, c) = (req.stage(pair[0]), req.stage(pair[1]));
                assert_eq!(c.called_by, Some(p.target));
                assert_ne!(c.target, p.target);
            }
        }
    }

    #[test]
    fn fanout_fills_the_tree_to_the_sampled_depth() {
        let spec = WorkloadSpec {
            depth: DepthModel::fixed(2),
            routing: RoutingModel {
                fanout: 2,
                ..Default::default()
            },
            communication: CommunicationModel {
                fanout: 2,
                ..Default::default()
            },
            ..spec()
        };
        let req = build_client_request(0, SimTime(0), &spec, &mut Streams::new(9)).unwrap();
        assert_eq!(req.stage_count(), 2 + 4 + 8);
        assert_eq!(req.paths_max_depth(), 2);
        assert!(!matches!(req.validate(), Err(ModelError::SelfCall { .. })));
    }

    #[test]
    fn depth_needs_a_second_microservice() {
        let spec = WorkloadSpec {
            depth: DepthModel::fixed(2),
            routing: RoutingModel {
                call_probabilities: vec![1.0],
                fanout: 1,
            },
            communication: CommunicationModel {
                comm_probabilities: vec![1.0],
                fanout: 1,
            },
            ..spec()
        };
        assert!(matches!(spec.validate(), Err(WorkloadError::SingleMicroservice { depth: 2 })));
        let built = build_client_request(0, SimTime(0), &spec, &mut Streams::new(3));
        assert!(matches!(built, Err(WorkloadError::SingleMicroservice { depth: 2 })));
    }

    #[test]
    fn generator_assigns_sequential_ids_and_stops_at_end() {
        let generator = Generator::new(spec(), 11, SimTime(1_000_000)).unwrap();
        let reqs: Vec<_> = generator.collect();
        assert!(!reqs.is_empty());
        for (i, r) in reqs.iter().enumerate() {
            assert_eq!(r.request_id, i as u64);
            assert!(r.created_at < SimTime(1_000_000));
        }
        assert!(reqs.windows(2).all(|w| w[0].created_at <= w[1].created_at));
        // ~1e6 / 1066 arrivals.
        assert!((800..1100).contains(&reqs.len()), "{}", reqs.len());
    }
}

//! The simulation loop: arrivals, dispatch, execution slices and sampling on top
//! of the event engine.
//!
//! Same-instant events are processed by kind: arrivals first, then slice
//! completions, then child dispatches, then utilization samples. An instance
//! whose slice ends at `t` therefore chooses among everything that arrived at
//! `t` from outside, and load balancers see completions that happened at `t`.

use std::collections::HashMap;

use crate::deadline::{assign_deadlines, DeadlineError};
use crate::engine::{Engine, Ranked, SchedulingInPast};
use crate::gateway::{dispatch_stage, GatewayError, InstanceLoadView, LbPolicy, Registry};
use crate::instance::{InstanceError, InstanceState, QueuePolicy, QueuedStage, SliceOutcome};
use crate::metrics::{FinishedRun, Recorder, ReportMeta, RequestRecord, SampleLog, Scope, UtilizationSample};
use crate::model::{ClientRequest, InstanceId, MicroserviceId};
use crate::time::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Deadline(#[from] DeadlineError),
    #[error(transparent)]
    Scheduling(#[from] SchedulingInPast),
    #[error("request {request_id} targets microservice {ms}, which has no instances")]
    UnknownMicroservice { request_id: u64, ms: MicroserviceId },
    #[error("request {0} arrived twice")]
    DuplicateRequest(u64),
    #[error("sampling interval must be > 0")]
    ZeroInterval,
}

/// Everything the loop needs besides the request source.
#[derive(Debug, Clone)]
pub struct SimSettings {
    pub seed: u64,
    pub lb_policy: LbPolicy,
    pub queue_policy: QueuePolicy,
    /// Instances per microservice.
    pub instance_counts: Vec<u16>,
    /// Arrivals at or after this instant are not admitted.
    pub end_time: SimTime,
    pub utilization_interval: u64,
    pub imbalance_interval: u64,
    /// Keep every request record (needed for `requests.csv`).
    pub retain_records: bool,
    /// Keep finished client requests with their invocation times.
    pub retain_requests: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            seed: 0,
            lb_policy: LbPolicy::default(),
            queue_policy: QueuePolicy::default(),
            instance_counts: vec![1],
            end_time: SimTime(1_000_000),
            utilization_interval: 3_600_000_000,
            imbalance_interval: 300_000_000,
            retain_records: true,
            retain_requests: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sampler {
    Utilization,
    Imbalance,
}

#[derive(Debug, Clone)]
enum Payload {
    Arrival,
    SliceComplete { instance: usize },
    Dispatch { request_id: u64, node: usize },
    Sample(Sampler),
    End,
}

impl Ranked for Payload {
    fn rank(&self) -> u8 {
        match self {
            Payload::Arrival => 0,
            Payload::SliceComplete { .. } => 1,
            Payload::Dispatch { .. } => 2,
            Payload::Sample(_) => 3,
            Payload::End => 4,
        }
    }
}

#[derive(Debug)]
struct InFlight {
    req: ClientRequest,
    outstanding: usize,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub run: FinishedRun,
    /// Finished client requests in completion order, if retained.
    pub requests: Vec<ClientRequest>,
    pub events: u64,
    pub slices: u64,
}

pub struct Simulation<I: Iterator<Item = ClientRequest>> {
    settings: SimSettings,
    source: I,
    engine: Engine<Payload>,
    registry: Registry,
    instances: Vec<InstanceState>,
    offsets: Vec<usize>,
    pending_arrival: Option<ClientRequest>,
    in_flight: HashMap<u64, InFlight>,
    recorder: Recorder,
    samples: SampleLog,
    checkpoints: [Vec<u64>; 2],
    last_sample: [SimTime; 2],
    finished: Vec<ClientRequest>,
    last_completion: SimTime,
}

impl<I: Iterator<Item = ClientRequest>> Simulation<I> {
    /// Deploys every instance before time zero. `source` must yield requests in
    /// non-decreasing `created_at` order.
    pub fn new(settings: SimSettings, source: I) -> Result<Self, SimError> {
        if settings.utilization_interval == 0 || settings.imbalance_interval == 0 {
            return Err(SimError::ZeroInterval);
        }
        let registry = Registry::with_counts(&settings.instance_counts);
        let mut instances = Vec::new();
        let mut offsets = Vec::with_capacity(settings.instance_counts.len());
        for (ms, &count) in settings.instance_counts.iter().enumerate() {
            offsets.push(instances.len());
            for slot in 0..count {
                instances.push(InstanceState::new(InstanceId::new(ms as u16, slot), settings.queue_policy)?);
            }
        }
        let n = instances.len();
        Ok(Simulation {
            recorder: Recorder::new(settings.retain_records),
            settings,
            source,
            engine: Engine::new(),
            registry,
            instances,
            offsets,
            pending_arrival: None,
            in_flight: HashMap::new(),
            samples: SampleLog::default(),
            checkpoints: [vec![0; n], vec![0; n]],
            last_sample: [SimTime::ZERO; 2],
            finished: Vec::new(),
            last_completion: SimTime::ZERO,
        })
    }

    fn slot_index(&self, id: InstanceId) -> usize {
        self.offsets[id.ms.index()] + id.slot as usize
    }

    fn interval(&self, sampler: Sampler) -> u64 {
        match sampler {
            Sampler::Utilization => self.settings.utilization_interval,
            Sampler::Imbalance => self.settings.imbalance_interval,
        }
    }

    fn schedule_sample(&mut self, sampler: Sampler, after: SimTime) -> Result<(), SimError> {
        let end = self.settings.end_time;
        if after < end {
            let at = SimTime(after.0.saturating_add(self.interval(sampler)).min(end.0));
            self.engine.schedule(at, Payload::Sample(sampler))?;
        }
        Ok(())
    }

    fn pull_arrival(&mut self) -> Result<(), SimError> {
        if let Some(req) = self.source.next() {
            if req.created_at < self.settings.end_time {
                self.engine.schedule(req.created_at, Payload::Arrival)?;
                self.pending_arrival = Some(req);
            }
        }
        Ok(())
    }

    /// Runs until every admitted request has finished.
    pub fn run(mut self) -> Result<SimOutput, SimError> {
        let end = self.settings.end_time;
        self.schedule_sample(Sampler::Utilization, SimTime::ZERO)?;
        self.schedule_sample(Sampler::Imbalance, SimTime::ZERO)?;
        self.engine.schedule(end, Payload::End)?;
        self.pull_arrival()?;
        while let Some(event) = self.engine.next_until(SimTime::MAX) {
            let now = event.fire_at;
            match event.payload {
                Payload::Arrival => self.on_arrival(now)?,
                Payload::SliceComplete { instance } => self.on_slice_complete(instance, now)?,
                Payload::Dispatch { request_id, node } => self.dispatch(request_id, node, now)?,
                Payload::Sample(sampler) => self.on_sample(sampler, now)?,
                Payload::End => {}
            }
        }
        let meta = ReportMeta {
            seed: self.settings.seed,
            lb_policy: self.settings.lb_policy.to_string(),
            queue_policy: self.settings.queue_policy.to_string(),
            end_time: end,
            last_completion: self.last_completion,
            instance_counts: self.settings.instance_counts.clone(),
        };
        let slices = self.instances.iter().map(InstanceState::slices).sum();
        let events = self.engine.delivered();
        let run = self.recorder.finish(&self.samples, &meta);
        Ok(SimOutput {
            run,
            requests: self.finished,
            events,
            slices,
        })
    }

    fn on_arrival(&mut self, now: SimTime) -> Result<(), SimError> {
        let mut req = self.pending_arrival.take().expect("arrival event without a request");
        for node in &req.nodes {
            let ms = node.stage.target;
            if self.registry.instances(ms).is_empty() {
                return Err(SimError::UnknownMicroservice {
                    request_id: req.request_id,
                    ms,
                });
            }
        }
        if let Some(variant) = self.settings.queue_policy.deadline_variant() {
            assign_deadlines(&mut req, variant)?;
        }
        let request_id = req.request_id;
        let roots = req.roots.clone();
        let outstanding = req.stage_count();
        if self.in_flight.insert(request_id, InFlight { req, outstanding }).is_some() {
            return Err(SimError::DuplicateRequest(request_id));
        }
        for node in roots {
            self.dispatch(request_id, node, now)?;
        }
        self.pull_arrival()
    }

    fn dispatch(&mut self, request_id: u64, node: usize, now: SimTime) -> Result<(), SimError> {
        let flight = self.in_flight.get_mut(&request_id).expect("dispatch for a finished request");
        let stage = &mut flight.req.nodes[node].stage;
        let instances = &self.instances;
        let offsets = &self.offsets;
        let chosen = dispatch_stage(stage, self.settings.lb_policy, &mut self.registry, now, |id| {
            instances[offsets[id.ms.index()] + id.slot as usize].load_view(now)
        })?;
        let entry = QueuedStage::new(node, stage.clone());
        let idx = self.slot_index(chosen);
        if let Some(slice_end) = self.instances[idx].enqueue(entry, now)? {
            self.engine.schedule(slice_end, Payload::SliceComplete { instance: idx })?;
        }
        Ok(())
    }

    fn on_slice_complete(&mut self, idx: usize, now: SimTime) -> Result<(), SimError> {
        let outcome = self.instances[idx].end_slice(now);
        if let Some(SliceOutcome::Completed(entry)) = outcome {
            self.complete_stage(entry, now)?;
        }
        if let Some(slice_end) = self.instances[idx].begin_slice(now) {
            self.engine.schedule(slice_end, Payload::SliceComplete { instance: idx })?;
        }
        Ok(())
    }

    fn complete_stage(&mut self, entry: QueuedStage, now: SimTime) -> Result<(), SimError> {
        let stage = &entry.stage;
        self.recorder.record(RequestRecord {
            request_id: stage.request_id,
            scope: Scope::Stage,
            started_at: stage.arrival_at_instance.unwrap_or(now),
            completed_at: now,
            exec_us: stage.exec_time,
            target: Some(stage.target),
            depth: Some(stage.depth),
            deadline: stage.deadline,
        });
        let request_id = stage.request_id;
        let flight = self.in_flight.get_mut(&request_id).expect("completion for an unknown request");
        flight.outstanding -= 1;
        for &child in &flight.req.nodes[entry.node].children {
            self.engine.schedule(now, Payload::Dispatch { request_id, node: child })?;
        }
        if flight.outstanding > 0 {
            return Ok(());
        }
        let flight = self.in_flight.remove(&request_id).expect("present above");
        let req = flight.req;
        self.recorder.record(RequestRecord {
            request_id,
            scope: Scope::Client,
            started_at: req.created_at,
            completed_at: now,
            exec_us: req.critical_path_exec(),
            target: None,
            depth: Some(req.max_depth),
            deadline: Some(req.created_at + req.sla),
        });
        self.last_completion = self.last_completion.max(now);
        if self.settings.retain_requests {
            self.finished.push(req);
        }
        Ok(())
    }

    fn on_sample(&mut self, sampler: Sampler, now: SimTime) -> Result<(), SimError> {
        let which = sampler as usize;
        let window = now.since(self.last_sample[which]);
        if window > 0 {
            let log = match sampler {
                Sampler::Utilization => &mut self.samples.utilization,
                Sampler::Imbalance => &mut self.samples.imbalance,
            };
            for (i, inst) in self.instances.iter().enumerate() {
                let busy = inst.busy_through(now);
                let delta = busy - self.checkpoints[which][i];
                self.checkpoints[which][i] = busy;
                log.push(UtilizationSample {
                    at: now,
                    window_us: window,
                    instance: inst.id,
                    utilization: delta as f64 / window as f64,
                });
            }
        }
        self.last_sample[which] = now;
        self.schedule_sample(sampler, now)
    }
}

/// Load views of every instance of `ms` at `now`, in slot order.
pub fn load_views(instances: &[InstanceState], ms: MicroserviceId, now: SimTime) -> Vec<InstanceLoadView> {
    instances.iter().filter(|i| i.id.ms == ms).map(|i| i.load_view(now)).collect()
}

/// Convenience wrapper: builds and runs a simulation.
pub fn simulate<I>(settings: SimSettings, source: I) -> Result<SimOutput, SimError>
where
    I: IntoIterator<Item = ClientRequest>,
{
    Simulation::new(settings, source.into_iter())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{DeadlineVariant, DEFAULT_QUANTUM_US};
    use crate::metrics::RequestRecord;

    fn single(id: u64, at: u64, ms: u16, exec: u64) -> ClientRequest {
        let mut req = ClientRequest::new(id, SimTime(at), 3000);
        req.add_root(MicroserviceId(ms), exec);
        req
    }

    fn chain(id: u64, at: u64, hops: &[(u16, u64)]) -> ClientRequest {
        let mut req = ClientRequest::new(id, SimTime(at), 3000);
        let mut parent = req.add_root(MicroserviceId(hops[0].0), hops[0].1);
        for &(ms, exec) in &hops[1..] {
            parent = req.add_child(parent, MicroserviceId(ms), exec);
        }
        req
    }

    fn settings(counts: Vec<u16>, queue: QueuePolicy, lb: LbPolicy) -> SimSettings {
        SimSettings {
            instance_counts: counts,
            queue_policy: queue,
            lb_policy: lb,
            end_time: SimTime(1_000_000),
            utilization_interval: 100_000,
            imbalance_interval: 10_000,
            ..Default::default()
        }
    }

    fn stage_records(out: &SimOutput) -> Vec<&RequestRecord> {
        out.run.records.iter().filter(|r| r.scope == Scope::Stage).collect()
    }

    fn client_completion(out: &SimOutput, id: u64) -> u64 {
        out.run
            .records
            .iter()
            .find(|r| r.scope == Scope::Client && r.request_id == id)
            .unwrap()
            .completed_at
            .0
    }

    #[test]
    fn uncontended_chain_has_unit_slowdown() {
        let reqs = vec![chain(0, 10, &[(0, 1000), (1, 2000), (0, 1000)])];
        let out = simulate(settings(vec![1, 1], QueuePolicy::Fcfs, LbPolicy::RoundRobin), reqs).unwrap();
        assert_eq!(client_completion(&out, 0), 4010);
        let client = out.run.report.client.as_ref().unwrap();
        assert_eq!(client.max_slowdown, 1.0);
        assert_eq!(out.run.report.stage_requests, 3);
    }

    #[test]
    fn fcfs_queues_in_arrival_order() {
        let reqs = vec![single(0, 0, 0, 100), single(1, 10, 0, 100), single(2, 20, 0, 100)];
        let out = simulate(settings(vec![1], QueuePolicy::Fcfs, LbPolicy::RoundRobin), reqs).unwrap();
        let done: Vec<u64> = (0..3).map(|i| client_completion(&out, i)).collect();
        assert_eq!(done, vec![100, 200, 300]);
    }

    #[test]
    fn fair_share_interleaves() {
        let reqs = vec![single(0, 0, 0, 1200), single(1, 0, 0, 300)];
        let fs = QueuePolicy::FairShare {
            quantum: DEFAULT_QUANTUM_US,
        };
        let out = simulate(settings(vec![1], fs, LbPolicy::RoundRobin), reqs).unwrap();
        // Slices A500, B300, A500, A200.
        assert_eq!((client_completion(&out, 0), client_completion(&out, 1)), (1500, 800));
        assert_eq!(out.slices, 4);
    }

    #[test]
    fn shortest_first_is_non_preemptive() {
        let reqs = vec![single(0, 0, 0, 1000), single(1, 1, 0, 10)];
        let out = simulate(settings(vec![1], QueuePolicy::ShortestFirst, LbPolicy::RoundRobin), reqs).unwrap();
        assert_eq!((client_completion(&out, 0), client_completion(&out, 1)), (1000, 1010));
    }

    #[test]
    fn early_deadline_stamps_every_stage() {
        let reqs = vec![chain(0, 6000, &[(0, 10), (1, 10), (0, 10)]), single(1, 6000, 1, 10)];
        let ed = QueuePolicy::EarlyDeadline(DeadlineVariant::Eds);
        let out = simulate(settings(vec![1, 1], ed, LbPolicy::RoundRobin), reqs).unwrap();
        let mut deadlines: Vec<(u64, u32, u64)> = stage_records(&out)
            .iter()
            .map(|r| (r.request_id, r.depth.unwrap(), r.deadline.unwrap().0))
            .collect();
        deadlines.sort();
        assert_eq!(deadlines, vec![(0, 0, 7000), (0, 1, 8000), (0, 2, 9000), (1, 0, 9000)]);
    }

    #[test]
    fn parallel_children_dispatch_together() {
        let mut req = ClientRequest::new(0, SimTime(0), 3000);
        let root = req.add_root(MicroserviceId(0), 100);
        req.add_child(root, MicroserviceId(1), 50);
        req.add_child(root, MicroserviceId(2), 70);
        let out = simulate(settings(vec![1, 1, 1], QueuePolicy::Fcfs, LbPolicy::RoundRobin), vec![req]).unwrap();
        let mut arrivals: Vec<u64> = stage_records(&out).iter().map(|r| r.started_at.0).collect();
        arrivals.sort();
        assert_eq!(arrivals, vec![0, 100, 100]);
        assert_eq!(client_completion(&out, 0), 170);
        assert_eq!(out.run.report.client.as_ref().unwrap().max_slowdown, 1.0);
    }

    #[test]
    fn greedy_avoids_the_loaded_instance() {
        let reqs = vec![single(0, 0, 0, 5000), single(1, 1, 0, 10), single(2, 2, 0, 10)];
        let out = simulate(settings(vec![2], QueuePolicy::Fcfs, LbPolicy::Greedy), reqs).unwrap();
        assert_eq!(client_completion(&out, 1), 11);
        assert_eq!(client_completion(&out, 2), 21);
        let rr = simulate(
            settings(vec![2], QueuePolicy::Fcfs, LbPolicy::RoundRobin),
            vec![single(0, 0, 0, 5000), single(1, 1, 0, 10), single(2, 2, 0, 10)],
        )
        .unwrap();
        assert_eq!(client_completion(&rr, 2), 5010);
    }

    #[test]
    fn arrivals_stop_at_end_and_drain_finishes() {
        let mut s = settings(vec![1], QueuePolicy::Fcfs, LbPolicy::RoundRobin);
        s.end_time = SimTime(1000);
        let reqs = vec![single(0, 900, 0, 500), single(1, 1000, 0, 5)];
        let out = simulate(s, reqs).unwrap();
        assert_eq!(out.run.report.client_requests, 1);
        assert_eq!(out.run.report.drain_us, 400);
    }

    #[test]
    fn busy_instance_utilization_is_one() {
        let mut s = settings(vec![1], QueuePolicy::Fcfs, LbPolicy::RoundRobin);
        s.end_time = SimTime(300_000);
        let out = simulate(s, vec![single(0, 0, 0, 400_000)]).unwrap();
        let ms0 = &out.run.report.microservices[0];
        assert_eq!(ms0.utilization_windows, vec![1.0, 1.0, 1.0]);
        assert_eq!(ms0.mean_utilization, 1.0);
    }

    #[test]
    fn partial_last_window_is_sampled() {
        let mut s = settings(vec![2], QueuePolicy::Fcfs, LbPolicy::RoundRobin);
        s.end_time = SimTime(150_000);
        let out = simulate(s, vec![single(0, 100_000, 0, 25_000)]).unwrap();
        let ms0 = &out.run.report.microservices[0];
        assert_eq!(ms0.utilization_windows, vec![0.0, 0.25]);
        let windows: Vec<u64> = out.run.report.microservices.iter().map(|m| m.instances as u64).collect();
        assert_eq!(windows, vec![2]);
    }

    #[test]
    fn unknown_microservice_is_an_error() {
        let err = simulate(settings(vec![1], QueuePolicy::Fcfs, LbPolicy::RoundRobin), vec![single(0, 0, 3, 5)]);
        assert!(matches!(err, Err(SimError::UnknownMicroservice { .. })));
    }

    #[test]
    fn out_of_order_source_is_an_error() {
        let reqs = vec![single(0, 50, 0, 5), single(1, 10, 0, 5)];
        let err = simulate(settings(vec![1], QueuePolicy::Fcfs, LbPolicy::RoundRobin), reqs);
        assert!(matches!(err, Err(SimError::Scheduling(_))));
    }
}

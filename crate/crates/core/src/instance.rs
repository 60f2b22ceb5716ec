//! Microservice instance runtime: a request queue ordered by a queue policy and
//! a single execution slot.
//!
//! Fcfs, ShortestFirst and EarlyDeadline run a picked stage to completion.
//! FairShare runs at most one quantum and then sends the stage to the back of
//! the queue.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::gateway::InstanceLoadView;
use crate::model::{InstanceId, StageRequest};
use crate::time::SimTime;

pub const DEFAULT_QUANTUM_US: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeadlineVariant {
    /// Equal division of slack across stages.
    Eds,
    /// Slack divided in proportion to execution time.
    Exds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QueuePolicy {
    #[default]
    Fcfs,
    ShortestFirst,
    FairShare { quantum: u64 },
    EarlyDeadline(DeadlineVariant),
}


impl QueuePolicy {
    pub const ALL: [QueuePolicy; 5] = [
        QueuePolicy::Fcfs,
        QueuePolicy::ShortestFirst,
        QueuePolicy::FairShare {
            quantum: DEFAULT_QUANTUM_US,
        },
        QueuePolicy::EarlyDeadline(DeadlineVariant::Eds),
        QueuePolicy::EarlyDeadline(DeadlineVariant::Exds),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueuePolicy::Fcfs => "fcfs",
            QueuePolicy::ShortestFirst => "sf",
            QueuePolicy::FairShare { .. } => "fs",
            QueuePolicy::EarlyDeadline(DeadlineVariant::Eds) => "ed-eds",
            QueuePolicy::EarlyDeadline(DeadlineVariant::Exds) => "ed-exds",
        }
    }

    pub fn deadline_variant(self) -> Option<DeadlineVariant> {
        match self {
            QueuePolicy::EarlyDeadline(v) => Some(v),
            _ => None,
        }
    }

    /// Replaces the quantum of a fair-share policy; other policies are unchanged.
    pub fn with_quantum(self, quantum: u64) -> Self {
        match self {
            QueuePolicy::FairShare { .. } => QueuePolicy::FairShare { quantum },
            other => other,
        }
    }
}

impl fmt::Display for QueuePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueuePolicy::FairShare { quantum } if *quantum != DEFAULT_QUANTUM_US => write!(f, "fs({quantum}us)"),
            other => f.write_str(other.as_str()),
        }
    }
}

impl FromStr for QueuePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fcfs" => Ok(QueuePolicy::Fcfs),
            "sf" | "sjf" | "shortest-first" => Ok(QueuePolicy::ShortestFirst),
            "fs" | "fair-share" => Ok(QueuePolicy::FairShare {
                quantum: DEFAULT_QUANTUM_US,
            }),
            "ed-eds" | "eds" => Ok(QueuePolicy::EarlyDeadline(DeadlineVariant::Eds)),
            "ed-exds" | "exds" => Ok(QueuePolicy::EarlyDeadline(DeadlineVariant::Exds)),
            other => Err(format!(
                "unknown queue policy {other:?} (expected fcfs, sf, fs, ed-eds or ed-exds)"
            )),
        }
    }
}

impl TryFrom<String> for QueuePolicy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<QueuePolicy> for String {
    fn from(p: QueuePolicy) -> String {
        p.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstanceError {
    #[error("stage for microservice {stage_ms} delivered to instance {instance}")]
    WrongTarget { instance: InstanceId, stage_ms: crate::model::MicroserviceId },
    #[error("fair-share quantum must be > 0")]
    ZeroQuantum,
}

/// A stage held by an instance, tagged with its position in the client request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedStage {
    pub node: usize,
    pub stage: StageRequest,
    seq: u64,
}

impl QueuedStage {
    pub fn new(node: usize, stage: StageRequest) -> Self {
        QueuedStage { node, stage, seq: 0 }
    }

    fn arrival(&self) -> SimTime {
        self.stage.arrival_at_instance.unwrap_or_default()
    }
}

type PriorityKey = (u64, SimTime, u64, u64);

#[derive(Debug)]
struct Prioritized {
    key: PriorityKey,
    entry: QueuedStage,
}

impl PartialEq for Prioritized {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Prioritized {}
impl PartialOrd for Prioritized {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Prioritized {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

#[derive(Debug)]
enum StageQueue {
    /// Arrival order; fair-share re-appends preempted stages at the tail.
    Fifo(VecDeque<QueuedStage>),
    /// Min-heap on `(priority, arrival, request_id, seq)`.
    Priority(BinaryHeap<Reverse<Prioritized>>),
}

impl StageQueue {
    fn len(&self) -> usize {
        match self {
            StageQueue::Fifo(q) => q.len(),
            StageQueue::Priority(q) => q.len(),
        }
    }
}

#[derive(Debug, Clone)]
struct Running {
    entry: QueuedStage,
    slice_start: SimTime,
    slice_end: SimTime,
}

/// Result of a finished execution slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SliceOutcome {
    Completed(QueuedStage),
    /// Quantum expired; the stage went back to the tail of the queue.
    Requeued,
}

#[derive(Debug)]
pub struct InstanceState {
    pub id: InstanceId,
    policy: QueuePolicy,
    queue: StageQueue,
    current: Option<Running>,
    busy_accum: u64,
    queued_work: u64,
    next_seq: u64,
    completed: u64,
    slices: u64,
}

impl InstanceState {
    pub fn new(id: InstanceId, policy: QueuePolicy) -> Result<Self, InstanceError> {
        let queue = match policy {
            QueuePolicy::FairShare { quantum: 0 } => return Err(InstanceError::ZeroQuantum),
            QueuePolicy::Fcfs | QueuePolicy::FairShare { .. } => StageQueue::Fifo(VecDeque::new()),
            QueuePolicy::ShortestFirst | QueuePolicy::EarlyDeadline(_) => StageQueue::Priority(BinaryHeap::new()),
        };
        Ok(InstanceState {
            id,
            policy,
            queue,
            current: None,
            busy_accum: 0,
            queued_work: 0,
            next_seq: 0,
            completed: 0,
            slices: 0,
        })
    }

    pub fn policy(&self) -> QueuePolicy {
        self.policy
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none()
    }

    /// Stage currently executing, if any.
    pub fn current(&self) -> Option<&QueuedStage> {
        self.current.as_ref().map(|r| &r.entry)
    }

    pub fn slice_end(&self) -> Option<SimTime> {
        self.current.as_ref().map(|r| r.slice_end)
    }

    /// Executed time over completed slices.
    pub fn busy_accum(&self) -> u64 {
        self.busy_accum
    }

    /// Executed time up to `now`, counting the in-flight slice's progress.
    pub fn busy_through(&self, now: SimTime) -> u64 {
        self.busy_accum
            + self
                .current
                .as_ref()
                .map_or(0, |r| now.min(r.slice_end).since(r.slice_start))
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn slices(&self) -> u64 {
        self.slices
    }

    pub fn load_view(&self, now: SimTime) -> InstanceLoadView {
        let current_remaining = self.current.as_ref().map_or(0, |r| {
            r.entry
                .stage
                .remaining
                .saturating_sub(now.min(r.slice_end).since(r.slice_start))
        });
        InstanceLoadView {
            instance: self.id,
            queued_count: self.queue.len() + usize::from(self.current.is_some()),
            queued_exec_sum: self.queued_work,
            current_remaining,
        }
    }

    /// Appends a stage that has just arrived. If the instance was idle it starts
    /// executing at `now` and the end of its first slice is returned.
    pub fn enqueue(&mut self, mut entry: QueuedStage, now: SimTime) -> Result<Option<SimTime>, InstanceError> {
        if entry.stage.target != self.id.ms {
            return Err(InstanceError::WrongTarget {
                instance: self.id,
                stage_ms: entry.stage.target,
            });
        }
        if entry.stage.arrival_at_instance.is_none() {
            entry.stage.arrival_at_instance = Some(now);
        }
        self.push(entry);
        Ok(self.begin_slice(now))
    }

    fn push(&mut self, mut entry: QueuedStage) {
        entry.seq = self.next_seq;
        self.next_seq += 1;
        self.queued_work += entry.stage.remaining;
        match &mut self.queue {
            StageQueue::Fifo(q) => q.push_back(entry),
            StageQueue::Priority(q) => {
                let primary = match self.policy {
                    QueuePolicy::ShortestFirst => entry.stage.remaining,
                    // Stages without a deadline sort last.
                    _ => entry.stage.deadline.map_or(u64::MAX, |d| d.0),
                };
                let key = (primary, entry.arrival(), entry.stage.request_id, entry.seq);
                q.push(Reverse(Prioritized { key, entry }));
            }
        }
    }

    /// Removes the stage the policy runs next. Ties go to the earlier arrival,
    /// then the lower request id.
    pub fn pick_next(&mut self) -> Option<QueuedStage> {
        let entry = match &mut self.queue {
            StageQueue::Fifo(q) => q.pop_front(),
            StageQueue::Priority(q) => q.pop().map(|Reverse(p)| p.entry),
        }?;
        self.queued_work -= entry.stage.remaining;
        Some(entry)
    }

    /// If idle and work is waiting, starts the next slice at `now` and returns its end.
    pub fn begin_slice(&mut self, now: SimTime) -> Option<SimTime> {
        if self.current.is_some() {
            return None;
        }
        let entry = self.pick_next()?;
        let len = match self.policy {
            QueuePolicy::FairShare { quantum } => entry.stage.remaining.min(quantum),
            _ => entry.stage.remaining,
        };
        let slice_end = now + len;
        self.current = Some(Running {
            entry,
            slice_start: now,
            slice_end,
        });
        Some(slice_end)
    }

    /// Closes the running slice at `now` (which must be its end time).
    pub fn end_slice(&mut self, now: SimTime) -> Option<SliceOutcome> {
        let running = self.current.take()?;
        debug_assert_eq!(now, running.slice_end, "slice ended off schedule");
        let Running {
            mut entry,
            slice_start,
            slice_end,
        } = running;
        let ran = slice_end.since(slice_start);
        self.busy_accum += ran;
        self.slices += 1;
        entry.stage.remaining -= ran;
        if entry.stage.remaining == 0 {
            self.completed += 1;
            Some(SliceOutcome::Completed(entry))
        } else {
            self.push(entry);
            Some(SliceOutcome::Requeued)
        }
    }
}

//! API gateway: service discovery and server-side load balancing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{InstanceId, MicroserviceId, StageRequest};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("instance {0} is already registered")]
    DuplicateInstance(InstanceId),
    #[error("instance {0} is not registered")]
    UnknownInstance(InstanceId),
    #[error("microservice {0} has no active instance")]
    NoActiveInstance(MicroserviceId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LbPolicy {
    #[default]
    RoundRobin,
    LeastConnection,
    Greedy,
}

impl LbPolicy {
    pub const ALL: [LbPolicy; 3] = [LbPolicy::RoundRobin, LbPolicy::LeastConnection, LbPolicy::Greedy];

    pub fn as_str(self) -> &'static str {
        match self {
            LbPolicy::RoundRobin => "rr",
            LbPolicy::LeastConnection => "lc",
            LbPolicy::Greedy => "greedy",
        }
    }
}

impl fmt::Display for LbPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LbPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rr" | "round-robin" | "roundrobin" => Ok(LbPolicy::RoundRobin),
            "lc" | "least-connection" | "leastconnection" => Ok(LbPolicy::LeastConnection),
            "greedy" => Ok(LbPolicy::Greedy),
            other => Err(format!("unknown load balancer {other:?} (expected rr, lc or greedy)")),
        }
    }
}

impl TryFrom<String> for LbPolicy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<LbPolicy> for String {
    fn from(p: LbPolicy) -> String {
        p.as_str().to_string()
    }
}

/// Service discovery: active instances per microservice plus round-robin cursors.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<Vec<InstanceId>>,
    rr_cursor: Vec<usize>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with `counts[i]` instances of microservice `i`, slots `0..counts[i]`.
    pub fn with_counts(counts: &[u16]) -> Self {
        let mut registry = Registry::new();
        for (ms, &count) in counts.iter().enumerate() {
            for slot in 0..count {
                registry
                    .register(InstanceId::new(ms as u16, slot))
                    .expect("fresh slots are unique");
            }
        }
        registry
    }

    pub fn register(&mut self, instance: InstanceId) -> Result<(), GatewayError> {
        let ms = instance.ms.index();
        if self.entries.len() <= ms {
            self.entries.resize_with(ms + 1, Vec::new);
            self.rr_cursor.resize(ms + 1, 0);
        }
        if self.entries[ms].contains(&instance) {
            return Err(GatewayError::DuplicateInstance(instance));
        }
        self.entries[ms].push(instance);
        Ok(())
    }

    pub fn deregister(&mut self, instance: InstanceId) -> Result<(), GatewayError> {
        let ms = instance.ms.index();
        let list = self
            .entries
            .get_mut(ms)
            .ok_or(GatewayError::UnknownInstance(instance))?;
        let pos = list
            .iter()
            .position(|&i| i == instance)
            .ok_or(GatewayError::UnknownInstance(instance))?;
        list.remove(pos);
        let cursor = &mut self.rr_cursor[ms];
        // Keep pointing at the same successor when an earlier entry disappears.
        if pos < *cursor {
            *cursor -= 1;
        }
        if *cursor >= list.len() {
            *cursor = 0;
        }
        Ok(())
    }

    pub fn instances(&self, ms: MicroserviceId) -> &[InstanceId] {
        self.entries.get(ms.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cursor(&self, ms: MicroserviceId) -> usize {
        self.rr_cursor.get(ms.index()).copied().unwrap_or(0)
    }

    pub fn microservice_count(&self) -> usize {
        self.entries.len()
    }

    pub fn select_round_robin(&mut self, ms: MicroserviceId) -> Result<InstanceId, GatewayError> {
        let list = self
            .entries
            .get(ms.index())
            .filter(|l| !l.is_empty())
            .ok_or(GatewayError::NoActiveInstance(ms))?;
        let cursor = &mut self.rr_cursor[ms.index()];
        let chosen = list[*cursor];
        *cursor = (*cursor + 1) % list.len();
        Ok(chosen)
    }
}

/// What a load balancer sees of one instance at dispatch time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceLoadView {
    pub instance: InstanceId,
    /// Stages waiting at or executing on the instance.
    pub queued_count: usize,
    /// Remaining execution time of the waiting stages.
    pub queued_exec_sum: u64,
    /// Remaining execution time of the executing stage, 0 when idle.
    pub current_remaining: u64,
}

impl InstanceLoadView {
    pub fn load(&self) -> u64 {
        self.queued_exec_sum + self.current_remaining
    }
}

fn select_min_by<K: Ord>(views: &[InstanceLoadView], key: impl Fn(&InstanceLoadView) -> K) -> Option<InstanceId> {
    views
        .iter()
        .min_by_key(|v| (key(v), v.instance.slot))
        .map(|v| v.instance)
}

/// Fewest active connections; ties go to the lowest slot.
pub fn select_least_connection(views: &[InstanceLoadView]) -> Option<InstanceId> {
    select_min_by(views, |v| v.queued_count)
}

/// Least outstanding work; ties go to the lowest slot.
pub fn select_greedy(views: &[InstanceLoadView]) -> Option<InstanceId> {
    select_min_by(views, |v| v.load())
}

/// Chooses the instance that receives `stage` and stamps its arrival time.
///
/// Dispatch is instantaneous: the stage reaches the instance at `now`.
pub fn dispatch_stage<F>(
    stage: &mut StageRequest,
    policy: LbPolicy,
    registry: &mut Registry,
    now: SimTime,
    load_of: F,
) -> Result<InstanceId, GatewayError>
where
    F: Fn(InstanceId) -> InstanceLoadView,
{
    let ms = stage.target;
    let chosen = match policy {
        LbPolicy::RoundRobin => registry.select_round_robin(ms)?,
        LbPolicy::LeastConnection | LbPolicy::Greedy => {
            let views: Vec<InstanceLoadView> = registry.instances(ms).iter().map(|&i| load_of(i)).collect();
            let pick = if policy == LbPolicy::Greedy {
                select_greedy(&views)
            } else {
                select_least_connection(&views)
            };
            pick.ok_or(GatewayError::NoActiveInstance(ms))?
        }
    };
    stage.arrival_at_instance = Some(now);
    Ok(chosen)
}

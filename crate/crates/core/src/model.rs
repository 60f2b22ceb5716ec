//! Domain types shared by the workload generator, gateway, instances and metrics.
//!
//! A client request is a tree of stage requests stored as an arena: `nodes`
//! holds every call node and `children`/`roots` refer to arena indices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MicroserviceId(pub u16);

impl MicroserviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MicroserviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId {
    pub ms: MicroserviceId,
    pub slot: u16,
}

impl InstanceId {
    pub fn new(ms: u16, slot: u16) -> Self {
        InstanceId {
            ms: MicroserviceId(ms),
            slot,
        }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ms{}/{}", self.ms.0, self.slot)
    }
}

/// One invocation of one microservice within a client request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRequest {
    pub request_id: u64,
    pub target: MicroserviceId,
    /// Execution time in microseconds, always > 0.
    pub exec_time: u64,
    /// Hops from the gateway; 0 for stages the router invokes directly.
    pub depth: u32,
    pub called_by: Option<MicroserviceId>,
    pub arrival_at_instance: Option<SimTime>,
    pub deadline: Option<SimTime>,
    /// Execution time still owed; shrinks under fair-share slicing.
    pub remaining: u64,
}

impl StageRequest {
    pub fn new(request_id: u64, target: MicroserviceId, exec_time: u64, depth: u32, called_by: Option<MicroserviceId>) -> Self {
        StageRequest {
            request_id,
            target,
            exec_time,
            depth,
            called_by,
            arrival_at_instance: None,
            deadline: None,
            remaining: exec_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallNode {
    pub stage: StageRequest,
    /// Arena indices of the stages this one invokes once it completes.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRequest {
    pub request_id: u64,
    pub created_at: SimTime,
    /// Total deadline budget in microseconds.
    pub sla: u64,
    pub max_depth: u32,
    pub nodes: Vec<CallNode>,
    pub roots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("request {request_id} has no stages")]
    Empty { request_id: u64 },
    #[error("request {request_id}: node {node} refers to missing child {child}")]
    DanglingChild { request_id: u64, node: usize, child: usize },
    #[error("request {request_id}: node {node} is reachable more than once or never")]
    NotATree { request_id: u64, node: usize },
    #[error("request {request_id}: node {node} has depth {found}, expected {expected}")]
    DepthMismatch { request_id: u64, node: usize, expected: u32, found: u32 },
    #[error("request {request_id}: node {node} has an inconsistent caller")]
    CallerMismatch { request_id: u64, node: usize },
    #[error("request {request_id}: node {node} calls its own microservice")]
    SelfCall { request_id: u64, node: usize },
    #[error("request {request_id}: node {node} has zero execution time")]
    ZeroExec { request_id: u64, node: usize },
    #[error("request {request_id}: node {node} belongs to request {found}")]
    ForeignStage { request_id: u64, node: usize, found: u64 },
    #[error("request {request_id}: path depth {depth} exceeds max depth {max_depth}")]
    DepthExceeded { request_id: u64, depth: u32, max_depth: u32 },
}

impl ClientRequest {
    pub fn new(request_id: u64, created_at: SimTime, sla: u64) -> Self {
        ClientRequest {
            request_id,
            created_at,
            sla,
            max_depth: 0,
            nodes: Vec::new(),
            roots: Vec::new(),
        }
    }

    /// Adds a depth-0 stage and returns its arena index.
    pub fn add_root(&mut self, target: MicroserviceId, exec_time: u64) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(CallNode {
            stage: StageRequest::new(self.request_id, target, exec_time, 0, None),
            children: Vec::new(),
        });
        self.roots.push(idx);
        idx
    }

    /// Adds a stage invoked by `parent` and returns its arena index.
    ///
    /// Raises `max_depth` if the new stage is the deepest so far.
    pub fn add_child(&mut self, parent: usize, target: MicroserviceId, exec_time: u64) -> usize {
        let idx = self.nodes.len();
        let (depth, caller) = {
            let p = &self.nodes[parent].stage;
            (p.depth + 1, p.target)
        };
        self.nodes.push(CallNode {
            stage: StageRequest::new(self.request_id, target, exec_time, depth, Some(caller)),
            children: Vec::new(),
        });
        self.nodes[parent].children.push(idx);
        self.max_depth = self.max_depth.max(depth);
        idx
    }

    pub fn stage_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn stage(&self, idx: usize) -> &StageRequest {
        &self.nodes[idx].stage
    }

    /// Arena indices in level order: roots first, then their children, and so on.
    pub fn level_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        order.extend_from_slice(&self.roots);
        let mut head = 0;
        while head < order.len() {
            let idx = order[head];
            order.extend_from_slice(&self.nodes[idx].children);
            head += 1;
        }
        order
    }

    /// Maximum depth over all call nodes.
    pub fn paths_max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.stage.depth).max().unwrap_or(0)
    }

    /// Longest root-to-leaf sum of execution times, in microseconds.
    pub fn critical_path_exec(&self) -> u64 {
        // Children always have larger arena indices than their parent when the
        // tree is built through add_root/add_child, but a replayed or hand-built
        // tree need not be, so walk explicitly.
        fn longest(req: &ClientRequest, idx: usize) -> u64 {
            let node = &req.nodes[idx];
            node.stage.exec_time + node.children.iter().map(|&c| longest(req, c)).max().unwrap_or(0)
        }
        self.roots.iter().map(|&r| longest(self, r)).max().unwrap_or(0)
    }

    /// Checks the structural invariants of the call tree.
    pub fn validate(&self) -> Result<(), ModelError> {
        let request_id = self.request_id;
        if self.roots.is_empty() || self.nodes.is_empty() {
            return Err(ModelError::Empty { request_id });
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<(usize, u32, Option<MicroserviceId>)> =
            self.roots.iter().rev().map(|&r| (r, 0, None)).collect();
        while let Some((idx, depth, caller)) = stack.pop() {
            let Some(node) = self.nodes.get(idx) else {
                return Err(ModelError::NotATree { request_id, node: idx });
            };
            if std::mem::replace(&mut seen[idx], true) {
                return Err(ModelError::NotATree { request_id, node: idx });
            }
            let stage = &node.stage;
            if stage.request_id != request_id {
                return Err(ModelError::ForeignStage { request_id, node: idx, found: stage.request_id });
            }
            if stage.depth != depth {
                return Err(ModelError::DepthMismatch { request_id, node: idx, expected: depth, found: stage.depth });
            }
            if stage.called_by != caller {
                return Err(ModelError::CallerMismatch { request_id, node: idx });
            }
            if stage.exec_time == 0 {
                return Err(ModelError::ZeroExec { request_id, node: idx });
            }
            if depth > self.max_depth {
                return Err(ModelError::DepthExceeded { request_id, depth, max_depth: self.max_depth });
            }
            for &child in node.children.iter().rev() {
                let Some(c) = self.nodes.get(child) else {
                    return Err(ModelError::DanglingChild { request_id, node: idx, child });
                };
                if c.stage.target == stage.target {
                    return Err(ModelError::SelfCall { request_id, node: child });
                }
                stack.push((child, depth + 1, Some(stage.target)));
            }
        }
        if let Some(node) = seen.iter().position(|s| !s) {
            return Err(ModelError::NotATree { request_id, node });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(i: u16) -> MicroserviceId {
        MicroserviceId(i)
    }

    fn chain(execs: &[u64]) -> ClientRequest {
        let mut req = ClientRequest::new(0, SimTime(0), 3000);
        let mut parent = req.add_root(ms(0), execs[0]);
        for (i, &e) in execs.iter().enumerate().skip(1) {
            parent = req.add_child(parent, ms((i % 2) as u16), e);
        }
        req
    }

    #[test]
    fn single_stage_has_depth_zero() {
        let req = chain(&[1000]);
        assert_eq!(req.paths_max_depth(), 0);
        assert_eq!(req.critical_path_exec(), 1000);
        req.validate().unwrap();
    }

    #[test]
    fn chain_of_three_has_depth_two() {
        let req = chain(&[1000, 2000, 1000]);
        assert_eq!(req.paths_max_depth(), 2);
        assert_eq!(req.max_depth, 2);
        assert_eq!(req.stage_count(), 3);
        assert_eq!(req.critical_path_exec(), 4000);
        assert_eq!(req.stage(1).called_by, Some(ms(0)));
        req.validate().unwrap();
    }

    #[test]
    fn branching_tree_depth_and_critical_path() {
        let mut req = ClientRequest::new(0, SimTime(0), 3000);
        let root = req.add_root(ms(0), 100);
        let a = req.add_child(root, ms(1), 500);
        req.add_child(root, ms(2), 50);
        req.add_child(a, ms(3), 10);
        assert_eq!(req.paths_max_depth(), 2);
        assert_eq!(req.critical_path_exec(), 610);
        assert_eq!(req.level_order(), vec![0, 1, 2, 3]);
        req.validate().unwrap();
    }

    #[test]
    fn parallel_roots_take_the_longer_path() {
        let mut req = ClientRequest::new(0, SimTime(0), 3000);
        req.add_root(ms(0), 1000);
        req.add_root(ms(1), 3000);
        assert_eq!(req.critical_path_exec(), 3000);
    }

    #[test]
    fn validation_rejects_self_calls() {
        let mut req = ClientRequest::new(0, SimTime(0), 1);
        let r = req.add_root(ms(1), 10);
        req.add_child(r, ms(1), 10);
        assert!(matches!(req.validate(), Err(ModelError::SelfCall { node: 1, .. })));
    }

    #[test]
    fn validation_rejects_broken_bookkeeping() {
        let mut req = chain(&[10, 10]);
        req.nodes[1].stage.depth = 3;
        assert!(matches!(req.validate(), Err(ModelError::DepthMismatch { .. })));

        let mut req = chain(&[10, 10]);
        req.nodes[1].stage.called_by = None;
        assert!(matches!(req.validate(), Err(ModelError::CallerMismatch { .. })));

        let mut req = chain(&[10, 10]);
        req.nodes[0].children.push(0);
        assert!(req.validate().is_err());

        let mut req = chain(&[10, 10]);
        req.max_depth = 0;
        assert!(matches!(req.validate(), Err(ModelError::DepthExceeded { .. })));

        let req = ClientRequest::new(0, SimTime(0), 1);
        assert!(matches!(req.validate(), Err(ModelError::Empty { .. })));
    }

    /// Random tree as (parent choice, target) pairs. The target may collide with the
    /// parent's, which must be reported as a self-call.
    fn arb_tree() -> impl Strategy<Value = (Vec<(usize, u16, u64)>, u16)> {
        (proptest::collection::vec((any::<usize>(), 0u16..4, 1u64..1000), 0..12), 0u16..4)
    }

    proptest! {
        #[test]
        fn random_trees_validate_iff_no_self_call((spec, root_ms) in arb_tree()) {
            let mut req = ClientRequest::new(9, SimTime(5), 100);
            req.add_root(ms(root_ms), 7);
            let mut self_call = false;
            for (pick, target, exec) in spec {
                let parent = pick % req.nodes.len();
                if req.nodes[parent].stage.target == ms(target) {
                    self_call = true;
                }
                req.add_child(parent, ms(target), exec);
            }
            prop_assert_eq!(req.validate().is_ok(), !self_call);
            prop_assert_eq!(req.paths_max_depth(), req.max_depth);
            prop_assert_eq!(req.level_order().len(), req.stage_count());
        }
    }
}

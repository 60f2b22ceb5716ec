//! Per-stage deadlines for the early-deadline queue policy.
//!
//! Both variants split a client request's SLA into per-level slack and anchor
//! the cumulative slack at the request's creation time. Deadlines are computed
//! once, when the request enters the system.

use crate::instance::DeadlineVariant;
use crate::model::ClientRequest;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeadlineError {
    #[error("request {0}: SLA must be > 0 to derive deadlines")]
    ZeroSla(u64),
    #[error("request {0}: total execution time is zero")]
    ZeroExec(u64),
}

/// `created_at + sla * num / den`, rounded down.
fn anchored(req: &ClientRequest, num: u64, den: u64) -> SimTime {
    let offset = (req.sla as u128 * num as u128 / den as u128) as u64;
    req.created_at + offset
}

/// Equal division of slack: with `d` the request's maximum depth, each of the
/// `d + 1` levels gets `sla / (d + 1)` and a stage at depth `k` must finish by
/// `created_at + (k + 1) * sla / (d + 1)`. Parallel branches share the split of
/// the deepest path.
pub fn assign_deadlines_eds(req: &mut ClientRequest) -> Result<(), DeadlineError> {
    if req.sla == 0 {
        return Err(DeadlineError::ZeroSla(req.request_id));
    }
    let levels = req.paths_max_depth() as u64 + 1;
    for i in 0..req.nodes.len() {
        let depth = req.nodes[i].stage.depth as u64;
        let deadline = anchored(req, depth + 1, levels);
        req.nodes[i].stage.deadline = Some(deadline);
    }
    Ok(())
}

/// Execution-proportional slack: level `k` gets slack in proportion to the
/// largest execution time among the stages at that level; the deadline is the
/// cumulative slack up to and including the stage's level.
pub fn assign_deadlines_exds(req: &mut ClientRequest) -> Result<(), DeadlineError> {
    if req.sla == 0 {
        return Err(DeadlineError::ZeroSla(req.request_id));
    }
    let levels = req.paths_max_depth() as usize + 1;
    let mut level_exec = vec![0u64; levels];
    for node in &req.nodes {
        let slot = &mut level_exec[node.stage.depth as usize];
        *slot = (*slot).max(node.stage.exec_time);
    }
    let total: u64 = level_exec.iter().sum();
    if total == 0 {
        return Err(DeadlineError::ZeroExec(req.request_id));
    }
    let cumulative: Vec<u64> = level_exec
        .iter()
        .scan(0u64, |acc, &e| {
            *acc += e;
            Some(*acc)
        })
        .collect();
    for i in 0..req.nodes.len() {
        let depth = req.nodes[i].stage.depth as usize;
        let deadline = anchored(req, cumulative[depth], total);
        req.nodes[i].stage.deadline = Some(deadline);
    }
    Ok(())
}

pub fn assign_deadlines(req: &mut ClientRequest, variant: DeadlineVariant) -> Result<(), DeadlineError> {
    match variant {
        DeadlineVariant::Eds => assign_deadlines_eds(req),
        DeadlineVariant::Exds => assign_deadlines_exds(req),
    }
}

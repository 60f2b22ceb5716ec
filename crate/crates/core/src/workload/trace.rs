//! Trace rows: one line per stage request, exported from generated requests and
//! replayed back into client requests.
//!
//! CSV layout: `request_id,timestamp,called_ms,exetime,hops_done,called_by`,
//! integer microseconds, `called_by` empty at depth 0.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::{ClientRequest, MicroserviceId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub request_id: u64,
    pub timestamp: SimTime,
    pub called_ms: MicroserviceId,
    pub exetime: u64,
    pub hops_done: u32,
    pub called_by: Option<MicroserviceId>,
}

/// Which instant a row's `timestamp` records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampMode {
    /// The client request's creation time (workload trace, replayable).
    Creation,
    /// When the stage reached its instance; falls back to creation time for
    /// stages that were never dispatched.
    Invocation,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("malformed trace at line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl TraceError {
    fn at_row(index: usize, reason: impl Into<String>) -> Self {
        // Header is line 1.
        TraceError::Malformed {
            line: index as u64 + 2,
            reason: reason.into(),
        }
    }
}

/// One row per call node, ordered by `(timestamp, request_id, hops_done)`;
/// rows that tie keep level order within their request.
pub fn export_trace(requests: &[ClientRequest], mode: TimestampMode) -> Vec<TraceRow> {
    let mut rows = Vec::with_capacity(requests.iter().map(|r| r.stage_count()).sum());
    for req in requests {
        for idx in req.level_order() {
            let stage = req.stage(idx);
            let timestamp = match mode {
                TimestampMode::Creation => req.created_at,
                TimestampMode::Invocation => stage.arrival_at_instance.unwrap_or(req.created_at),
            };
            rows.push(TraceRow {
                request_id: req.request_id,
                timestamp,
                called_ms: stage.target,
                exetime: stage.exec_time,
                hops_done: stage.depth,
                called_by: stage.called_by,
            });
        }
    }
    rows.sort_by_key(|r| (r.timestamp, r.request_id, r.hops_done));
    rows
}

/// Rebuilds client requests from trace rows.
///
/// `created_at` is the earliest timestamp among a request's rows. The parent of a
/// row at `hops_done = k` is the unique row of the same request at `k - 1` whose
/// `called_ms` equals this row's `called_by`; zero or several candidates are errors.
pub fn replay_trace(rows: &[TraceRow], sla: u64) -> Result<Vec<ClientRequest>, TraceError> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.exetime == 0 {
            return Err(TraceError::at_row(i, "exetime must be > 0"));
        }
        match (row.hops_done, row.called_by) {
            (0, Some(_)) => return Err(TraceError::at_row(i, "depth-0 row must have an empty called_by")),
            (h, None) if h > 0 => return Err(TraceError::at_row(i, "row with hops_done > 0 needs a caller")),
            (_, Some(c)) if c == row.called_ms => {
                return Err(TraceError::at_row(i, "microservice calls itself"))
            }
            _ => {}
        }
        groups
            .entry(row.request_id)
            .or_insert_with(|| {
                order.push(row.request_id);
                Vec::new()
            })
            .push(i);
    }

    let mut requests = Vec::with_capacity(order.len());
    for request_id in order {
        let mut members = groups.remove(&request_id).unwrap_or_default();
        members.sort_by_key(|&i| rows[i].hops_done);
        let created_at = members.iter().map(|&i| rows[i].timestamp).min().unwrap_or_default();
        let mut req = ClientRequest::new(request_id, created_at, sla);
        // (hops_done, called_ms) -> node indices at that level
        let mut by_level: HashMap<(u32, MicroserviceId), Vec<usize>> = HashMap::new();
        for &i in &members {
            let row = &rows[i];
            let node = if row.hops_done == 0 {
                req.add_root(row.called_ms, row.exetime)
            } else {
                let caller = row.called_by.expect("checked above");
                let parents = by_level
                    .get(&(row.hops_done - 1, caller))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                match parents {
                    [parent] => req.add_child(*parent, row.called_ms, row.exetime),
                    [] => {
                        return Err(TraceError::at_row(
                            i,
                            format!("no caller {caller} at hops_done {} for request {request_id}", row.hops_done - 1),
                        ))
                    }
                    _ => {
                        return Err(TraceError::at_row(
                            i,
                            format!("ambiguous caller {caller} at hops_done {} for request {request_id}", row.hops_done - 1),
                        ))
                    }
                }
            };
            by_level.entry((row.hops_done, row.called_ms)).or_default().push(node);
        }
        req.max_depth = req.paths_max_depth();
        requests.push(req);
    }
    requests.sort_by_key(|r| (r.created_at, r.request_id));
    Ok(requests)
}

pub fn write_trace<W: Write>(writer: W, rows: &[TraceRow]) -> Result<(), TraceError> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(["request_id", "timestamp", "called_ms", "exetime", "hops_done", "called_by"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = input.headers()?.clone();
    let expected = ["request_id", "timestamp", "called_ms", "exetime", "hops_done", "called_by"];
    if headers.iter().ne(expected) {
        return Err(TraceError::Malformed {
            line: 1,
            reason: format!("expected header {}", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in input.deserialize::<TraceRow>() {
        match record {
            Ok(row) => rows.push(row),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(TraceError::Malformed {
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::trace::RunTrace;
use crate::workflow::SlotKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusyInterval {
    pub task: String,
    pub category: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTimeline {
    pub slot: usize,
    pub kind: SlotKind,
    pub node: usize,
    pub intervals: Vec<BusyInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoSegment {
    pub task: String,
    pub category: String,
    pub start: f64,
    pub end: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
}

fn run_start(trace: &RunTrace) -> Result<f64, MetricsError> {
    trace
        .records
        .iter()
        .map(|r| r.start)
        .min_by(f64::total_cmp)
        .ok_or(MetricsError::EmptyTrace)
}

/// Busy intervals of every pool slot, relative to the first task start and
/// ordered by start. Idle slots get an empty list.
pub fn utilization_timeline(trace: &RunTrace) -> Result<Vec<SlotTimeline>, MetricsError> {
    let t0 = run_start(trace)?;
    let mut out: Vec<SlotTimeline> = trace
        .pool
        .slots()
        .into_iter()
        .map(|s| SlotTimeline {
            slot: s.id,
            kind: s.kind,
            node: s.node,
            intervals: Vec::new(),
        })
        .collect();
    for r in &trace.records {
        for &s in &r.slots_used {
            if let Some(line) = out.get_mut(s) {
                line.intervals.push(BusyInterval {
                    task: r.task_name.clone(),
                    category: r.category.clone(),
                    start: r.start - t0,
                    end: r.end - t0,
                });
            }
        }
    }
    for line in &mut out {
        line.intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
    }
    Ok(out)
}

/// One segment per task spanning its execution, carrying its I/O volume.
pub fn io_timeline(trace: &RunTrace) -> Result<Vec<IoSegment>, MetricsError> {
    let t0 = run_start(trace)?;
    Ok(trace
        .records
        .iter()
        .map(|r| IoSegment {
            task: r.task_name.clone(),
            category: r.category.clone(),
            start: r.start - t0,
            end: r.end - t0,
            read_bytes: r.bytes_read,
            write_bytes: r.bytes_written,
        })
        .collect())
}

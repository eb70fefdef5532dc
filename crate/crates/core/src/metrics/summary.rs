use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{union_length, MetricsError};
use crate::trace::RunTrace;
use crate::workflow::SlotKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub category: String,
    pub start: f64,
    pub end: f64,
    pub makespan: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
}

/// Aggregate over all tasks of one category. `makespan` is the length of the
/// union of the category's task intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub makespan: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub num_ranks: u32,
    pub tasks: usize,
}

/// Workflow-level makespan, utilization and I/O of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub makespan: f64,
    #[serde(default)]
    pub cpu_util_pct: f64,
    #[serde(default)]
    pub gpu_util_pct: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    #[serde(default)]
    pub per_task: BTreeMap<String, TaskMetrics>,
    #[serde(default)]
    pub per_category: BTreeMap<String, CategoryMetrics>,
}

impl MetricsSummary {
    /// A summary carrying only workflow totals, e.g. figures from a report.
    pub fn totals(makespan: f64, read_bytes: u64, write_bytes: u64) -> Self {
        Self {
            makespan,
            cpu_util_pct: 0.0,
            gpu_util_pct: 0.0,
            read_bytes,
            write_bytes,
            per_task: BTreeMap::new(),
            per_category: BTreeMap::new(),
        }
    }

    /// Task names ordered by start time, ties by name.
    pub fn stage_order(&self) -> Vec<String> {
        let mut v: Vec<(&String, &TaskMetrics)> = self.per_task.iter().collect();
        v.sort_by(|a, b| a.1.start.total_cmp(&b.1.start).then_with(|| a.0.cmp(b.0)));
        v.into_iter().map(|(k, _)| k.clone()).collect()
    }
}

pub fn summarize(trace: &RunTrace) -> Result<MetricsSummary, MetricsError> {
    if trace.records.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let t0 = trace.records.iter().map(|r| r.start).fold(f64::INFINITY, f64::min);
    let t1 = trace.records.iter().map(|r| r.end).fold(f64::NEG_INFINITY, f64::max);
    let makespan = t1 - t0;

    let mut cpu_busy = 0.0;
    let mut gpu_busy = 0.0;
    for r in &trace.records {
        for &s in &r.slots_used {
            match trace.pool.slot(s).map(|s| s.kind) {
                Some(SlotKind::Cpu) => cpu_busy += r.duration(),
                Some(SlotKind::Gpu) => gpu_busy += r.duration(),
                None => {}
            }
        }
    }
    let pct = |busy: f64, slots: usize| {
        if slots == 0 || makespan <= 0.0 {
            0.0
        } else {
            (100.0 * busy / (makespan * slots as f64)).clamp(0.0, 100.0)
        }
    };

    let mut per_task = BTreeMap::new();
    let mut intervals: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut per_category: BTreeMap<String, CategoryMetrics> = BTreeMap::new();
    for r in &trace.records {
        per_task.insert(
            r.task_name.clone(),
            TaskMetrics {
                category: r.category.clone(),
                start: r.start - t0,
                end: r.end - t0,
                makespan: r.duration(),
                read_bytes: r.bytes_read,
                write_bytes: r.bytes_written,
            },
        );
        intervals.entry(r.category.clone()).or_default().push((r.start, r.end));
        let c = per_category.entry(r.category.clone()).or_insert(CategoryMetrics {
            makespan: 0.0,
            read_bytes: 0,
            write_bytes: 0,
            num_ranks: 0,
            tasks: 0,
        });
        c.read_bytes += r.bytes_read;
        c.write_bytes += r.bytes_written;
        c.num_ranks = c.num_ranks.max(r.ranks);
        c.tasks += 1;
    }
    for (cat, iv) in intervals {
        if let Some(c) = per_category.get_mut(&cat) {
            c.makespan = union_length(iv);
        }
    }

    Ok(MetricsSummary {
        makespan,
        cpu_util_pct: pct(cpu_busy, trace.pool.cpu_count()),
        gpu_util_pct: pct(gpu_busy, trace.pool.gpu_count()),
        read_bytes: trace.records.iter().map(|r| r.bytes_read).sum(),
        write_bytes: trace.records.iter().map(|r| r.bytes_written).sum(),
        per_task,
        per_category,
    })
}

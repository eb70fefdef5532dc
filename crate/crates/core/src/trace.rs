//! Run events, the concurrent sink that collects them and the frozen run trace.
//!
//! Trace files are JSON Lines. The first line is a `run` header carrying the
//! run id, seed and resource pool; every following line is one event object
//! with a `kind` discriminator and a timestamp `t` in seconds since run start:
//!
//! | kind         | fields                                                            |
//! |--------------|-------------------------------------------------------------------|
//! | `task_start` | `task`, `category`                                                |
//! | `task_end`   | `record` (a full task record)                                     |
//! | `kernel`     | `task`, `rank`, `kernel`, `end`, `wall_time`, byte counters, `checksum`, `device`, `async` |
//! | `slot_busy`  | `slot`, `task`                                                    |
//! | `slot_idle`  | `slot`, `task`                                                    |

use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::kernels::DeviceKind;
use crate::task::TaskRecord;
use crate::workflow::ResourcePool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEvent {
    pub task: String,
    pub rank: usize,
    pub kernel: String,
    pub end: f64,
    pub wall_time: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub bytes_communicated: u64,
    pub checksum: f64,
    pub device: DeviceKind,
    #[serde(rename = "async")]
    pub is_async: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    TaskStart { task: String, category: String },
    TaskEnd { record: TaskRecord },
    Kernel(KernelEvent),
    SlotBusy { slot: usize, task: String },
    SlotIdle { slot: usize, task: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug)]
struct SinkInner {
    epoch: Instant,
    kernel_events: bool,
    events: Mutex<Vec<TraceEvent>>,
}

/// Append-only event collector shared by every rank of every task in a run.
#[derive(Debug, Clone)]
pub struct MetricsSink {
    inner: Arc<SinkInner>,
}

impl Default for MetricsSink {
    fn default() -> Self {
        Self::new()
    }
}

impl MetricsSink {
    pub fn new() -> Self {
        Self::with_kernel_events(true)
    }

    /// When `kernel_events` is false, per-kernel events are dropped; task and
    /// slot events are always kept.
    pub fn with_kernel_events(kernel_events: bool) -> Self {
        Self {
            inner: Arc::new(SinkInner {
                epoch: Instant::now(),
                kernel_events,
                events: Mutex::new(Vec::new()),
            }),
        }
    }

    /// Seconds since the sink was created, on the monotonic clock.
    pub fn now(&self) -> f64 {
        self.inner.epoch.elapsed().as_secs_f64()
    }

    pub fn push(&self, t: f64, body: EventBody) {
        if matches!(body, EventBody::Kernel(_)) && !self.inner.kernel_events {
            return;
        }
        self.inner
            .events
            .lock()
            .expect("sink poisoned")
            .push(TraceEvent { t, body });
    }

    pub fn len(&self) -> usize {
        self.inner.events.lock().expect("sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the events so far, stably ordered by timestamp.
    pub fn snapshot(&self) -> Vec<TraceEvent> {
        let mut ev = self.inner.events.lock().expect("sink poisoned").clone();
        ev.sort_by(|a, b| a.t.total_cmp(&b.t));
        ev
    }

    pub fn kernel_events(&self) -> Vec<KernelEvent> {
        self.snapshot()
            .into_iter()
            .filter_map(|e| match e.body {
                EventBody::Kernel(k) => Some(k),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    run_id: String,
    seed: u64,
    pool: ResourcePool,
}

/// Frozen record of one workflow run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: String,
    pub seed: u64,
    pub pool: ResourcePool,
    pub events: Vec<TraceEvent>,
    pub records: Vec<TaskRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace is missing its run header")]
    MissingHeader,
}

impl RunTrace {
    /// Freezes events into a trace; records are taken from `task_end` events
    /// and ordered by start time.
    pub fn from_events(run_id: String, seed: u64, pool: ResourcePool, mut events: Vec<TraceEvent>) -> Self {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut records: Vec<TaskRecord> = events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::TaskEnd { record } => Some(record.clone()),
                _ => None,
            })
            .collect();
        records.sort_by(|a, b| a.start.total_cmp(&b.start));
        Self {
            run_id,
            seed,
            pool,
            events,
            records,
        }
    }

    pub fn record(&self, task: &str) -> Option<&TaskRecord> {
        self.records.iter().find(|r| r.task_name == task)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        let header = TraceHeader {
            kind: "run".into(),
            run_id: self.run_id.clone(),
            seed: self.seed,
            pool: self.pool.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| TraceError::Io(e.into()))?;
        out.write_all(b"\n")?;
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev).map_err(|e| TraceError::Io(e.into()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut header: Option<TraceHeader> = None;
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let h: TraceHeader =
                    serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
                if h.kind != "run" {
                    return Err(TraceError::MissingHeader);
                }
                header = Some(h);
                continue;
            }
            let ev: TraceEvent =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            events.push(ev);
        }
        let h = header.ok_or(TraceError::MissingHeader)?;
        Ok(Self::from_events(h.run_id, h.seed, h.pool, events))
    }
}

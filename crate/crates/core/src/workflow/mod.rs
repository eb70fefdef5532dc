//! Workflow DAGs and the pilot-style executor that runs them on a fixed pool.

mod dag;
mod engine;
mod phases;
mod pool;
mod spec;

pub use dag::{async_overlap, critical_path, topo_order, validate_dag};
pub use engine::{execute, RunOptions};
pub use phases::{rename_phase, set_phase_count};
pub use pool::{ResourcePool, Slot, SlotAllocator, SlotKind};
pub use spec::{load_workflow, ExecutionModel, Knob, Metric, Tunable, WorkflowConfig, WorkflowSpec};

use crate::task::TaskError;
use crate::trace::RunTrace;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("workflow schema: {0}")]
    Schema(String),
    #[error("edge references undeclared task `{0}`")]
    UnknownTaskReference(String),
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("not a phased simulation/training workflow: {0}")]
    ShapeMismatch(String),
    #[error("no duration given for task `{0}`")]
    MissingDuration(String),
    #[error("task `{task}` needs {cpus} cpu and {gpus} gpu slots, more than the pool holds")]
    InsufficientPool { task: String, cpus: usize, gpus: usize },
    #[error("scratch: {0}")]
    Scratch(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("task `{task}` failed: {source}")]
    TaskFailed {
        task: String,
        #[source]
        source: Box<TaskError>,
        /// Trace up to the failure.
        trace: Box<RunTrace>,
    },
}

//! Strong-scaling runs: one task, fixed problem size, growing rank count.

use serde::{Deserialize, Serialize};

use crate::metrics::{summarize, MetricsSummary};
use crate::task::TaskSpec;
use crate::workflow::{execute, ExecutionModel, ResourcePool, RunOptions, WorkflowError, WorkflowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub ranks: u32,
    pub summary: MetricsSummary,
}

impl ScalingPoint {
    pub fn makespan(&self) -> f64 {
        self.summary.makespan
    }
}

/// Runs `task` alone once per entry of `ranks`, on a single node sized to fit
/// it exactly. The program is left untouched, so every rank does the same
/// work and per-rank I/O is replicated.
pub fn strong_scaling(task: &TaskSpec, ranks: &[u32], options: &RunOptions) -> Result<Vec<ScalingPoint>, WorkflowError> {
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        if r == 0 {
            return Err(WorkflowError::Schema("rank count must be >= 1".into()));
        }
        let mut t = task.clone();
        t.num_ranks = r;
        let pool = ResourcePool::new(1, t.cpu_slots(), t.gpu_slots());
        let spec = WorkflowSpec {
            execution_model: ExecutionModel::Serial,
            phases: 1,
            tasks: vec![t],
            edges: vec![],
            tunables: vec![],
            config: None,
        };
        let trace = execute(&spec, pool, options)?;
        let summary = summarize(&trace).map_err(|e| WorkflowError::Schema(e.to_string()))?;
        out.push(ScalingPoint { ranks: r, summary });
    }
    Ok(out)
}

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{mpsc, Arc};
use std::time::{SystemTime, UNIX_EPOCH};

use super::pool::SlotAllocator;
use super::{topo_order, ResourcePool, WorkflowError, WorkflowSpec};
use crate::kernels::{Catalog, ExecOptions, Scratch};
use crate::task::{run_task, SlotAssignment, TaskEnv, TaskError, TaskRecord};
use crate::trace::{MetricsSink, RunTrace};

/// Everything about a run besides the workflow and the pool.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub run_id: Option<String>,
    pub scratch_root: PathBuf,
    pub keep_scratch: bool,
    pub exec: ExecOptions,
    /// Record one event per kernel call in the trace.
    pub kernel_events: bool,
    pub catalog: Arc<Catalog>,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            run_id: None,
            scratch_root: std::env::temp_dir(),
            keep_scratch: false,
            exec: ExecOptions::default(),
            kernel_events: true,
            catalog: Arc::new(Catalog::builtin()),
        }
    }

    pub fn scratch_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.scratch_root = root.into();
        self
    }

    pub fn kernel_events(mut self, on: bool) -> Self {
        self.kernel_events = on;
        self
    }
}

fn default_run_id(seed: u64) -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!("run-{seed:x}-{nanos:x}")
}

/// Runs every task once on `pool`, honoring dependencies and the execution
/// model. Ready tasks are considered FIFO by the time they became ready, ties
/// by declaration order; a later task may start when an earlier one does not
/// fit. The serial model never runs two tasks at once.
pub fn execute(spec: &WorkflowSpec, pool: ResourcePool, options: &RunOptions) -> Result<RunTrace, WorkflowError> {
    spec.check(&options.catalog)?;
    topo_order(spec)?;
    if let Some(t) = spec.tasks.iter().find(|t| !pool.fits(t)) {
        return Err(WorkflowError::InsufficientPool {
            task: t.name.clone(),
            cpus: t.cpu_slots(),
            gpus: t.gpu_slots(),
        });
    }

    let scratch = Scratch::create(&options.scratch_root, options.keep_scratch, options.exec.fsync)
        .map_err(|e| WorkflowError::Scratch(e.to_string()))?;
    let sink = MetricsSink::with_kernel_events(options.kernel_events);
    let env = TaskEnv::new(
        options.catalog.clone(),
        sink.clone(),
        Arc::new(scratch),
        options.exec.clone(),
        options.seed,
    );

    let n = spec.tasks.len();
    let index = spec.task_index();
    let mut succ = vec![Vec::new(); n];
    for (p, s) in &spec.edges {
        succ[index[p.as_str()]].push(index[s.as_str()]);
    }
    for list in &mut succ {
        list.sort_unstable();
        list.dedup();
    }
    let mut indeg = vec![0usize; n];
    for s in succ.iter().flatten() {
        indeg[*s] += 1;
    }

    let mut ready: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut alloc = SlotAllocator::new(pool);
    let mut held: Vec<Option<SlotAssignment>> = vec![None; n];
    let mut running = 0usize;
    let mut done = 0usize;
    let mut failure: Option<(String, TaskError)> = None;
    let (tx, rx) = mpsc::channel::<(usize, Result<TaskRecord, TaskError>)>();

    std::thread::scope(|scope| {
        loop {
            if failure.is_none() {
                let mut i = 0;
                while i < ready.len() {
                    if spec.execution_model.is_serial() && running > 0 {
                        break;
                    }
                    let t = ready[i];
                    let task = &spec.tasks[t];
                    match alloc.allocate(task.cpu_slots(), task.gpu_slots()) {
                        Some(a) => {
                            ready.remove(i);
                            held[t] = Some(a.clone());
                            running += 1;
                            let tx = tx.clone();
                            let env = &env;
                            scope.spawn(move || {
                                let r = run_task(task, &a, env);
                                let _ = tx.send((t, r));
                            });
                        }
                        None => i += 1,
                    }
                }
            }
            if running == 0 {
                break;
            }
            let (t, result) = rx.recv().expect("task threads hold a sender");
            running -= 1;
            if let Some(a) = held[t].take() {
                alloc.release(&a);
            }
            match result {
                Ok(_) => {
                    done += 1;
                    for &s in &succ[t] {
                        indeg[s] -= 1;
                        if indeg[s] == 0 {
                            ready.push_back(s);
                        }
                    }
                }
                Err(e) => {
                    env.abort.store(true, Ordering::Relaxed);
                    let replace = match &failure {
                        None => true,
                        Some((_, TaskError::KernelFailure { source, .. })) => {
                            matches!(source, crate::kernels::KernelError::Aborted)
                        }
                        Some(_) => false,
                    };
                    if replace {
                        failure = Some((spec.tasks[t].name.clone(), e));
                    }
                }
            }
        }
    });

    let run_id = options.run_id.clone().unwrap_or_else(|| default_run_id(options.seed));
    let trace = RunTrace::from_events(run_id, options.seed, pool, sink.snapshot());
    if let Some((task, source)) = failure {
        return Err(WorkflowError::TaskFailed {
            task,
            source: Box::new(source),
            trace: Box::new(trace),
        });
    }
    debug_assert_eq!(done, n);
    Ok(trace)
}

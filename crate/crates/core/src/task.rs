//! Emulated tasks: SPMD programs of catalog kernels executed by concurrent
//! rank lanes on an assigned set of resource slots.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::kernels::{hash_name, Catalog, Communicator, ExecOptions, KernelCall, KernelError, RankContext, Scratch};
use crate::trace::{EventBody, MetricsSink};

/// One step of a task program: a kernel call or a counted loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProgramStep {
    Loop(LoopStep),
    Kernel(KernelCall),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopStep {
    /// Loop label, e.g. `num_mult` or `epochs`. Usable as a scaling key.
    #[serde(rename = "loop")]
    pub label: String,
    pub count: u64,
    pub body: Vec<ProgramStep>,
}

impl ProgramStep {
    pub fn kernel(call: KernelCall) -> Self {
        ProgramStep::Kernel(call)
    }

    pub fn repeat(label: &str, count: u64, body: Vec<ProgramStep>) -> Self {
        ProgramStep::Loop(LoopStep {
            label: label.to_string(),
            count,
            body,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub category: String,
    pub num_ranks: u32,
    pub cpus_per_rank: u32,
    pub gpus_per_rank: u32,
    /// Phase index (1-based) for phased workflows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<u32>,
    pub program: Vec<ProgramStep>,
}

impl TaskSpec {
    pub fn cpu_slots(&self) -> usize {
        self.num_ranks as usize * self.cpus_per_rank as usize
    }

    pub fn gpu_slots(&self) -> usize {
        self.num_ranks as usize * self.gpus_per_rank as usize
    }

    /// Every kernel call in program order, loops expanded once.
    pub fn kernel_calls(&self) -> Vec<&KernelCall> {
        fn walk<'a>(steps: &'a [ProgramStep], out: &mut Vec<&'a KernelCall>) {
            for s in steps {
                match s {
                    ProgramStep::Kernel(k) => out.push(k),
                    ProgramStep::Loop(l) => walk(&l.body, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.program, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed,
}

/// Measured execution of one task. Times are seconds since run start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_name: String,
    pub category: String,
    pub start: f64,
    pub end: f64,
    pub ranks: u32,
    pub slots_used: Vec<usize>,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub bytes_communicated: u64,
    pub status: TaskStatus,
}

impl TaskRecord {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("task schema: {0}")]
    Schema(String),
    #[error("task `{task}`: unknown kernel `{kernel}`")]
    UnknownKernel { task: String, kernel: String },
    #[error("task `{task}`: {source}")]
    InvalidKernel {
        task: String,
        #[source]
        source: KernelError,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("task `{task}` needs {cpus_needed} cpu and {gpus_needed} gpu slots, assignment has {cpus_given} and {gpus_given}")]
    InsufficientSlots {
        task: String,
        cpus_needed: usize,
        gpus_needed: usize,
        cpus_given: usize,
        gpus_given: usize,
    },
    #[error("task `{}` failed on rank {rank}: {source}", record.task_name)]
    KernelFailure {
        rank: usize,
        #[source]
        source: KernelError,
        record: Box<TaskRecord>,
    },
}

/// Parses and validates a task document. Kernel names and parameters are
/// checked against `catalog` here rather than at run time.
pub fn parse_task_spec(doc: &Value, catalog: &Catalog) -> Result<TaskSpec, TaskError> {
    let spec: TaskSpec = serde_json::from_value(doc.clone()).map_err(|e| TaskError::Schema(e.to_string()))?;
    validate_task(&spec, catalog)?;
    Ok(spec)
}

pub fn validate_task(spec: &TaskSpec, catalog: &Catalog) -> Result<(), TaskError> {
    let schema_err = |msg: String| TaskError::Schema(format!("task `{}`: {msg}", spec.name));
    if spec.name.is_empty() {
        return Err(TaskError::Schema("task name is empty".into()));
    }
    if spec.num_ranks == 0 {
        return Err(schema_err("num_ranks must be >= 1".into()));
    }
    if spec.cpus_per_rank == 0 {
        return Err(schema_err("cpus_per_rank must be >= 1".into()));
    }
    if spec.program.is_empty() {
        return Err(schema_err("program is empty".into()));
    }
    fn check(steps: &[ProgramStep], spec: &TaskSpec, catalog: &Catalog, path: &str) -> Result<(), TaskError> {
        for (i, step) in steps.iter().enumerate() {
            let here = format!("{path}.{i}");
            match step {
                ProgramStep::Loop(l) => {
                    if l.count == 0 {
                        return Err(TaskError::Schema(format!("task `{}`: loop {here} has count 0", spec.name)));
                    }
                    if l.body.is_empty() {
                        return Err(TaskError::Schema(format!("task `{}`: loop {here} has an empty body", spec.name)));
                    }
                    check(&l.body, spec, catalog, &format!("{here}.body"))?;
                }
                ProgramStep::Kernel(call) => {
                    catalog.validate(call).map_err(|e| match e {
                        KernelError::UnknownKernel(k) => TaskError::UnknownKernel {
                            task: spec.name.clone(),
                            kernel: k,
                        },
                        other => TaskError::InvalidKernel {
                            task: spec.name.clone(),
                            source: other,
                        },
                    })?;
                    let device = call.device(1.0).map_err(|e| TaskError::InvalidKernel {
                        task: spec.name.clone(),
                        source: e,
                    })?;
                    if device.is_accelerator() && spec.gpus_per_rank == 0 {
                        return Err(TaskError::Schema(format!(
                            "task `{}`: accelerator kernel `{}` at {here} but gpus_per_rank is 0",
                            spec.name, call.kernel
                        )));
                    }
                }
            }
        }
        Ok(())
    }
    check(&spec.program, spec, catalog, "program")
}

fn path_get<'a>(root: &'a mut Value, path: &str) -> Option<&'a mut Value> {
    let mut cur = root;
    for part in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part)?,
            Value::Array(arr) => arr.get_mut(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn loop_paths(steps: &[ProgramStep], prefix: &str, label: Option<&str>, out: &mut Vec<String>) {
    for (i, s) in steps.iter().enumerate() {
        if let ProgramStep::Loop(l) = s {
            let here = format!("{prefix}.{i}");
            if label.map_or(true, |lab| lab == l.label) {
                out.push(format!("{here}.count"));
            }
            loop_paths(&l.body, &format!("{here}.body"), label, out);
        }
    }
}

/// Dotted paths of every tunable number in the program: loop counts and
/// numeric kernel parameters, e.g. `program.0.count` or
/// `program.0.body.1.params.data_size`.
pub fn tunable_paths(spec: &TaskSpec) -> Vec<String> {
    fn walk(steps: &[ProgramStep], prefix: &str, out: &mut Vec<String>) {
        for (i, s) in steps.iter().enumerate() {
            let here = format!("{prefix}.{i}");
            match s {
                ProgramStep::Loop(l) => {
                    out.push(format!("{here}.count"));
                    walk(&l.body, &format!("{here}.body"), out);
                }
                ProgramStep::Kernel(k) => {
                    for (name, v) in &k.params {
                        if v.is_number() {
                            out.push(format!("{here}.params.{name}"));
                        }
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&spec.program, "program", &mut out);
    out
}

/// Resolves a parameter key to concrete paths: dotted paths are taken as-is,
/// bare names match every loop with that label.
pub fn resolve_parameter(spec: &TaskSpec, key: &str) -> Result<Vec<String>, TaskError> {
    let paths = if key.starts_with("program.") {
        vec![key.to_string()]
    } else {
        let mut out = Vec::new();
        loop_paths(&spec.program, "program", Some(key), &mut out);
        out
    };
    if paths.is_empty() {
        return Err(TaskError::UnknownParameter(key.to_string()));
    }
    let mut doc = serde_json::to_value(spec).expect("task spec serializes");
    for p in &paths {
        match path_get(&mut doc, p) {
            Some(v) if v.is_number() => {}
            _ => return Err(TaskError::UnknownParameter(p.clone())),
        }
    }
    Ok(paths)
}

/// Reads the numeric value at `key` (first match for loop labels).
pub fn get_parameter(spec: &TaskSpec, key: &str) -> Result<f64, TaskError> {
    let paths = resolve_parameter(spec, key)?;
    let mut doc = serde_json::to_value(spec).expect("task spec serializes");
    path_get(&mut doc, &paths[0])
        .and_then(|v| v.as_f64())
        .ok_or_else(|| TaskError::UnknownParameter(key.to_string()))
}

/// Scales a number, keeping integers integral: rounded to nearest and
/// floored at 1 unless the original was 0.
fn scaled(v: &Value, factor: f64) -> Value {
    if let Some(n) = v.as_u64() {
        if n == 0 {
            return Value::from(0u64);
        }
        let x = (n as f64 * factor).round();
        Value::from(if x < 1.0 { 1u64 } else { x as u64 })
    } else {
        Value::from(v.as_f64().unwrap_or(0.0) * factor)
    }
}

fn set_value(v: &Value, new: f64) -> Value {
    if v.is_u64() {
        let x = new.round();
        Value::from(if x < 1.0 { 1u64 } else { x as u64 })
    } else {
        Value::from(new)
    }
}

fn edit_parameters(
    spec: &TaskSpec,
    edits: &BTreeMap<String, f64>,
    f: impl Fn(&Value, f64) -> Value,
) -> Result<TaskSpec, TaskError> {
    let mut doc = serde_json::to_value(spec).expect("task spec serializes");
    for (key, &x) in edits {
        for p in resolve_parameter(spec, key)? {
            let slot = path_get(&mut doc, &p).ok_or_else(|| TaskError::UnknownParameter(p.clone()))?;
            *slot = f(slot, x);
        }
    }
    serde_json::from_value(doc).map_err(|e| TaskError::Schema(e.to_string()))
}

/// Multiplies the named counts/sizes. Integers are rounded and floored at 1.
pub fn scale_task(spec: &TaskSpec, factors: &BTreeMap<String, f64>) -> Result<TaskSpec, TaskError> {
    if let Some((k, f)) = factors.iter().find(|(_, f)| !(f.is_finite() && **f > 0.0)) {
        return Err(TaskError::Schema(format!("factor for `{k}` must be > 0, got {f}")));
    }
    edit_parameters(spec, factors, scaled)
}

/// Overwrites the named counts/sizes with new values.
pub fn set_parameters(spec: &TaskSpec, values: &BTreeMap<String, f64>) -> Result<TaskSpec, TaskError> {
    edit_parameters(spec, values, set_value)
}

/// Slots granted to one task by the scheduler.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotAssignment {
    pub cpus: Vec<usize>,
    pub gpus: Vec<usize>,
}

impl SlotAssignment {
    pub fn all(&self) -> Vec<usize> {
        self.cpus.iter().chain(&self.gpus).copied().collect()
    }
}

/// Shared state a task needs from the surrounding run.
#[derive(Clone)]
pub struct TaskEnv {
    pub catalog: Arc<Catalog>,
    pub sink: MetricsSink,
    pub scratch: Arc<Scratch>,
    pub options: ExecOptions,
    /// Global run seed; the task seed is derived from it and the task name.
    pub seed: u64,
    /// Raised by the first failing rank; every rank of every task sharing
    /// this environment stops at its next step.
    pub abort: Arc<AtomicBool>,
}

impl TaskEnv {
    pub fn new(catalog: Arc<Catalog>, sink: MetricsSink, scratch: Arc<Scratch>, options: ExecOptions, seed: u64) -> Self {
        Self {
            catalog,
            sink,
            scratch,
            options,
            seed,
            abort: Arc::new(AtomicBool::new(false)),
        }
    }
}

pub fn task_seed(global: u64, task_name: &str) -> u64 {
    global ^ hash_name(task_name)
}

#[derive(Debug, Default, Clone, Copy)]
struct RankTotals {
    bytes_read: u64,
    bytes_written: u64,
    bytes_communicated: u64,
}

fn run_steps(
    steps: &[ProgramStep],
    catalog: &Catalog,
    ctx: &mut RankContext,
    totals: &mut RankTotals,
    abort: &AtomicBool,
) -> Result<(), KernelError> {
    for step in steps {
        if abort.load(Ordering::Relaxed) {
            return Err(KernelError::Aborted);
        }
        match step {
            ProgramStep::Kernel(call) => {
                let r = catalog.execute(call, ctx)?;
                totals.bytes_read += r.bytes_read;
                totals.bytes_written += r.bytes_written;
                totals.bytes_communicated += r.bytes_communicated;
            }
            ProgramStep::Loop(l) => {
                for _ in 0..l.count {
                    run_steps(&l.body, catalog, ctx, totals, abort)?;
                }
            }
        }
    }
    Ok(())
}

/// Runs one task on its slots: every rank executes the program concurrently.
/// The first failing rank aborts the others.
pub fn run_task(spec: &TaskSpec, assignment: &SlotAssignment, env: &TaskEnv) -> Result<TaskRecord, TaskError> {
    if assignment.cpus.len() < spec.cpu_slots() || assignment.gpus.len() < spec.gpu_slots() {
        return Err(TaskError::InsufficientSlots {
            task: spec.name.clone(),
            cpus_needed: spec.cpu_slots(),
            gpus_needed: spec.gpu_slots(),
            cpus_given: assignment.cpus.len(),
            gpus_given: assignment.gpus.len(),
        });
    }
    let sink = &env.sink;
    let slots = assignment.all();
    let seed = task_seed(env.seed, &spec.name);
    let abort = env.abort.clone();
    let comms = Communicator::group(spec.num_ranks as usize, env.options.collective_timeout, abort.clone());

    let start = sink.now();
    sink.push(
        start,
        EventBody::TaskStart {
            task: spec.name.clone(),
            category: spec.category.clone(),
        },
    );
    for &s in &slots {
        sink.push(
            start,
            EventBody::SlotBusy {
                slot: s,
                task: spec.name.clone(),
            },
        );
    }

    let results: Vec<Result<RankTotals, KernelError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .into_iter()
            .enumerate()
            .map(|(rank, comm)| {
                let abort = abort.clone();
                let env = env.clone();
                scope.spawn(move || {
                    let mut ctx = RankContext::new(
                        spec.name.clone(),
                        rank,
                        seed,
                        Some(comm),
                        env.sink.clone(),
                        env.scratch.clone(),
                        env.options.clone(),
                    );
                    let mut totals = RankTotals::default();
                    let res = run_steps(&spec.program, &env.catalog, &mut ctx, &mut totals, &abort)
                        .and_then(|()| ctx.drain_pending());
                    if res.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    res.map(|()| totals)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(KernelError::Failed("rank panicked".into())))
            })
            .collect()
    });

    let end = sink.now();
    let mut record = TaskRecord {
        task_name: spec.name.clone(),
        category: spec.category.clone(),
        start,
        end,
        ranks: spec.num_ranks,
        slots_used: slots.clone(),
        bytes_read: 0,
        bytes_written: 0,
        bytes_communicated: 0,
        status: TaskStatus::Ok,
    };
    let mut failure = None;
    for (rank, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => {
                record.bytes_read += t.bytes_read;
                record.bytes_written += t.bytes_written;
                record.bytes_communicated += t.bytes_communicated;
            }
            // prefer the root cause over the ranks it aborted
            Err(KernelError::Aborted) if failure.is_some() => {}
            Err(e) => {
                let replace = match &failure {
                    None => true,
                    Some((_, KernelError::Aborted)) => true,
                    _ => false,
                };
                if replace {
                    failure = Some((rank, e));
                }
            }
        }
    }
    if failure.is_some() {
        record.status = TaskStatus::Failed;
    }
    for &s in &slots {
        sink.push(
            end,
            EventBody::SlotIdle {
                slot: s,
                task: spec.name.clone(),
            },
        );
    }
    sink.push(end, EventBody::TaskEnd { record: record.clone() });
    match failure {
        None => Ok(record),
        Some((rank, source)) => Err(TaskError::KernelFailure {
            rank,
            source,
            record: Box::new(record),
        }),
    }
}

//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use tempfile::TempDir;
use wfmini_core::kernels::{
    standalone_context, Catalog, Communicator, ExecOptions, KernelCall, KernelError, KernelOutput, ParamKind,
    ParamSchema, RankContext, Scratch,
};
use wfmini_core::task::{ProgramStep, TaskSpec};
use wfmini_core::trace::{MetricsSink, RunTrace};
use wfmini_core::workflow::{critical_path, ExecutionModel, ResourcePool, RunOptions, WorkflowSpec};

/// Builtin catalog plus `sleepMs {ms}`, a kernel that only waits.
pub fn sleep_catalog() -> Catalog {
    let mut c = Catalog::builtin();
    c.register_transfer(
        "sleepMs",
        |call: &KernelCall, _: &mut RankContext| -> Result<KernelOutput, KernelError> {
            std::thread::sleep(Duration::from_millis(call.count("ms")?));
            Ok(KernelOutput::default())
        },
        ParamSchema::new().required("ms", ParamKind::Count),
    )
    .unwrap();
    c
}

pub fn sleep_options(seed: u64) -> RunOptions {
    RunOptions {
        catalog: Arc::new(sleep_catalog()),
        ..RunOptions::new(seed)
    }
}

pub fn sleep_task(name: &str, ms: u64, cpus: u32, gpus: u32) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        category: name.trim_end_matches(|c: char| c.is_ascii_digit()).to_string(),
        num_ranks: 1,
        cpus_per_rank: cpus,
        gpus_per_rank: gpus,
        phase: None,
        program: vec![ProgramStep::kernel(KernelCall::new("sleepMs").with("ms", ms))],
    }
}

pub fn workflow(model: ExecutionModel, tasks: Vec<TaskSpec>, edges: &[(&str, &str)]) -> WorkflowSpec {
    WorkflowSpec {
        execution_model: model,
        phases: 1,
        tasks,
        edges: edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        tunables: vec![],
        config: None,
    }
}

/// Random DAG over `n` tasks: edges only go from lower to higher index of a
/// shuffled order, so the result is acyclic by construction.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, edge_p: f64, max_ms: u64, pool: &ResourcePool) -> WorkflowSpec {
    let mut names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    names.shuffle(rng);
    let tasks = names
        .iter()
        .map(|name| {
            let gpus = u32::from(pool.gpu_count() > 0 && rng.gen_bool(0.3));
            let mut t = sleep_task(name, rng.gen_range(1..=max_ms.max(1)), 1, gpus);
            t.num_ranks = rng.gen_range(1..=pool.cpus_per_node.clamp(1, 2) as u32);
            if gpus > 0 {
                t.num_ranks = t.num_ranks.min(pool.gpus_per_node as u32);
            }
            t
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(edge_p) {
                edges.push((names[i].clone(), names[j].clone()));
            }
        }
    }
    let model = if rng.gen_bool(0.5) { ExecutionModel::Parallel } else { ExecutionModel::Serial };
    WorkflowSpec {
        execution_model: model,
        phases: 1,
        tasks,
        edges,
        tunables: vec![],
        config: None,
    }
}

pub fn durations(trace: &RunTrace) -> BTreeMap<String, f64> {
    trace.records.iter().map(|r| (r.task_name.clone(), r.duration())).collect()
}

/// Every violation of dependency safety, slot exclusivity and the
/// critical-path lower bound found in `trace`.
pub fn violations(spec: &WorkflowSpec, trace: &RunTrace) -> Vec<String> {
    let mut out = Vec::new();
    let rec: BTreeMap<&str, _> = trace.records.iter().map(|r| (r.task_name.as_str(), r)).collect();
    if rec.len() != spec.tasks.len() {
        out.push(format!("{} records for {} tasks", rec.len(), spec.tasks.len()));
        return out;
    }
    for (p, s) in &spec.edges {
        if rec[s.as_str()].start < rec[p.as_str()].end {
            out.push(format!("{s} started before {p} ended"));
        }
    }
    let mut by_slot: BTreeMap<usize, Vec<(f64, f64, &str)>> = BTreeMap::new();
    for r in &trace.records {
        for &s in &r.slots_used {
            by_slot.entry(s).or_default().push((r.start, r.end, &r.task_name));
        }
    }
    for (slot, mut iv) in by_slot {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in iv.windows(2) {
            if w[1].0 < w[0].1 {
                out.push(format!("slot {slot} held by {} and {}", w[0].2, w[1].2));
            }
        }
    }
    if spec.execution_model == ExecutionModel::Serial {
        let mut iv: Vec<_> = trace.records.iter().map(|r| (r.start, r.end)).collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        if iv.windows(2).any(|w| w[1].0 < w[0].1) {
            out.push("serial run has overlapping tasks".into());
        }
    }
    let t0 = trace.records.iter().map(|r| r.start).fold(f64::INFINITY, f64::min);
    let t1 = trace.records.iter().map(|r| r.end).fold(f64::NEG_INFINITY, f64::max);
    let cp = critical_path(spec, &durations(trace)).unwrap();
    if t1 - t0 + 1e-9 < cp {
        out.push(format!("makespan {} below critical path {cp}", t1 - t0));
    }
    out
}

/// Standalone single-rank context in a fresh scratch directory.
pub fn solo(seed: u64) -> (TempDir, RankContext) {
    let dir = TempDir::new().unwrap();
    let ctx = standalone_context(dir.path().to_path_buf(), seed, MetricsSink::new()).unwrap();
    (dir, ctx)
}

/// Runs `f` on every rank of a `size`-rank group and returns the results in
/// rank order.
pub fn on_ranks<T: Send>(
    size: usize,
    timeout: Duration,
    f: impl Fn(&mut RankContext) -> T + Sync,
) -> (TempDir, Vec<T>) {
    let dir = TempDir::new().unwrap();
    let scratch = Arc::new(Scratch::create(dir.path(), false, false).unwrap());
    let sink = MetricsSink::new();
    let comms = Communicator::group(size, timeout, Arc::new(AtomicBool::new(false)));
    let out = std::thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .enumerate()
            .map(|(rank, comm)| {
                let mut ctx = RankContext::new(
                    "group",
                    rank,
                    99,
                    Some(comm),
                    sink.clone(),
                    scratch.clone(),
                    ExecOptions::default(),
                );
                let f = &f;
                s.spawn(move || f(&mut ctx))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    (dir, out)
}

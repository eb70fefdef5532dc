use std::collections::{BTreeMap, BTreeSet};

use super::{ExecutionModel, WorkflowError, WorkflowSpec};

fn adjacency(spec: &WorkflowSpec) -> Result<Vec<Vec<usize>>, WorkflowError> {
    let index = spec.task_index();
    let mut succ = vec![Vec::new(); spec.tasks.len()];
    for (p, s) in &spec.edges {
        let pi = *index.get(p.as_str()).ok_or_else(|| WorkflowError::UnknownTaskReference(p.clone()))?;
        let si = *index.get(s.as_str()).ok_or_else(|| WorkflowError::UnknownTaskReference(s.clone()))?;
        succ[pi].push(si);
    }
    Ok(succ)
}

/// Succeeds iff the edge relation is acyclic; otherwise reports one cycle as
/// a closed list of task names (first == last).
pub fn validate_dag(spec: &WorkflowSpec) -> Result<(), WorkflowError> {
    topo_order(spec).map(|_| ())
}

/// Topological order, ties broken by declaration order.
pub fn topo_order(spec: &WorkflowSpec) -> Result<Vec<usize>, WorkflowError> {
    let succ = adjacency(spec)?;
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&v) = ready.iter().next() {
        ready.remove(&v);
        order.push(v);
        for &s in &succ[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    Err(WorkflowError::CycleDetected(find_cycle(spec, &succ)))
}

fn find_cycle(spec: &WorkflowSpec, succ: &[Vec<usize>]) -> Vec<String> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = succ.len();
    let mut color = vec![0u8; n];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        stack.push((root, 0));
        color[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < succ[v].len() {
                let w = succ[v][*next];
                *next += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => {
                        let pos = stack.iter().position(|&(u, _)| u == w).unwrap_or(0);
                        let mut cycle: Vec<String> =
                            stack[pos..].iter().map(|&(u, _)| spec.tasks[u].name.clone()).collect();
                        cycle.push(spec.tasks[w].name.clone());
                        return cycle;
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    Vec::new()
}

/// Length of the longest duration-weighted dependency path.
pub fn critical_path(spec: &WorkflowSpec, durations: &BTreeMap<String, f64>) -> Result<f64, WorkflowError> {
    let order = topo_order(spec)?;
    let succ = adjacency(spec)?;
    let mut finish = vec![0.0f64; spec.tasks.len()];
    let mut ready_at = vec![0.0f64; spec.tasks.len()];
    for v in order {
        let name = &spec.tasks[v].name;
        let d = *durations
            .get(name)
            .ok_or_else(|| WorkflowError::MissingDuration(name.clone()))?;
        finish[v] = ready_at[v] + d;
        for &s in &succ[v] {
            ready_at[s] = ready_at[s].max(finish[v]);
        }
    }
    Ok(finish.into_iter().fold(0.0, f64::max))
}

const SIMULATION: &str = "simulation";
const TRAINING: &str = "training";

/// Rewrites a synchronous phased workflow so that the simulations of phase
/// p+1 overlap the training (and downstream stages) of phase p.
///
/// Simulation j of phase p+1 waits for simulation j of phase p and for the
/// stages of phase p-1 that used to gate phase p. Training p+1 waits for
/// training p and its own simulations. Everything else is kept.
pub fn async_overlap(spec: &WorkflowSpec) -> Result<WorkflowSpec, WorkflowError> {
    let mut phase_of = BTreeMap::new();
    for t in &spec.tasks {
        let p = t
            .phase
            .ok_or_else(|| WorkflowError::ShapeMismatch(format!("task `{}` has no phase", t.name)))?;
        phase_of.insert(t.name.as_str(), p);
    }
    let max_phase = phase_of.values().copied().max().unwrap_or(0);
    let mut sims: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    let mut train: BTreeMap<u32, &str> = BTreeMap::new();
    for t in &spec.tasks {
        let p = phase_of[t.name.as_str()];
        match t.category.as_str() {
            SIMULATION => sims.entry(p).or_default().push(&t.name),
            TRAINING => {
                if train.insert(p, &t.name).is_some() {
                    return Err(WorkflowError::ShapeMismatch(format!("phase {p} has more than one training task")));
                }
            }
            _ => {}
        }
    }
    for p in 1..=max_phase {
        if !sims.contains_key(&p) || !train.contains_key(&p) {
            return Err(WorkflowError::ShapeMismatch(format!(
                "phase {p} needs simulation and training tasks"
            )));
        }
    }
    validate_dag(spec)?;
    if max_phase <= 1 {
        return Ok(spec.clone());
    }

    let is_sim = |name: &str| spec.task(name).is_some_and(|t| t.category == SIMULATION);
    // gates[p]: earlier-phase, non-simulation predecessors of phase p simulations
    let mut gates: BTreeMap<u32, BTreeSet<&str>> = BTreeMap::new();
    let mut kept = Vec::new();
    for (a, b) in &spec.edges {
        let (pa, pb) = (phase_of[a.as_str()], phase_of[b.as_str()]);
        if is_sim(b) && pa < pb && !is_sim(a) {
            gates.entry(pb).or_default().insert(a.as_str());
        } else {
            kept.push((a.clone(), b.clone()));
        }
    }

    let mut edges = kept;
    let mut push = |a: &str, b: &str| {
        let e = (a.to_string(), b.to_string());
        if !edges.contains(&e) {
            edges.push(e);
        }
    };
    for p in 1..max_phase {
        for (prev, next) in sims[&p].iter().zip(&sims[&(p + 1)]) {
            push(prev, next);
        }
        if let Some(g) = gates.get(&p) {
            for gate in g {
                for s in &sims[&(p + 1)] {
                    push(gate, s);
                }
            }
        }
        push(train[&p], train[&(p + 1)]);
    }

    let out = WorkflowSpec {
        execution_model: ExecutionModel::Async,
        edges,
        ..spec.clone()
    };
    validate_dag(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelCall;
    use crate::task::{ProgramStep, TaskSpec};

    fn task(name: &str) -> TaskSpec {
        TaskSpec {
            name: name.into(),
            category: "c".into(),
            num_ranks: 1,
            cpus_per_rank: 1,
            gpus_per_rank: 0,
            phase: None,
            program: vec![ProgramStep::kernel(KernelCall::new("reduction").with("data_size", 1))],
        }
    }

    fn spec(names: &[&str], edges: &[(&str, &str)]) -> WorkflowSpec {
        WorkflowSpec {
            execution_model: ExecutionModel::Parallel,
            phases: 1,
            tasks: names.iter().map(|n| task(n)).collect(),
            edges: edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            tunables: vec![],
            config: None,
        }
    }

    fn durations(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn chain_is_acyclic() {
        assert!(validate_dag(&spec(&["A", "B", "C"], &[("A", "B"), ("B", "C")])).is_ok());
    }

    #[test]
    fn two_cycle_is_reported() {
        match validate_dag(&spec(&["A", "B"], &[("A", "B"), ("B", "A")])) {
            Err(WorkflowError::CycleDetected(c)) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 3);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn critical_path_examples() {
        let chain = spec(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        let d = durations(&[("a", 2.0), ("b", 3.0), ("c", 2.0)]);
        assert_eq!(critical_path(&chain, &d).unwrap(), 7.0);
        let indep = spec(&["a", "b"], &[]);
        assert_eq!(critical_path(&indep, &durations(&[("a", 2.0), ("b", 3.0)])).unwrap(), 3.0);
    }

    #[test]
    fn missing_duration_is_an_error() {
        let s = spec(&["a"], &[]);
        assert!(matches!(
            critical_path(&s, &BTreeMap::new()),
            Err(WorkflowError::MissingDuration(_))
        ));
    }
}

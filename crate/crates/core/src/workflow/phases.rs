use std::collections::BTreeMap;

use super::{WorkflowError, WorkflowSpec};

/// Replaces the `_p{from}` token in a task name with `_p{to}`. The token must
/// be followed by `_` or the end of the name.
pub fn rename_phase(name: &str, from: u32, to: u32) -> Option<String> {
    let token = format!("_p{from}");
    let mut search = 0;
    while let Some(pos) = name[search..].find(&token) {
        let at = search + pos;
        let after = at + token.len();
        if after == name.len() || name.as_bytes()[after] == b'_' {
            return Some(format!("{}_p{to}{}", &name[..at], &name[after..]));
        }
        search = after;
    }
    None
}

/// Grows or shrinks a phased workflow. New phases copy the last phase's
/// tasks and the edges feeding them, shifted by whole phases.
pub fn set_phase_count(spec: &WorkflowSpec, phases: u32) -> Result<WorkflowSpec, WorkflowError> {
    if phases == 0 {
        return Err(WorkflowError::Schema("phase count must be >= 1".into()));
    }
    let mut phase_of = BTreeMap::new();
    for t in &spec.tasks {
        let p = t
            .phase
            .ok_or_else(|| WorkflowError::ShapeMismatch(format!("task `{}` has no phase", t.name)))?;
        phase_of.insert(t.name.clone(), p);
    }
    let last = phase_of.values().copied().max().unwrap_or(0);
    let mut out = spec.clone();
    out.phases = phases;
    if phases == last {
        return Ok(out);
    }
    if phases < last {
        out.tasks.retain(|t| t.phase.is_some_and(|p| p <= phases));
        out.edges
            .retain(|(a, b)| phase_of[a] <= phases && phase_of[b] <= phases);
        return Ok(out);
    }

    let shifted = |name: &str, shift: u32| -> Result<String, WorkflowError> {
        let p = phase_of[name];
        rename_phase(name, p, p + shift)
            .ok_or_else(|| WorkflowError::ShapeMismatch(format!("task name `{name}` carries no `_p{p}` token")))
    };
    let template: Vec<_> = spec.tasks.iter().filter(|t| t.phase == Some(last)).cloned().collect();
    let feeding: Vec<_> = spec.edges.iter().filter(|(_, b)| phase_of[b] == last).cloned().collect();
    for k in last + 1..=phases {
        let shift = k - last;
        for t in &template {
            let mut copy = t.clone();
            copy.name = shifted(&t.name, shift)?;
            copy.phase = Some(k);
            out.tasks.push(copy);
        }
        for (a, b) in &feeding {
            out.edges.push((shifted(a, shift)?, shifted(b, shift)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rename_matches_whole_tokens() {
        assert_eq!(rename_phase("sim_p1", 1, 2).as_deref(), Some("sim_p2"));
        assert_eq!(rename_phase("md_p1_03", 1, 4).as_deref(), Some("md_p4_03"));
        assert_eq!(rename_phase("md_p12_03", 1, 4), None);
        assert_eq!(rename_phase("train", 1, 2), None);
    }
}

//! Fits mini-app parameters to a fraction of an original workflow's metrics
//! and turns the fit into a reusable mapping from original configurations to
//! mini-app specs.
//!
//! Each tunable parameter declares the metric it drives and, optionally, the
//! configuration knob it follows. One calibration step multiplies every
//! parameter of a (category, metric) group by `(goal / measured)^d`. Byte
//! counts respond exactly, so I/O groups use `d = 1`; makespan groups use
//! `d = 0.8`. A step that increases the worst relative error is rejected and
//! retried from the last accepted spec with half the damping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::MetricsSummary;
use crate::task::{get_parameter, scale_task, set_parameters, TaskError};
use crate::workflow::{set_phase_count, Knob, Metric, WorkflowConfig, WorkflowError, WorkflowSpec};

pub const MAKESPAN_DAMPING: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowTarget {
    pub makespan_s: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryTarget {
    pub makespan_s: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub num_ranks: u32,
}

/// Metrics of the original workflow, as ingested from a profile document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMetrics {
    pub workflow: WorkflowTarget,
    pub categories: BTreeMap<String, CategoryTarget>,
    /// Configuration the profiled run used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<WorkflowConfig>,
}

impl TargetMetrics {
    pub fn from_summary(summary: &MetricsSummary) -> Self {
        Self {
            workflow: WorkflowTarget {
                makespan_s: summary.makespan,
                read_bytes: summary.read_bytes,
                write_bytes: summary.write_bytes,
            },
            categories: summary
                .per_category
                .iter()
                .map(|(k, c)| {
                    (
                        k.clone(),
                        CategoryTarget {
                            makespan_s: c.makespan,
                            read_bytes: c.read_bytes,
                            write_bytes: c.write_bytes,
                            num_ranks: c.num_ranks,
                        },
                    )
                })
                .collect(),
            config: None,
        }
    }

    fn value(&self, category: &str, metric: Metric) -> Option<f64> {
        let c = self.categories.get(category)?;
        Some(match metric {
            Metric::Makespan => c.makespan_s,
            Metric::ReadBytes => c.read_bytes as f64,
            Metric::WriteBytes => c.write_bytes as f64,
        })
    }
}

fn measured(summary: &MetricsSummary, category: &str, metric: Metric) -> f64 {
    summary.per_category.get(category).map_or(0.0, |c| match metric {
        Metric::Makespan => c.makespan,
        Metric::ReadBytes => c.read_bytes as f64,
        Metric::WriteBytes => c.write_bytes as f64,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("profile schema: {0}")]
    Schema(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no calibration residual within tolerance after {iterations} runs (worst {worst:.4})")]
    NonConvergence {
        iterations: usize,
        worst: f64,
        /// Best accepted state.
        best: Box<Calibration>,
    },
    #[error("mini-app run failed: {0}")]
    RunnerFailure(String),
    #[error("knob `{0}` differs from the base configuration but no parameter follows it")]
    UnmappedKnob(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

/// Validates a profile document.
pub fn ingest_profile(doc: &Value) -> Result<TargetMetrics, CalibrationError> {
    let t: TargetMetrics = serde_json::from_value(doc.clone()).map_err(|e| CalibrationError::Schema(e.to_string()))?;
    if t.categories.is_empty() {
        return Err(CalibrationError::Schema("profile lists no task categories".into()));
    }
    let bad_time = |x: f64| !(x.is_finite() && x >= 0.0);
    if bad_time(t.workflow.makespan_s) {
        return Err(CalibrationError::Schema("workflow makespan_s must be a non-negative number".into()));
    }
    for (name, c) in &t.categories {
        if bad_time(c.makespan_s) {
            return Err(CalibrationError::Schema(format!("category `{name}`: makespan_s must be non-negative")));
        }
        if c.makespan_s > t.workflow.makespan_s {
            return Err(CalibrationError::Schema(format!(
                "category `{name}` makespan exceeds the workflow makespan"
            )));
        }
    }
    let reads: u64 = t.categories.values().map(|c| c.read_bytes).sum();
    let writes: u64 = t.categories.values().map(|c| c.write_bytes).sum();
    if reads > t.workflow.read_bytes || writes > t.workflow.write_bytes {
        return Err(CalibrationError::Schema(
            "per-category I/O sums exceed the workflow totals".into(),
        ));
    }
    if let Some(c) = &t.config {
        c.validate()?;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFactor {
    pub knob: Knob,
    /// Mini-app parameter value per unit of the knob.
    pub factor: f64,
}

/// Persistable result of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMapping {
    pub ratio: f64,
    /// Keyed `category:param`.
    pub param_factors: BTreeMap<String, ParamFactor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_config: Option<WorkflowConfig>,
    /// Relative error per `category.metric` at the accepted state.
    pub residual_error: BTreeMap<String, f64>,
    pub tuned_spec: WorkflowSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub run: usize,
    pub residual_error: BTreeMap<String, f64>,
    pub worst: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spec: WorkflowSpec,
    pub mapping: CalibrationMapping,
    pub history: Vec<Iteration>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub ratio: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(CalibrationError::InvalidArgument(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 0.5) {
            return Err(CalibrationError::InvalidArgument(format!(
                "tolerance must be in (0, 0.5], got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(CalibrationError::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Group {
    category: String,
    metric: Metric,
    goal: f64,
    params: Vec<String>,
}

impl Group {
    fn key(&self) -> String {
        let m = match self.metric {
            Metric::Makespan => "makespan",
            Metric::ReadBytes => "read_bytes",
            Metric::WriteBytes => "write_bytes",
        };
        format!("{}.{m}", self.category)
    }

    fn damping(&self) -> f64 {
        match self.metric {
            Metric::Makespan => MAKESPAN_DAMPING,
            _ => 1.0,
        }
    }
}

fn groups(spec: &WorkflowSpec, target: &TargetMetrics, ratio: f64) -> Result<Vec<Group>, CalibrationError> {
    let mut map: BTreeMap<(String, Metric), Vec<String>> = BTreeMap::new();
    for t in &spec.tunables {
        if t.knob == Some(Knob::Ranks) {
            continue;
        }
        map.entry((t.category.clone(), t.drives)).or_default().push(t.param.clone());
    }
    let mut out = Vec::new();
    for ((category, metric), params) in map {
        let Some(v) = target.value(&category, metric) else {
            continue;
        };
        if v > 0.0 {
            out.push(Group {
                category,
                metric,
                goal: v * ratio,
                params,
            });
        }
    }
    if out.is_empty() {
        return Err(CalibrationError::InvalidArgument(
            "no tunable parameter drives a non-zero target metric".into(),
        ));
    }
    Ok(out)
}

fn residuals(groups: &[Group], summary: &MetricsSummary) -> BTreeMap<String, f64> {
    groups
        .iter()
        .map(|g| (g.key(), (measured(summary, &g.category, g.metric) - g.goal).abs() / g.goal))
        .collect()
}

fn worst(res: &BTreeMap<String, f64>) -> f64 {
    res.values().copied().fold(0.0, f64::max)
}

fn scale_group(spec: &WorkflowSpec, g: &Group, factor: f64) -> Result<WorkflowSpec, CalibrationError> {
    let factors: BTreeMap<String, f64> = g.params.iter().map(|p| (p.clone(), factor)).collect();
    let mut out = spec.clone();
    for t in out.tasks.iter_mut().filter(|t| t.category == g.category) {
        *t = scale_task(t, &factors)?;
    }
    Ok(out)
}

/// Runs the mini-app through `runner` up to `max_iters` times, adjusting the
/// declared tunables until every targeted category metric is within
/// `tolerance` of `ratio × target`.
pub fn calibrate<E: std::fmt::Display>(
    spec: &WorkflowSpec,
    target: &TargetMetrics,
    settings: CalibrationSettings,
    mut runner: impl FnMut(&WorkflowSpec) -> Result<MetricsSummary, E>,
) -> Result<Calibration, CalibrationError> {
    settings.validate()?;
    let groups = groups(spec, target, settings.ratio)?;
    let base_config = target.config.clone().or_else(|| spec.config.clone());

    let mut run = |s: &WorkflowSpec| runner(s).map_err(|e| CalibrationError::RunnerFailure(e.to_string()));
    let mut history = Vec::new();

    let mut accepted = spec.clone();
    let mut accepted_summary = run(&accepted)?;
    let mut accepted_res = residuals(&groups, &accepted_summary);
    history.push(Iteration {
        run: 1,
        residual_error: accepted_res.clone(),
        worst: worst(&accepted_res),
        accepted: true,
    });
    let mut damping_scale = 1.0;

    while worst(&accepted_res) > settings.tolerance && history.len() < settings.max_iters {
        let mut candidate = accepted.clone();
        for g in &groups {
            let m = measured(&accepted_summary, &g.category, g.metric);
            if m <= 0.0 || accepted_res[&g.key()] <= settings.tolerance * 0.25 {
                continue;
            }
            let factor = (g.goal / m).powf(g.damping() * damping_scale);
            candidate = scale_group(&candidate, g, factor)?;
        }
        let summary = run(&candidate)?;
        let res = residuals(&groups, &summary);
        let ok = worst(&res) <= worst(&accepted_res);
        history.push(Iteration {
            run: history.len() + 1,
            residual_error: res.clone(),
            worst: worst(&res),
            accepted: ok,
        });
        if ok {
            accepted = candidate;
            accepted_summary = summary;
            accepted_res = res;
        } else {
            damping_scale *= 0.5;
        }
    }

    accepted.config = base_config.clone().or(accepted.config);
    let mapping = build_mapping(&accepted, settings.ratio, base_config, accepted_res.clone())?;
    let result = Calibration {
        spec: accepted,
        mapping,
        history,
    };
    let w = worst(&accepted_res);
    if w > settings.tolerance {
        return Err(CalibrationError::NonConvergence {
            iterations: result.history.len(),
            worst: w,
            best: Box::new(result),
        });
    }
    Ok(result)
}

fn build_mapping(
    tuned: &WorkflowSpec,
    ratio: f64,
    base_config: Option<WorkflowConfig>,
    residual_error: BTreeMap<String, f64>,
) -> Result<CalibrationMapping, CalibrationError> {
    let mut param_factors = BTreeMap::new();
    for t in &tuned.tunables {
        let Some(knob) = t.knob else { continue };
        if knob == Knob::Phases {
            continue;
        }
        let Some(base) = &base_config else {
            return Err(CalibrationError::InvalidArgument(format!(
                "tunable `{}` follows a knob but no base configuration is known",
                t.key()
            )));
        };
        let knob_value = base
            .knob_value(knob, &t.category)
            .ok_or_else(|| CalibrationError::UnmappedKnob(format!("{knob:?}").to_lowercase()))?;
        let task = tuned
            .tasks_in_category(&t.category)
            .next()
            .ok_or_else(|| CalibrationError::InvalidArgument(format!("no task in category `{}`", t.category)))?;
        let value = if knob == Knob::Ranks {
            f64::from(task.num_ranks)
        } else {
            get_parameter(task, &t.param)?
        };
        param_factors.insert(
            t.key(),
            ParamFactor {
                knob,
                factor: value / knob_value,
            },
        );
    }
    Ok(CalibrationMapping {
        ratio,
        param_factors,
        base_config,
        residual_error,
        tuned_spec: tuned.clone(),
    })
}

fn knob_name(k: Knob) -> &'static str {
    match k {
        Knob::Epochs => "epochs",
        Knob::DataScale => "data_scale",
        Knob::Phases => "phases",
        Knob::Steps => "steps",
        Knob::Ranks => "ranks",
    }
}

/// Builds the mini-app spec for a new original configuration without any
/// runs: each mapped parameter becomes `factor × knob value`.
pub fn derive_config(mapping: &CalibrationMapping, new_config: &WorkflowConfig) -> Result<WorkflowSpec, CalibrationError> {
    new_config.validate()?;
    let base = mapping
        .base_config
        .as_ref()
        .ok_or_else(|| CalibrationError::InvalidArgument("mapping has no base configuration".into()))?;
    let mapped = |k: Knob| mapping.param_factors.values().any(|p| p.knob == k);
    let changed = [
        (Knob::Epochs, base.epochs != new_config.epochs),
        (Knob::DataScale, base.data_scale != new_config.data_scale),
        (Knob::Steps, base.steps != new_config.steps),
        (Knob::Ranks, base.ranks != new_config.ranks),
    ];
    for (k, differs) in changed {
        if differs && !mapped(k) {
            return Err(CalibrationError::UnmappedKnob(knob_name(k).into()));
        }
    }

    let mut spec = mapping.tuned_spec.clone();
    for (key, pf) in &mapping.param_factors {
        let (category, param) = key.split_once(':').unwrap_or((key.as_str(), ""));
        let old = base.knob_value(pf.knob, category);
        let new = new_config
            .knob_value(pf.knob, category)
            .ok_or_else(|| CalibrationError::UnmappedKnob(knob_name(pf.knob).into()))?;
        if old == Some(new) {
            continue;
        }
        let value = pf.factor * new;
        for t in spec.tasks.iter_mut().filter(|t| t.category == category) {
            if pf.knob == Knob::Ranks {
                t.num_ranks = (value.round() as u32).max(1);
            } else {
                *t = set_parameters(t, &BTreeMap::from([(param.to_string(), value)]))?;
            }
        }
    }
    if new_config.phases != spec.phases {
        spec = set_phase_count(&spec, new_config.phases)
            .map_err(|_| CalibrationError::UnmappedKnob(knob_name(Knob::Phases).into()))?;
    }
    spec.config = Some(new_config.clone());
    Ok(spec)
}

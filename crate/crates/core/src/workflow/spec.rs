use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::WorkflowError;
use crate::kernels::Catalog;
use crate::task::{validate_task, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionModel {
    /// One task at a time, in dependency order.
    Serial,
    Parallel,
    Sync,
    Async,
}

impl ExecutionModel {
    pub fn is_serial(self) -> bool {
        self == ExecutionModel::Serial
    }
}

/// Metric a tunable parameter is declared to drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Makespan,
    ReadBytes,
    WriteBytes,
}

/// Configuration knob of the original workflow that a parameter follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    Epochs,
    DataScale,
    Phases,
    Steps,
    Ranks,
}

/// A parameter of every task in `category`, addressed by loop label or
/// dotted path, with the metric it drives and the knob it follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tunable {
    pub category: String,
    pub param: String,
    pub drives: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knob: Option<Knob>,
}

impl Tunable {
    /// Stable key `category:param`.
    pub fn key(&self) -> String {
        format!("{}:{}", self.category, self.param)
    }
}

/// Configuration of the original workflow (resources and science knobs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    pub num_nodes: u32,
    pub num_cpus: u32,
    pub num_gpus: u32,
    /// Rank count per task category.
    #[serde(default)]
    pub ranks: BTreeMap<String, u32>,
    #[serde(default)]
    pub epochs: u64,
    pub data_scale: f64,
    pub phases: u32,
    /// MD steps; 0 where not applicable.
    #[serde(default)]
    pub steps: u64,
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if !(self.data_scale.is_finite() && self.data_scale > 0.0) {
            return Err(WorkflowError::Schema(format!("data_scale must be > 0, got {}", self.data_scale)));
        }
        if self.phases == 0 || self.num_nodes == 0 {
            return Err(WorkflowError::Schema("phases and num_nodes must be >= 1".into()));
        }
        if let Some((c, _)) = self.ranks.iter().find(|(_, &r)| r == 0) {
            return Err(WorkflowError::Schema(format!("rank count for `{c}` must be >= 1")));
        }
        Ok(())
    }

    /// Value of a scalar knob. `Ranks` needs a category.
    pub fn knob_value(&self, knob: Knob, category: &str) -> Option<f64> {
        let v = match knob {
            Knob::Epochs => self.epochs as f64,
            Knob::DataScale => self.data_scale,
            Knob::Phases => f64::from(self.phases),
            Knob::Steps => self.steps as f64,
            Knob::Ranks => f64::from(*self.ranks.get(category)?),
        };
        (v > 0.0).then_some(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub execution_model: ExecutionModel,
    pub phases: u32,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tunables: Vec<Tunable>,
    /// Original-workflow configuration this spec was built for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<WorkflowConfig>,
}

impl WorkflowSpec {
    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn task_index(&self) -> BTreeMap<&str, usize> {
        self.tasks.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.tasks.iter().map(|t| t.category.as_str()).collect()
    }

    pub fn tasks_in_category<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a TaskSpec> + 'a {
        self.tasks.iter().filter(move |t| t.category == category)
    }

    /// Direct predecessors of `name`, in edge order.
    pub fn predecessors(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, s)| s == name)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn to_document(&self) -> Value {
        serde_json::to_value(self).expect("workflow spec serializes")
    }

    /// Structural checks: unique names, known edge endpoints, valid tasks.
    pub fn check(&self, catalog: &Catalog) -> Result<(), WorkflowError> {
        if self.tasks.is_empty() {
            return Err(WorkflowError::Schema("workflow has no tasks".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.name.as_str()) {
                return Err(WorkflowError::Schema(format!("duplicate task name `{}`", t.name)));
            }
            validate_task(t, catalog)?;
        }
        for (p, s) in &self.edges {
            for end in [p, s] {
                if !seen.contains(end.as_str()) {
                    return Err(WorkflowError::UnknownTaskReference(end.clone()));
                }
            }
        }
        for tunable in &self.tunables {
            let mut any = false;
            for t in self.tasks_in_category(&tunable.category) {
                any = true;
                if tunable.knob == Some(Knob::Ranks) && tunable.param == "num_ranks" {
                    continue;
                }
                crate::task::resolve_parameter(t, &tunable.param)?;
            }
            if !any {
                return Err(WorkflowError::Schema(format!(
                    "tunable `{}` names a category with no tasks",
                    tunable.key()
                )));
            }
        }
        if let Some(c) = &self.config {
            c.validate()?;
        }
        Ok(())
    }
}

/// Parses and validates a workflow document.
pub fn load_workflow(doc: &Value, catalog: &Catalog) -> Result<WorkflowSpec, WorkflowError> {
    let spec: WorkflowSpec =
        serde_json::from_value(doc.clone()).map_err(|e| WorkflowError::Schema(e.to_string()))?;
    spec.check(catalog)?;
    Ok(spec)
}

//! Ready-made mini-apps for two workflow families.
//!
//! * Inverse problem: phases of a 128-rank simulation (read, repeated matrix
//!   products, write) followed by a small data-parallel training task. Serial
//!   and parallel DAG shapes, CPU-only or with training on accelerators.
//! * DeepDriveMD: phases of 12 single-rank MD simulations, one training, one
//!   model selection and one agent task, synchronous or with the next phase's
//!   simulations overlapping the current training.
//!
//! `desk_scale` multiplies every byte size and inner work count. Rank counts
//! and the DAG shape never depend on it, so runs at two scales differ only in
//! per-task work.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::kernels::KernelCall;
use crate::task::{ProgramStep, TaskSpec};
use crate::workflow::{
    async_overlap, ExecutionModel, Knob, Metric, ResourcePool, Tunable, WorkflowConfig, WorkflowSpec,
};

pub const DEFAULT_DESK_SCALE: f64 = 0.02;

const MIB: f64 = 1048576.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    InverseProblem,
    #[serde(rename = "deepdrivemd")]
    DeepDriveMd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    SerialCpu,
    SerialCpuGpu,
    ParallelCpu,
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigId {
    V1,
    V2,
    V3,
}

impl ConfigId {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExemplarError {
    #[error("invalid exemplar: {0}")]
    InvalidExemplar(String),
}

/// Selector `family:model:config`, e.g. `ip:serial_cpu:V1` or `ddmd:async:V2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarId {
    pub family: Family,
    pub model: Model,
    pub config: ConfigId,
}

impl ExemplarId {
    pub fn new(family: Family, model: Model, config: ConfigId) -> Result<Self, ExemplarError> {
        let id = Self { family, model, config };
        let model_ok = match family {
            Family::InverseProblem => matches!(model, Model::SerialCpu | Model::SerialCpuGpu | Model::ParallelCpu),
            Family::DeepDriveMd => matches!(model, Model::Sync | Model::Async),
        };
        if !model_ok {
            return Err(ExemplarError::InvalidExemplar(format!("model {model:?} does not belong to {family:?}")));
        }
        if family == Family::DeepDriveMd && config == ConfigId::V3 {
            return Err(ExemplarError::InvalidExemplar("deepdrivemd has configurations V1 and V2 only".into()));
        }
        Ok(id)
    }

    /// Every valid exemplar.
    pub fn all() -> Vec<ExemplarId> {
        let mut out = Vec::new();
        for m in [Model::SerialCpu, Model::SerialCpuGpu, Model::ParallelCpu] {
            for c in [ConfigId::V1, ConfigId::V2, ConfigId::V3] {
                out.push(Self::new(Family::InverseProblem, m, c).expect("valid"));
            }
        }
        for m in [Model::Sync, Model::Async] {
            for c in [ConfigId::V1, ConfigId::V2] {
                out.push(Self::new(Family::DeepDriveMd, m, c).expect("valid"));
            }
        }
        out
    }
}

impl fmt::Display for ExemplarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = match self.family {
            Family::InverseProblem => "ip",
            Family::DeepDriveMd => "ddmd",
        };
        let model = match self.model {
            Model::SerialCpu => "serial_cpu",
            Model::SerialCpuGpu => "serial_cpu_gpu",
            Model::ParallelCpu => "parallel_cpu",
            Model::Sync => "sync",
            Model::Async => "async",
        };
        write!(f, "{family}:{model}:{:?}", self.config)
    }
}

impl FromStr for ExemplarId {
    type Err = ExemplarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExemplarError::InvalidExemplar(format!("`{s}` is not family:model:config"));
        let mut parts = s.split(':');
        let (Some(f), Some(m), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let family = match f.to_ascii_lowercase().as_str() {
            "ip" | "inverse_problem" => Family::InverseProblem,
            "ddmd" | "deepdrivemd" => Family::DeepDriveMd,
            _ => return Err(bad()),
        };
        let model = match m.to_ascii_lowercase().as_str() {
            "serial_cpu" => Model::SerialCpu,
            "serial_cpu_gpu" => Model::SerialCpuGpu,
            "parallel_cpu" => Model::ParallelCpu,
            "sync" => Model::Sync,
            "async" => Model::Async,
            _ => return Err(bad()),
        };
        let config = match c.to_ascii_uppercase().as_str() {
            "V1" => ConfigId::V1,
            "V2" => ConfigId::V2,
            "V3" => ConfigId::V3,
            _ => return Err(bad()),
        };
        Self::new(family, model, config)
    }
}

fn check_scale(desk_scale: f64) -> Result<(), ExemplarError> {
    if desk_scale.is_finite() && desk_scale > 0.0 {
        Ok(())
    } else {
        Err(ExemplarError::InvalidExemplar(format!("desk_scale must be > 0, got {desk_scale}")))
    }
}

/// `max(1, round(x))` as an integer count or byte size.
fn n(x: f64) -> u64 {
    (x.round() as u64).max(1)
}

fn kernel(name: &str, params: serde_json::Value) -> ProgramStep {
    let mut call = KernelCall::new(name);
    if let serde_json::Value::Object(map) = params {
        for (k, v) in map {
            call = call.with(&k, v);
        }
    }
    ProgramStep::kernel(call)
}

fn tunable(category: &str, param: &str, drives: Metric, knob: Option<Knob>) -> Tunable {
    Tunable {
        category: category.into(),
        param: param.into(),
        drives,
        knob,
    }
}

#[allow(clippy::too_many_arguments)]
fn task(name: &str, category: &str, phase: u32, ranks: u32, gpus: u32, program: Vec<ProgramStep>) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        category: category.into(),
        num_ranks: ranks,
        cpus_per_rank: 1,
        gpus_per_rank: gpus,
        phase: Some(phase),
        program,
    }
}

/// Original-workflow configuration for an exemplar.
pub fn original_config(id: ExemplarId) -> WorkflowConfig {
    let v = id.config.index();
    match id.family {
        Family::InverseProblem => {
            let (nodes, cpus, gpus, ml, epochs) = match id.model {
                Model::SerialCpuGpu => (4, 128, 16, 16, [1600, 800, 800]),
                Model::ParallelCpu => (8, 256, 0, 4, [100, 50, 50]),
                _ => (4, 128, 0, 4, [100, 50, 50]),
            };
            WorkflowConfig {
                num_nodes: nodes,
                num_cpus: cpus,
                num_gpus: gpus,
                ranks: [("simulation".to_string(), 128), ("training".to_string(), ml)].into(),
                epochs: epochs[v],
                data_scale: [1.0, 1.0, 2.0][v],
                phases: 3,
                steps: 0,
            }
        }
        Family::DeepDriveMd => WorkflowConfig {
            num_nodes: 3,
            num_cpus: 96,
            num_gpus: 12,
            ranks: [
                ("simulation".to_string(), 12),
                ("training".to_string(), 1),
                ("selection".to_string(), 1),
                ("agent".to_string(), 1),
            ]
            .into(),
            epochs: [100, 150][v],
            data_scale: 1.0,
            phases: [2, 3][v],
            steps: [4000, 5000][v],
        },
    }
}

/// Resource pool an exemplar runs on.
///
/// The DeepDriveMD pool has five accelerators per node so that, in the
/// asynchronous model, a phase's 12 simulations can run next to training and
/// agent tasks.
pub fn exemplar_pool(id: ExemplarId) -> ResourcePool {
    match (id.family, id.model) {
        (Family::InverseProblem, Model::SerialCpuGpu) => ResourcePool::new(4, 32, 4),
        (Family::InverseProblem, Model::ParallelCpu) => ResourcePool::new(8, 32, 0),
        (Family::InverseProblem, _) => ResourcePool::new(4, 32, 0),
        (Family::DeepDriveMd, _) => ResourcePool::new(3, 32, 5),
    }
}

pub fn exemplar_spec(id: ExemplarId, desk_scale: f64) -> Result<WorkflowSpec, ExemplarError> {
    match id.family {
        Family::InverseProblem => inverse_problem_spec(id.model, id.config, desk_scale),
        Family::DeepDriveMd => deep_drive_md_spec(id.model, id.config, desk_scale),
    }
}

/// Mini-app epochs per configuration.
fn ip_mini_epochs(model: Model, config: ConfigId) -> u64 {
    let table = if model == Model::SerialCpuGpu { [200, 100, 100] } else { [50, 25, 25] };
    table[config.index()]
}

pub fn inverse_problem_spec(model: Model, config: ConfigId, desk_scale: f64) -> Result<WorkflowSpec, ExemplarError> {
    let id = ExemplarId::new(Family::InverseProblem, model, config)?;
    check_scale(desk_scale)?;
    let s = desk_scale;
    let cfg = original_config(id);
    let d = cfg.data_scale;
    let epochs = ip_mini_epochs(model, config);
    let gpu = model == Model::SerialCpuGpu;
    let ml_ranks = cfg.ranks["training"];

    let simulation = vec![ProgramStep::repeat(
        "num_data",
        n(2.0 * d),
        vec![
            kernel("readNonMPI", json!({ "data_size": n(4.0 * MIB * s) })),
            ProgramStep::repeat(
                "num_mult",
                n(250.0 * s),
                vec![kernel("matMulSimple2D", json!({ "dim": 64 }))],
            ),
            kernel("writeNonMPI", json!({ "data_size": n(MIB * s) })),
        ],
    )];

    let training = if gpu {
        vec![
            kernel("readNonMPI", json!({ "data_size": n(16.0 * MIB * s * d) })),
            ProgramStep::repeat(
                "epochs",
                epochs,
                vec![
                    kernel("dataCopyH2D", json!({ "data_size": n(0.25 * MIB * s * d) })),
                    ProgramStep::repeat(
                        "batches",
                        n(100.0 * s * d),
                        vec![kernel(
                            "matMulGeneral",
                            json!({ "dim_list": [[32, 64, 32]], "device": "accelerator" }),
                        )],
                    ),
                    kernel("MPIallReduce", json!({ "data_size": n(16384.0 * s), "device": "accelerator" })),
                ],
            ),
            kernel("writeNonMPI", json!({ "data_size": n(4.0 * MIB * s), "root_only": true })),
        ]
    } else {
        vec![
            kernel("readNonMPI", json!({ "data_size": n(16.0 * MIB * s * d) })),
            ProgramStep::repeat(
                "epochs",
                epochs,
                vec![
                    ProgramStep::repeat(
                        "batches",
                        n(400.0 * s * d),
                        vec![kernel("matMulGeneral", json!({ "dim_list": [[64, 64, 64]] }))],
                    ),
                    kernel("MPIallReduce", json!({ "data_size": n(65536.0 * s) })),
                ],
            ),
            kernel("writeNonMPI", json!({ "data_size": n(4.0 * MIB * s), "root_only": true })),
        ]
    };

    let mut tasks = Vec::new();
    let mut edges = Vec::new();
    for p in 1..=cfg.phases {
        tasks.push(task(&format!("sim_p{p}"), "simulation", p, 128, 0, simulation.clone()));
        tasks.push(task(
            &format!("train_p{p}"),
            "training",
            p,
            ml_ranks,
            u32::from(gpu),
            training.clone(),
        ));
        edges.push((format!("sim_p{p}"), format!("train_p{p}")));
        if p > 1 {
            match model {
                Model::ParallelCpu => {
                    edges.push((format!("sim_p{}", p - 1), format!("sim_p{p}")));
                    edges.push((format!("train_p{}", p - 1), format!("train_p{p}")));
                }
                _ => edges.push((format!("train_p{}", p - 1), format!("sim_p{p}"))),
            }
        }
    }

    let tunables = vec![
        tunable("simulation", "num_data", Metric::Makespan, Some(Knob::DataScale)),
        tunable("simulation", "num_mult", Metric::Makespan, None),
        tunable("simulation", "program.0.body.0.params.data_size", Metric::ReadBytes, None),
        tunable("simulation", "program.0.body.2.params.data_size", Metric::WriteBytes, None),
        tunable("simulation", "num_ranks", Metric::Makespan, Some(Knob::Ranks)),
        tunable("training", "epochs", Metric::Makespan, Some(Knob::Epochs)),
        tunable("training", "batches", Metric::Makespan, Some(Knob::DataScale)),
        tunable("training", "program.0.params.data_size", Metric::ReadBytes, Some(Knob::DataScale)),
        tunable("training", "program.2.params.data_size", Metric::WriteBytes, None),
        tunable("training", "num_ranks", Metric::Makespan, Some(Knob::Ranks)),
    ];

    Ok(WorkflowSpec {
        execution_model: if model == Model::ParallelCpu {
            ExecutionModel::Parallel
        } else {
            ExecutionModel::Serial
        },
        phases: cfg.phases,
        tasks,
        edges,
        tunables,
        config: Some(cfg),
    })
}

/// Emulated host/device link used by the DeepDriveMD tasks (bytes/s).
const DDMD_COPY_BANDWIDTH: f64 = 16.0 * MIB;
pub const DDMD_SIMULATIONS: usize = 12;

pub fn deep_drive_md_spec(model: Model, config: ConfigId, desk_scale: f64) -> Result<WorkflowSpec, ExemplarError> {
    let id = ExemplarId::new(Family::DeepDriveMd, model, config)?;
    check_scale(desk_scale)?;
    let s = desk_scale;
    let cfg = original_config(id);
    let bw = DDMD_COPY_BANDWIDTH;

    let md = vec![
        kernel("readNonMPI", json!({ "data_size": n(MIB * s) })),
        ProgramStep::repeat(
            "md_steps",
            n(cfg.steps as f64 * s / 10.0),
            vec![
                kernel("axpy", json!({ "data_size": 2048, "a": 0.5, "device": "accelerator" })),
                kernel("dataCopyD2H", json!({ "data_size": n(100.0 * MIB * s), "bandwidth": bw })),
            ],
        ),
        kernel("writeNonMPI", json!({ "data_size": n(0.5 * MIB * s) })),
    ];
    let training = vec![
        kernel("readNonMPI", json!({ "data_size": n(6.0 * MIB * s) })),
        ProgramStep::repeat(
            "epochs",
            cfg.epochs,
            vec![
                ProgramStep::repeat(
                    "batches",
                    1,
                    vec![kernel(
                        "matMulGeneral",
                        json!({ "dim_list": [[16, 32, 16]], "device": "accelerator" }),
                    )],
                ),
                kernel("dataCopyH2D", json!({ "data_size": n(4.0 * MIB * s), "bandwidth": bw })),
                kernel("MPIallReduce", json!({ "data_size": n(4096.0 * s), "device": "accelerator" })),
            ],
        ),
        kernel("writeNonMPI", json!({ "data_size": n(2.0 * MIB * s) })),
    ];
    let selection = vec![
        kernel("readNonMPI", json!({ "data_size": n(6.0 * MIB * s) })),
        kernel("reduction", json!({ "data_size": n(1_000_000.0 * s) })),
        kernel("writeNonMPI", json!({ "data_size": n(0.25 * MIB * s) })),
    ];
    let agent = vec![
        kernel("readNonMPI", json!({ "data_size": n(2.0 * MIB * s) })),
        kernel(
            "inplaceCompute",
            json!({ "data_size": n(1_000_000.0 * s), "functor": "sqrt", "device": "accelerator" }),
        ),
        kernel("dataCopyD2H", json!({ "data_size": n(64.0 * MIB * s), "bandwidth": bw })),
        kernel("writeNonMPI", json!({ "data_size": n(0.5 * MIB * s) })),
    ];

    let mut tasks = Vec::new();
    let mut edges = Vec::new();
    for p in 1..=cfg.phases {
        let train = format!("train_p{p}");
        let select = format!("select_p{p}");
        let agent_name = format!("agent_p{p}");
        for j in 1..=DDMD_SIMULATIONS {
            let name = format!("md_p{p}_{j:02}");
            tasks.push(task(&name, "simulation", p, 1, 1, md.clone()));
            edges.push((name.clone(), train.clone()));
            if p > 1 {
                edges.push((format!("agent_p{}", p - 1), name));
            }
        }
        tasks.push(task(&train, "training", p, 1, 1, training.clone()));
        tasks.push(task(&select, "selection", p, 1, 0, selection.clone()));
        tasks.push(task(&agent_name, "agent", p, 1, 1, agent.clone()));
        edges.push((train, select.clone()));
        edges.push((select, agent_name));
    }

    let tunables = vec![
        tunable("simulation", "md_steps", Metric::Makespan, Some(Knob::Steps)),
        tunable("simulation", "program.1.body.1.params.data_size", Metric::Makespan, None),
        tunable("simulation", "program.0.params.data_size", Metric::ReadBytes, None),
        tunable("simulation", "program.2.params.data_size", Metric::WriteBytes, None),
        tunable("training", "epochs", Metric::Makespan, Some(Knob::Epochs)),
        tunable("training", "program.1.body.1.params.data_size", Metric::Makespan, None),
        tunable("training", "program.0.params.data_size", Metric::ReadBytes, None),
        tunable("training", "program.2.params.data_size", Metric::WriteBytes, None),
        tunable("selection", "program.1.params.data_size", Metric::Makespan, None),
        tunable("selection", "program.0.params.data_size", Metric::ReadBytes, None),
        tunable("selection", "program.2.params.data_size", Metric::WriteBytes, None),
        tunable("agent", "program.2.params.data_size", Metric::Makespan, None),
        tunable("agent", "program.0.params.data_size", Metric::ReadBytes, None),
        tunable("agent", "program.3.params.data_size", Metric::WriteBytes, None),
    ];

    let sync = WorkflowSpec {
        execution_model: ExecutionModel::Sync,
        phases: cfg.phases,
        tasks,
        edges,
        tunables,
        config: Some(cfg),
    };
    match model {
        Model::Async => async_overlap(&sync).map_err(|e| ExemplarError::InvalidExemplar(e.to_string())),
        _ => Ok(sync),
    }
}

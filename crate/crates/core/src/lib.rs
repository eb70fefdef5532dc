//! Workflow mini-apps: tunable synthetic stand-ins for scientific workflows.
//!
//! A workflow is a DAG of emulated tasks. Each task is an SPMD program of
//! catalog kernels (compute, file I/O, collectives, host/device copies) run by
//! concurrent rank lanes on slots of a fixed resource pool. Runs produce a
//! JSON Lines trace from which makespan, utilization and I/O metrics are
//! derived.

pub mod calibrate;
pub mod exemplars;
pub mod kernels;
pub mod metrics;
pub mod scaling;
pub mod task;
pub mod trace;
pub mod workflow;

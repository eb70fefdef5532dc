use serde::{Deserialize, Serialize};

use crate::task::{SlotAssignment, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Cpu,
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub id: usize,
    pub kind: SlotKind,
    pub node: usize,
}

/// Fixed set of nodes acquired once for a whole run. Slot ids are node-major:
/// each node's CPUs, then its GPUs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourcePool {
    pub num_nodes: usize,
    pub cpus_per_node: usize,
    pub gpus_per_node: usize,
}

impl ResourcePool {
    pub fn new(num_nodes: usize, cpus_per_node: usize, gpus_per_node: usize) -> Self {
        Self {
            num_nodes,
            cpus_per_node,
            gpus_per_node,
        }
    }

    pub fn slots_per_node(&self) -> usize {
        self.cpus_per_node + self.gpus_per_node
    }

    pub fn slot_count(&self) -> usize {
        self.num_nodes * self.slots_per_node()
    }

    pub fn cpu_count(&self) -> usize {
        self.num_nodes * self.cpus_per_node
    }

    pub fn gpu_count(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }

    pub fn slot(&self, id: usize) -> Option<Slot> {
        if id >= self.slot_count() {
            return None;
        }
        let node = id / self.slots_per_node();
        let offset = id % self.slots_per_node();
        let kind = if offset < self.cpus_per_node { SlotKind::Cpu } else { SlotKind::Gpu };
        Some(Slot { id, kind, node })
    }

    pub fn slots(&self) -> Vec<Slot> {
        (0..self.slot_count()).filter_map(|id| self.slot(id)).collect()
    }

    /// Whether the task could ever be placed on an otherwise idle pool.
    pub fn fits(&self, task: &TaskSpec) -> bool {
        task.cpu_slots() <= self.cpu_count() && task.gpu_slots() <= self.gpu_count()
    }
}

/// Tracks which slots of a pool are held.
#[derive(Debug, Clone)]
pub struct SlotAllocator {
    pool: ResourcePool,
    busy: Vec<bool>,
}

impl SlotAllocator {
    pub fn new(pool: ResourcePool) -> Self {
        Self {
            pool,
            busy: vec![false; pool.slot_count()],
        }
    }

    pub fn free_count(&self, kind: SlotKind) -> usize {
        self.pool
            .slots()
            .iter()
            .filter(|s| s.kind == kind && !self.busy[s.id])
            .count()
    }

    /// First-fit by node: lowest free CPU ids first, then lowest free GPU ids.
    pub fn allocate(&mut self, cpus: usize, gpus: usize) -> Option<SlotAssignment> {
        if self.free_count(SlotKind::Cpu) < cpus || self.free_count(SlotKind::Gpu) < gpus {
            return None;
        }
        let mut take = |kind: SlotKind, n: usize| -> Vec<usize> {
            let ids: Vec<usize> = self
                .pool
                .slots()
                .into_iter()
                .filter(|s| s.kind == kind && !self.busy[s.id])
                .take(n)
                .map(|s| s.id)
                .collect();
            for &id in &ids {
                self.busy[id] = true;
            }
            ids
        };
        let cpus = take(SlotKind::Cpu, cpus);
        let gpus = take(SlotKind::Gpu, gpus);
        Some(SlotAssignment { cpus, gpus })
    }

    pub fn release(&mut self, assignment: &SlotAssignment) {
        for id in assignment.cpus.iter().chain(&assignment.gpus) {
            debug_assert!(self.busy[*id], "slot {id} released twice");
            self.busy[*id] = false;
        }
    }
}

//! Tunable kernel catalog.
//!
//! Kernels are synthetic loads (compute, file I/O, collectives and host/device
//! copies) addressed by name. Every call goes through [`Catalog::execute`],
//! which validates parameters, runs the body `repetitions` times, applies the
//! accelerator slowdown and appends one kernel event to the run's sink.

mod builtin;
pub mod comm;
pub mod compute;
mod device;
pub mod io;
mod params;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use builtin::BUILTIN_NAMES;
pub use comm::Communicator;
pub use device::{Device, DeviceKind};
pub use io::Scratch;
pub use params::{Distribution, Functor, KernelCall, ParamKind, ParamSchema, ParamSpec, Params};

use crate::trace::{EventBody, KernelEvent, MetricsSink};

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("kernel `{kernel}`: missing parameter `{param}`")]
    MissingParameter { kernel: String, param: String },
    #[error("kernel `{kernel}`: invalid parameter `{param}`: {reason}")]
    InvalidParameter {
        kernel: String,
        param: String,
        reason: String,
    },
    #[error("kernel `{0}` needs a communicator")]
    CommunicatorRequired(String),
    #[error("kernel `{0}` is already registered")]
    DuplicateKernel(String),
    #[error("scratch directory unavailable: {0}")]
    ScratchUnavailable(String),
    #[error("short read: wanted {expected} bytes, got {got}")]
    ShortRead { expected: u64, got: u64 },
    #[error("short write: wanted {expected} bytes, wrote {got}")]
    ShortWrite { expected: u64, got: u64 },
    #[error("collective mismatch: {0}")]
    CollectiveMismatch(String),
    #[error("collective size mismatch: rank {rank} sent {got} elements, expected {expected}")]
    SizeMismatch { rank: usize, expected: usize, got: usize },
    #[error("aborted because another rank failed")]
    Aborted,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

/// Aggregate outcome of one kernel call over all its repetitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelResult {
    pub wall_time: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub bytes_communicated: u64,
    pub checksum: f64,
}

/// What a kernel body reports for a single repetition.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelOutput {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub bytes_communicated: u64,
    pub checksum: f64,
    /// Work continues in the background; its event is emitted when joined.
    pub deferred: bool,
}

pub trait Kernel: Send + Sync {
    fn run(&self, call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError>;
}

impl<F> Kernel for F
where
    F: Fn(&KernelCall, &mut RankContext) -> Result<KernelOutput, KernelError> + Send + Sync,
{
    fn run(&self, call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
        self(call, ctx)
    }
}

/// Knobs shared by every kernel of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecOptions {
    /// Host/device copy bandwidth in bytes per second.
    pub copy_bandwidth: f64,
    /// Slowdown applied to accelerator kernels that do not set their own.
    pub accelerator_slowdown: f64,
    /// How long a rank waits for peers inside a collective.
    pub collective_timeout: Duration,
    pub fsync: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            copy_bandwidth: 4.0 * (1u64 << 30) as f64,
            accelerator_slowdown: 1.0,
            collective_timeout: Duration::from_secs(60),
            fsync: false,
        }
    }
}

/// FNV-1a, used for stable seed derivation.
pub fn hash_name(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct PendingOp {
    kernel: String,
    start: f64,
    device: DeviceKind,
    handle: JoinHandle<(Option<Communicator>, Result<KernelOutput, KernelError>)>,
}

/// Per-rank execution state: identity, seeds, communicator, emulated memory
/// pools and in-flight asynchronous operations.
pub struct RankContext {
    task: String,
    rank: usize,
    task_seed: u64,
    rank_seed: u64,
    comm: Option<Communicator>,
    sink: MetricsSink,
    scratch: Arc<Scratch>,
    options: ExecOptions,
    host_pool: Vec<u8>,
    device_pool: Vec<u8>,
    pending: Vec<PendingOp>,
}

impl fmt::Debug for RankContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RankContext")
            .field("task", &self.task)
            .field("rank", &self.rank)
            .field("task_seed", &self.task_seed)
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl RankContext {
    pub fn new(
        task: impl Into<String>,
        rank: usize,
        task_seed: u64,
        comm: Option<Communicator>,
        sink: MetricsSink,
        scratch: Arc<Scratch>,
        options: ExecOptions,
    ) -> Self {
        Self {
            task: task.into(),
            rank,
            task_seed,
            rank_seed: task_seed ^ rank as u64,
            comm,
            sink,
            scratch,
            options,
            host_pool: Vec::new(),
            device_pool: Vec::new(),
            pending: Vec::new(),
        }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn task_seed(&self) -> u64 {
        self.task_seed
    }

    pub fn rank_seed(&self) -> u64 {
        self.rank_seed
    }

    /// Seed for rank-independent data of one kernel.
    pub fn data_seed(&self, salt: &str) -> u64 {
        self.task_seed ^ hash_name(salt)
    }

    /// Seed for rank-dependent data of one kernel.
    pub fn rank_data_seed(&self, salt: &str) -> u64 {
        self.rank_seed ^ hash_name(salt)
    }

    pub fn scratch(&self) -> &Scratch {
        &self.scratch
    }

    pub fn options(&self) -> &ExecOptions {
        &self.options
    }

    pub fn sink(&self) -> &MetricsSink {
        &self.sink
    }

    pub fn comm_mut(&mut self) -> Option<&mut Communicator> {
        self.comm.as_mut()
    }

    pub fn comm_size(&self) -> usize {
        self.comm.as_ref().map_or(1, Communicator::size)
    }

    fn take_comm(&mut self) -> Option<Communicator> {
        self.comm.take()
    }

    pub fn host_pool(&self) -> &[u8] {
        &self.host_pool
    }

    pub fn device_pool(&self) -> &[u8] {
        &self.device_pool
    }

    /// Joins every in-flight asynchronous operation, emitting its event.
    pub fn drain_pending(&mut self) -> Result<(), KernelError> {
        let mut first_err = None;
        for op in std::mem::take(&mut self.pending) {
            let (comm, res) = op
                .handle
                .join()
                .unwrap_or_else(|_| (None, Err(KernelError::Failed("async kernel panicked".into()))));
            if comm.is_some() {
                self.comm = comm;
            }
            match res {
                Ok(out) => {
                    let end = self.sink.now();
                    self.sink.push(
                        op.start,
                        EventBody::Kernel(KernelEvent {
                            task: self.task.clone(),
                            rank: self.rank,
                            kernel: op.kernel,
                            end,
                            wall_time: end - op.start,
                            bytes_read: out.bytes_read,
                            bytes_written: out.bytes_written,
                            bytes_communicated: out.bytes_communicated,
                            checksum: out.checksum,
                            device: op.device,
                            is_async: true,
                        }),
                    );
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    fn defer(
        &mut self,
        kernel: &str,
        device: DeviceKind,
        handle: JoinHandle<(Option<Communicator>, Result<KernelOutput, KernelError>)>,
    ) {
        let start = self.sink.now();
        self.pending.push(PendingOp {
            kernel: kernel.to_string(),
            start,
            device,
            handle,
        });
    }

    fn ensure_host_pool(&mut self, n: usize) {
        if self.host_pool.len() < n {
            let old = self.host_pool.len();
            self.host_pool.resize(n, 0);
            // splitmix64 words: cheap enough that staging never dominates a copy
            let mut x = self.rank_seed ^ (old as u64).rotate_left(17);
            for chunk in self.host_pool[old..].chunks_mut(8) {
                x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
                let mut z = x;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
                z ^= z >> 31;
                chunk.copy_from_slice(&z.to_le_bytes()[..chunk.len()]);
            }
        }
    }
}

impl Drop for RankContext {
    fn drop(&mut self) {
        let _ = self.drain_pending();
    }
}

/// How a kernel uses the host while it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelClass {
    /// Busy on a host core for its whole duration. Holds a core token.
    Compute,
    /// Called by every rank of the communicator; mostly waits on peers.
    Collective,
    /// Mostly waits (bandwidth emulation, in-flight work). No core token.
    Transfer,
}

/// Admits at most one compute kernel per host core at a time. Rank threads
/// far outnumber cores, and letting them all time-share a core inflates and
/// scatters kernel times.
struct CoreGate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct CoreToken(&'static CoreGate);

impl CoreGate {
    fn global() -> &'static CoreGate {
        static GATE: OnceLock<CoreGate> = OnceLock::new();
        GATE.get_or_init(|| CoreGate {
            free: Mutex::new(std::thread::available_parallelism().map_or(1, |n| n.get())),
            cv: Condvar::new(),
        })
    }

    fn acquire(&'static self) -> CoreToken {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        CoreToken(self)
    }
}

impl Drop for CoreToken {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Clone)]
struct KernelEntry {
    body: Arc<dyn Kernel>,
    schema: ParamSchema,
    class: KernelClass,
}

/// Registry of named kernels. Built once, then shared read-only.
#[derive(Clone, Default)]
pub struct Catalog {
    entries: BTreeMap<String, KernelEntry>,
}

impl fmt::Debug for Catalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Catalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every built-in kernel.
    pub fn builtin() -> Self {
        let mut c = Self::empty();
        builtin::register_all(&mut c);
        c
    }

    pub fn register(
        &mut self,
        name: &str,
        body: impl Kernel + 'static,
        schema: ParamSchema,
    ) -> Result<(), KernelError> {
        self.insert(name, Arc::new(body), schema, KernelClass::Compute)
    }

    /// Registers a kernel that must be called by every rank of the communicator.
    pub fn register_collective(
        &mut self,
        name: &str,
        body: impl Kernel + 'static,
        schema: ParamSchema,
    ) -> Result<(), KernelError> {
        self.insert(name, Arc::new(body), schema, KernelClass::Collective)
    }

    /// Registers a kernel that spends its time waiting rather than computing.
    pub fn register_transfer(
        &mut self,
        name: &str,
        body: impl Kernel + 'static,
        schema: ParamSchema,
    ) -> Result<(), KernelError> {
        self.insert(name, Arc::new(body), schema, KernelClass::Transfer)
    }

    fn insert(&mut self, name: &str, body: Arc<dyn Kernel>, schema: ParamSchema, class: KernelClass) -> Result<(), KernelError> {
        if self.entries.contains_key(name) {
            return Err(KernelError::DuplicateKernel(name.to_string()));
        }
        self.entries.insert(
            name.to_string(),
            KernelEntry {
                body,
                schema,
                class,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn schema(&self, name: &str) -> Option<&ParamSchema> {
        self.entries.get(name).map(|e| &e.schema)
    }

    pub fn is_collective(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.class == KernelClass::Collective)
    }

    pub fn class(&self, name: &str) -> Option<KernelClass> {
        self.entries.get(name).map(|e| e.class)
    }

    /// Catalog membership plus parameter schema check.
    pub fn validate(&self, call: &KernelCall) -> Result<(), KernelError> {
        let entry = self
            .entries
            .get(&call.kernel)
            .ok_or_else(|| KernelError::UnknownKernel(call.kernel.clone()))?;
        entry.schema.validate(call)
    }

    pub fn execute(&self, call: &KernelCall, ctx: &mut RankContext) -> Result<KernelResult, KernelError> {
        let entry = self
            .entries
            .get(&call.kernel)
            .ok_or_else(|| KernelError::UnknownKernel(call.kernel.clone()))?;
        entry.schema.validate(call)?;
        if entry.class == KernelClass::Collective {
            ctx.drain_pending()?;
            if ctx.comm.is_none() {
                return Err(KernelError::CommunicatorRequired(call.kernel.clone()));
            }
        }
        let device = call.device(ctx.options.accelerator_slowdown)?;
        let reps = call.count_or("repetitions", 1)?;

        let start = ctx.sink.now();
        let queued = Instant::now();
        let token = (entry.class == KernelClass::Compute).then(|| CoreGate::global().acquire());
        let t0 = Instant::now();
        let mut agg = KernelOutput::default();
        for _ in 0..reps {
            let out = entry.body.run(call, ctx)?;
            agg.bytes_read += out.bytes_read;
            agg.bytes_written += out.bytes_written;
            agg.bytes_communicated += out.bytes_communicated;
            agg.checksum = out.checksum;
            agg.deferred |= out.deferred;
        }
        let elapsed = t0.elapsed();
        drop(token);
        if device.is_accelerator() {
            let scaled = elapsed.mul_f64(device.slowdown_factor);
            if scaled > elapsed {
                std::thread::sleep(scaled - elapsed);
            }
        }
        let wall = queued.elapsed();
        let result = KernelResult {
            wall_time: wall.as_secs_f64(),
            bytes_read: agg.bytes_read,
            bytes_written: agg.bytes_written,
            bytes_communicated: agg.bytes_communicated,
            checksum: agg.checksum,
        };
        if !agg.deferred {
            let end = ctx.sink.now();
            ctx.sink.push(
                start,
                EventBody::Kernel(KernelEvent {
                    task: ctx.task.clone(),
                    rank: ctx.rank,
                    kernel: call.kernel.clone(),
                    end,
                    wall_time: result.wall_time,
                    bytes_read: result.bytes_read,
                    bytes_written: result.bytes_written,
                    bytes_communicated: result.bytes_communicated,
                    checksum: result.checksum,
                    device: device.kind,
                    is_async: false,
                }),
            );
        }
        Ok(result)
    }
}

/// Builds a one-rank context outside a workflow run (benchmarks, tests).
pub fn standalone_context(scratch_root: PathBuf, seed: u64, sink: MetricsSink) -> Result<RankContext, KernelError> {
    let scratch = Arc::new(Scratch::create(&scratch_root, false, false)?);
    Ok(RankContext::new(
        "standalone",
        0,
        seed,
        Some(Communicator::solo()),
        sink,
        scratch,
        ExecOptions::default(),
    ))
}

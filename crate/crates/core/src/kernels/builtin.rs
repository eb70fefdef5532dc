//! Built-in kernel bodies and their parameter schemas.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;

use super::compute;
use super::params::ParamKind as K;
use super::{Catalog, KernelCall, KernelError, KernelOutput, ParamSchema, RankContext};

/// Collectives exchange `f64` elements.
pub const ELEMENT_WIDTH: u64 = 8;

pub const BUILTIN_NAMES: &[&str] = &[
    "readNonMPI",
    "writeNonMPI",
    "readWithMPI",
    "writeWithMPI",
    "MPIallReduce",
    "MPIallGather",
    "MPIallReduceAsync",
    "matMulGeneral",
    "matMulSimple2D",
    "fft",
    "RNG",
    "axpy",
    "scatterAdd",
    "reduction",
    "inplaceCompute",
    "dataCopyD2H",
    "dataCopyH2D",
    "dataCopyD2HAsync",
    "dataCopyH2DAsync",
];

fn device_schema() -> ParamSchema {
    ParamSchema::new().optional("device", K::Device)
}

fn io_schema() -> ParamSchema {
    ParamSchema::new()
        .required("data_size", K::Bytes)
        .optional("root_only", K::Flag)
}

fn copy_schema() -> ParamSchema {
    ParamSchema::new()
        .required("data_size", K::Bytes)
        .optional("bandwidth", K::PositiveReal)
}

pub(super) fn register_all(c: &mut Catalog) {
    let reg = |c: &mut Catalog, name: &str, f: fn(&KernelCall, &mut RankContext) -> Result<KernelOutput, KernelError>, s: ParamSchema| {
        c.register(name, f, s).expect("builtin names are unique");
    };
    let coll = |c: &mut Catalog, name: &str, f: fn(&KernelCall, &mut RankContext) -> Result<KernelOutput, KernelError>, s: ParamSchema| {
        c.register_collective(name, f, s).expect("builtin names are unique");
    };
    let xfer = |c: &mut Catalog, name: &str, f: fn(&KernelCall, &mut RankContext) -> Result<KernelOutput, KernelError>, s: ParamSchema| {
        c.register_transfer(name, f, s).expect("builtin names are unique");
    };

    reg(c, "readNonMPI", read_non_mpi, io_schema());
    reg(c, "writeNonMPI", write_non_mpi, io_schema());
    coll(c, "readWithMPI", read_with_mpi, ParamSchema::new().required("data_size", K::Bytes));
    coll(c, "writeWithMPI", write_with_mpi, ParamSchema::new().required("data_size", K::Bytes));
    coll(c, "MPIallReduce", all_reduce, device_schema().required("data_size", K::Count));
    coll(c, "MPIallGather", all_gather, device_schema().required("data_size", K::Count));
    // async variant joins in-flight work itself before taking the communicator
    xfer(c, "MPIallReduceAsync", all_reduce_async, device_schema().required("data_size", K::Count));
    reg(c, "matMulGeneral", mat_mul_general, device_schema().required("dim_list", K::DimList));
    reg(c, "matMulSimple2D", mat_mul_simple_2d, device_schema().required("dim", K::Count));
    reg(
        c,
        "fft",
        fft,
        device_schema()
            .required("data_size", K::PowerOfTwo)
            .optional("transform_dim", K::Count)
            .optional("type_in", K::TypeIn),
    );
    reg(
        c,
        "RNG",
        rng,
        device_schema()
            .required("data_size", K::Count)
            .optional("distribution", K::Distribution)
            .optional("seed", K::Bytes),
    );
    reg(c, "axpy", axpy, device_schema().required("data_size", K::Count).optional("a", K::Real));
    reg(
        c,
        "scatterAdd",
        scatter_add,
        device_schema().required("x_size", K::Count).required("y_size", K::Count),
    );
    reg(c, "reduction", reduction, device_schema().required("data_size", K::Count));
    reg(
        c,
        "inplaceCompute",
        inplace_compute,
        device_schema()
            .required("data_size", K::Count)
            .optional("functor", K::Functor),
    );
    xfer(c, "dataCopyH2D", |call, ctx| data_copy(call, ctx, Direction::H2D, false), copy_schema());
    xfer(c, "dataCopyD2H", |call, ctx| data_copy(call, ctx, Direction::D2H, false), copy_schema());
    xfer(c, "dataCopyH2DAsync", |call, ctx| data_copy(call, ctx, Direction::H2D, true), copy_schema());
    xfer(c, "dataCopyD2HAsync", |call, ctx| data_copy(call, ctx, Direction::D2H, true), copy_schema());
}

fn usize_of(v: u64) -> usize {
    usize::try_from(v).unwrap_or(usize::MAX)
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn mat_mul_simple_2d(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let d = usize_of(call.count("dim")?);
    let a = compute::seeded_uniform(ctx.data_seed("matMulSimple2D.a"), d * d);
    let b = compute::seeded_uniform(ctx.data_seed("matMulSimple2D.b"), d * d);
    let c = compute::matmul(&a, &b, d, d, d);
    Ok(KernelOutput {
        checksum: sum(&c),
        ..Default::default()
    })
}

fn mat_mul_general(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let dims = call.dim_list("dim_list")?;
    let mut checksum = 0.0;
    for (i, [m, k, n]) in dims.into_iter().enumerate() {
        let a = compute::seeded_uniform(ctx.data_seed(&format!("matMulGeneral.a.{i}")), m * k);
        let b = compute::seeded_uniform(ctx.data_seed(&format!("matMulGeneral.b.{i}")), k * n);
        checksum += sum(&compute::matmul(&a, &b, m, k, n));
    }
    Ok(KernelOutput {
        checksum,
        ..Default::default()
    })
}

fn fft(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.bytes("data_size")?);
    let dim = usize_of(call.count_or("transform_dim", 1)?);
    let shape = compute::fft_shape(n, dim).ok_or_else(|| KernelError::InvalidParameter {
        kernel: call.kernel.clone(),
        param: "transform_dim".into(),
        reason: format!("cannot split {n} points into {dim} power-of-two axes"),
    })?;
    let raw = compute::seeded_uniform(ctx.data_seed("fft"), 2 * n);
    let mut buf: Vec<Complex64> = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    compute::fft_nd(&mut buf, &shape);
    Ok(KernelOutput {
        checksum: compute::complex_checksum(&buf),
        ..Default::default()
    })
}

fn rng(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.count("data_size")?);
    let seed = match call.params.get("seed") {
        Some(_) => call.bytes("seed")? ^ ctx.rank() as u64,
        None => ctx.rank_data_seed("RNG"),
    };
    let v = compute::fill_random(call.distribution()?, seed, n);
    Ok(KernelOutput {
        checksum: sum(&v),
        ..Default::default()
    })
}

fn axpy(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.count("data_size")?);
    let a = call.real_or("a", 2.0)?;
    let x = compute::seeded_uniform(ctx.data_seed("axpy.x"), n);
    let mut y = compute::seeded_uniform(ctx.data_seed("axpy.y"), n);
    compute::axpy(a, &x, &mut y);
    Ok(KernelOutput {
        checksum: sum(&y),
        ..Default::default()
    })
}

fn scatter_add(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let xn = usize_of(call.count("x_size")?);
    let yn = usize_of(call.count("y_size")?);
    let x = compute::seeded_uniform(ctx.data_seed("scatterAdd.x"), xn);
    let mut r = compute::seeded_rng(ctx.data_seed("scatterAdd.idx"));
    let idx: Vec<usize> = (0..xn).map(|_| r.gen_range(0..yn)).collect();
    let mut y = compute::seeded_uniform(ctx.data_seed("scatterAdd.y"), yn);
    compute::scatter_add(&x, &idx, &mut y);
    Ok(KernelOutput {
        checksum: sum(&y),
        ..Default::default()
    })
}

fn reduction(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.count("data_size")?);
    let v = compute::seeded_uniform(ctx.data_seed("reduction"), n);
    Ok(KernelOutput {
        checksum: compute::reduce_sum(&v),
        ..Default::default()
    })
}

fn inplace_compute(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.count("data_size")?);
    let mut y = compute::seeded_positive(ctx.data_seed("inplaceCompute"), n);
    compute::apply_functor(call.functor()?, &mut y);
    Ok(KernelOutput {
        checksum: sum(&y),
        ..Default::default()
    })
}

fn skip_rank(call: &KernelCall, ctx: &RankContext) -> Result<bool, KernelError> {
    Ok(call.flag_or("root_only", false)? && ctx.rank() != 0)
}

fn read_non_mpi(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = call.bytes("data_size")?;
    if n == 0 || skip_rank(call, ctx)? {
        return Ok(KernelOutput::default());
    }
    let digest = ctx.scratch().read_staged(0, n)?;
    Ok(KernelOutput {
        bytes_read: n,
        checksum: digest as f64,
        ..Default::default()
    })
}

fn write_non_mpi(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = call.bytes("data_size")?;
    if n == 0 || skip_rank(call, ctx)? {
        return Ok(KernelOutput::default());
    }
    let path = ctx.scratch().rank_file(ctx.task(), ctx.rank());
    let digest = ctx.scratch().write_file(&path, 0, n, true)?;
    Ok(KernelOutput {
        bytes_written: n,
        checksum: digest as f64,
        ..Default::default()
    })
}

fn comm_of<'a>(call: &KernelCall, ctx: &'a mut RankContext) -> Result<&'a mut super::Communicator, KernelError> {
    ctx.comm_mut()
        .ok_or_else(|| KernelError::CommunicatorRequired(call.kernel.clone()))
}

fn read_with_mpi(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = call.bytes("data_size")?;
    let comm = comm_of(call, ctx)?;
    comm.barrier()?;
    let offset = comm.rank() as u64 * n;
    let digest = ctx.scratch().read_staged(offset, n)?;
    Ok(KernelOutput {
        bytes_read: n,
        checksum: digest as f64,
        ..Default::default()
    })
}

fn write_with_mpi(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = call.bytes("data_size")?;
    let comm = comm_of(call, ctx)?;
    comm.barrier()?;
    let offset = comm.rank() as u64 * n;
    let path = ctx.scratch().shared_file(ctx.task());
    let digest = ctx.scratch().write_file(&path, offset, n, false)?;
    Ok(KernelOutput {
        bytes_written: n,
        checksum: digest as f64,
        ..Default::default()
    })
}

fn reduce_with(comm: &mut super::Communicator, data: &[f64]) -> Result<KernelOutput, KernelError> {
    let out = comm.all_reduce_sum(data)?;
    Ok(KernelOutput {
        bytes_communicated: data.len() as u64 * ELEMENT_WIDTH * (comm.size() as u64 - 1),
        checksum: sum(&out),
        ..Default::default()
    })
}

fn all_reduce(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.count("data_size")?);
    let data = compute::seeded_uniform(ctx.rank_data_seed("MPIallReduce"), n);
    reduce_with(comm_of(call, ctx)?, &data)
}

fn all_reduce_async(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    ctx.drain_pending()?;
    let n = usize_of(call.count("data_size")?);
    let device = call.device(ctx.options().accelerator_slowdown)?;
    let data = compute::seeded_uniform(ctx.rank_data_seed("MPIallReduce"), n);
    let mut comm = ctx
        .take_comm()
        .ok_or_else(|| KernelError::CommunicatorRequired(call.kernel.clone()))?;
    let bytes = n as u64 * ELEMENT_WIDTH * (comm.size() as u64 - 1);
    let handle = std::thread::spawn(move || {
        let res = reduce_with(&mut comm, &data);
        (Some(comm), res)
    });
    ctx.defer(&call.kernel, device.kind, handle);
    Ok(KernelOutput {
        bytes_communicated: bytes,
        deferred: true,
        ..Default::default()
    })
}

fn all_gather(call: &KernelCall, ctx: &mut RankContext) -> Result<KernelOutput, KernelError> {
    let n = usize_of(call.count("data_size")?);
    let data = compute::seeded_uniform(ctx.rank_data_seed("MPIallGather"), n);
    let comm = comm_of(call, ctx)?;
    let out = comm.all_gather(&data)?;
    Ok(KernelOutput {
        bytes_communicated: n as u64 * ELEMENT_WIDTH * (comm.size() as u64 - 1),
        checksum: sum(&out),
        ..Default::default()
    })
}

#[derive(Debug, Clone, Copy)]
enum Direction {
    H2D,
    D2H,
}

fn data_copy(call: &KernelCall, ctx: &mut RankContext, dir: Direction, is_async: bool) -> Result<KernelOutput, KernelError> {
    if is_async {
        ctx.drain_pending()?;
    }
    let n = usize_of(call.bytes("data_size")?);
    let bandwidth = call.real_or("bandwidth", ctx.options().copy_bandwidth)?;
    let t0 = Instant::now();
    let checksum = match dir {
        Direction::H2D => {
            ctx.ensure_host_pool(n);
            if ctx.device_pool.len() < n {
                ctx.device_pool.resize(n, 0);
            }
            ctx.device_pool[..n].copy_from_slice(&ctx.host_pool[..n]);
            super::io::byte_sum(&ctx.device_pool[..n])
        }
        Direction::D2H => {
            if ctx.device_pool.len() < n {
                ctx.device_pool.resize(n, 0);
            }
            if ctx.host_pool.len() < n {
                ctx.host_pool.resize(n, 0);
            }
            ctx.host_pool[..n].copy_from_slice(&ctx.device_pool[..n]);
            super::io::byte_sum(&ctx.host_pool[..n])
        }
    } as f64;
    let target = Duration::from_secs_f64(n as f64 / bandwidth);
    let remaining = target.saturating_sub(t0.elapsed());
    if is_async {
        let handle = std::thread::spawn(move || {
            std::thread::sleep(remaining);
            (
                None,
                Ok(KernelOutput {
                    checksum,
                    ..Default::default()
                }),
            )
        });
        ctx.defer(&call.kernel, super::DeviceKind::Accelerator, handle);
        return Ok(KernelOutput {
            checksum,
            deferred: true,
            ..Default::default()
        });
    }
    if !remaining.is_zero() {
        std::thread::sleep(remaining);
    }
    Ok(KernelOutput {
        checksum,
        ..Default::default()
    })
}

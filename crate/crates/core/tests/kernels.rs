mod common;

use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use rand::Rng;
use serde_json::json;
use tempfile::TempDir;
use wfmini_core::kernels::compute::{fill_random, seeded_positive, seeded_rng, seeded_uniform};
use wfmini_core::kernels::{
    Catalog, Distribution, ExecOptions, KernelCall, KernelError, KernelOutput,
    ParamKind, ParamSchema, RankContext, Scratch, BUILTIN_NAMES,
};
use wfmini_core::trace::MetricsSink;

use common::{on_ranks, solo};

const MIB: u64 = 1 << 20;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn loop_sum(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s
}

#[test]
fn catalog_holds_every_builtin() {
    let c = Catalog::builtin();
    assert_eq!(BUILTIN_NAMES.len(), 19);
    for n in BUILTIN_NAMES {
        assert!(c.contains(n), "{n}");
    }
    assert_eq!(c.names().count(), BUILTIN_NAMES.len());
}

#[test]
fn compute_kernel_touches_no_files() {
    let (_d, mut ctx) = solo(1);
    let r = Catalog::builtin()
        .execute(&KernelCall::new("matMulSimple2D").with("dim", 4).with("repetitions", 2), &mut ctx)
        .unwrap();
    assert_eq!((r.bytes_read, r.bytes_written), (0, 0));
    assert!(r.wall_time > 0.0);
}

#[test]
fn fft_rejects_non_power_of_two() {
    let (_d, mut ctx) = solo(1);
    let err = Catalog::builtin()
        .execute(&KernelCall::new("fft").with("data_size", 3), &mut ctx)
        .unwrap_err();
    assert!(matches!(err, KernelError::InvalidParameter { .. } | KernelError::MissingParameter { .. }));
}

#[test]
fn read_accounting_is_exact() {
    let (_d, mut ctx) = solo(1);
    let c = Catalog::builtin();
    let r = c.execute(&KernelCall::new("readNonMPI").with("data_size", MIB), &mut ctx).unwrap();
    assert_eq!(r.bytes_read, MIB);
    let r = c.execute(&KernelCall::new("readNonMPI").with("data_size", 0), &mut ctx).unwrap();
    assert_eq!(r.bytes_read, 0);
    let r = c.execute(&KernelCall::new("writeNonMPI").with("data_size", 3 * MIB + 7), &mut ctx).unwrap();
    assert_eq!(r.bytes_written, 3 * MIB + 7);
}

#[test]
fn mat_mul_simple_matches_triple_loop() {
    for dim in [1usize, 2, 7, 16] {
        let (_d, mut ctx) = solo(5);
        let r = Catalog::builtin()
            .execute(&KernelCall::new("matMulSimple2D").with("dim", dim), &mut ctx)
            .unwrap();
        let a = seeded_uniform(ctx.data_seed("matMulSimple2D.a"), dim * dim);
        let b = seeded_uniform(ctx.data_seed("matMulSimple2D.b"), dim * dim);
        let mut want = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let mut s = 0.0;
                for p in 0..dim {
                    s += a[i * dim + p] * b[p * dim + j];
                }
                want += s;
            }
        }
        assert!(close(r.checksum, want), "dim {dim}: {} vs {want}", r.checksum);
    }
}

#[test]
fn mat_mul_general_empty_list_is_a_no_op() {
    let (_d, mut ctx) = solo(5);
    let r = Catalog::builtin()
        .execute(&KernelCall::new("matMulGeneral").with("dim_list", json!([])), &mut ctx)
        .unwrap();
    assert_eq!(r.checksum, 0.0);
    assert!(r.wall_time < 0.05);
}

#[test]
fn rng_is_deterministic_and_well_distributed() {
    let c = Catalog::builtin();
    let call = KernelCall::new("RNG").with("data_size", 100_000).with("seed", 7);
    let (_d1, mut a) = solo(1);
    let (_d2, mut b) = solo(2);
    assert_eq!(c.execute(&call, &mut a).unwrap().checksum, c.execute(&call, &mut b).unwrap().checksum);

    let n = 100_000f64;
    let mean = c.execute(&call, &mut a).unwrap().checksum / n;
    let bound = 3.0 * (1.0 / 12f64.sqrt()) / n.sqrt();
    assert!((mean - 0.5).abs() <= bound, "mean {mean}");

    let v = fill_random(Distribution::Normal, 11, 100_000);
    let m = loop_sum(&v) / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    assert!((var - 1.0).abs() <= 0.05, "variance {var}");
}

#[test]
fn axpy_cases() {
    let c = Catalog::builtin();
    let (_d, mut ctx) = solo(3);
    let r = c
        .execute(&KernelCall::new("axpy").with("data_size", 17).with("a", 0.0), &mut ctx)
        .unwrap();
    assert_eq!(r.checksum, loop_sum(&seeded_uniform(ctx.data_seed("axpy.y"), 17)));

    let r = c
        .execute(&KernelCall::new("axpy").with("data_size", 1000).with("a", 2.5), &mut ctx)
        .unwrap();
    let x = seeded_uniform(ctx.data_seed("axpy.x"), 1000);
    let y = seeded_uniform(ctx.data_seed("axpy.y"), 1000);
    let want: Vec<f64> = (0..1000).map(|i| y[i] + 2.5 * x[i]).collect();
    assert_eq!(r.checksum, loop_sum(&want));
}

#[test]
fn scatter_add_matches_loop() {
    let (_d, mut ctx) = solo(4);
    let r = Catalog::builtin()
        .execute(&KernelCall::new("scatterAdd").with("x_size", 1000).with("y_size", 10), &mut ctx)
        .unwrap();
    let x = seeded_uniform(ctx.data_seed("scatterAdd.x"), 1000);
    let mut g = seeded_rng(ctx.data_seed("scatterAdd.idx"));
    let idx: Vec<usize> = (0..1000).map(|_| g.gen_range(0..10)).collect();
    let mut y = seeded_uniform(ctx.data_seed("scatterAdd.y"), 10);
    for i in 0..1000 {
        y[idx[i]] += x[i];
    }
    assert!(close(r.checksum, loop_sum(&y)));
}

#[test]
fn reduction_matches_sequential_sum() {
    let (_d, mut ctx) = solo(6);
    let r = Catalog::builtin()
        .execute(&KernelCall::new("reduction").with("data_size", 10_000), &mut ctx)
        .unwrap();
    let want = loop_sum(&seeded_uniform(ctx.data_seed("reduction"), 10_000));
    assert!(close(r.checksum, want));
}

#[test]
fn inplace_sqrt_matches_loop() {
    let (_d, mut ctx) = solo(8);
    let r = Catalog::builtin()
        .execute(
            &KernelCall::new("inplaceCompute").with("data_size", 500).with("functor", "sqrt"),
            &mut ctx,
        )
        .unwrap();
    let v = seeded_positive(ctx.data_seed("inplaceCompute"), 500);
    let want: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
    assert_eq!(r.checksum, loop_sum(&want));
}

#[test]
fn accelerator_changes_time_not_values() {
    let c = Catalog::builtin();
    for kernel in ["matMulSimple2D", "axpy", "reduction"] {
        let size = if kernel == "matMulSimple2D" { "dim" } else { "data_size" };
        let host = KernelCall::new(kernel).with(size, 32);
        let dev = host
            .clone()
            .with("device", json!({"kind": "accelerator", "slowdown_factor": 3.0}));
        let (_a, mut a) = solo(12);
        let (_b, mut b) = solo(12);
        assert_eq!(c.execute(&host, &mut a).unwrap().checksum, c.execute(&dev, &mut b).unwrap().checksum);
    }
}

#[test]
fn fixed_seed_gives_identical_checksums() {
    let c = Catalog::builtin();
    let calls = [
        KernelCall::new("matMulGeneral").with("dim_list", json!([[3, 4, 5], [2, 2, 2]])),
        KernelCall::new("fft").with("data_size", 64).with("transform_dim", 2),
        KernelCall::new("RNG").with("data_size", 100).with("distribution", "normal"),
        KernelCall::new("scatterAdd").with("x_size", 50).with("y_size", 5),
    ];
    for call in &calls {
        let (_a, mut a) = solo(21);
        let (_b, mut b) = solo(21);
        assert_eq!(c.execute(call, &mut a).unwrap().checksum, c.execute(call, &mut b).unwrap().checksum);
    }
}

#[test]
fn allreduce_matches_centralized_sum() {
    let c = Catalog::builtin();
    let call = KernelCall::new("MPIallReduce").with("data_size", 64);
    let (_d, out) = on_ranks(3, Duration::from_secs(10), |ctx| {
        let input = seeded_uniform(ctx.rank_data_seed("MPIallReduce"), 64);
        (input, c.execute(&call, ctx).unwrap())
    });
    let mut total = vec![0.0; 64];
    for (input, _) in &out {
        for (t, x) in total.iter_mut().zip(input) {
            *t += x;
        }
    }
    for (_, r) in &out {
        assert_eq!(r.checksum, out[0].1.checksum);
        assert!(close(r.checksum, loop_sum(&total)));
        assert_eq!(r.bytes_communicated, 64 * 8 * 2);
    }
}

#[test]
fn allgather_matches_concatenation() {
    let c = Catalog::builtin();
    let call = KernelCall::new("MPIallGather").with("data_size", 16);
    let (_d, out) = on_ranks(4, Duration::from_secs(10), |ctx| {
        let input = seeded_uniform(ctx.rank_data_seed("MPIallGather"), 16);
        (input, c.execute(&call, ctx).unwrap())
    });
    let concat: Vec<f64> = out.iter().flat_map(|(v, _)| v.clone()).collect();
    assert_eq!(concat.len(), 4 * 16);
    for (_, r) in &out {
        assert!(close(r.checksum, loop_sum(&concat)));
        assert_eq!(r.bytes_communicated, 16 * 8 * 3);
    }
}

#[test]
fn allgather_of_rank_ids() {
    let (_d, out) = on_ranks(3, Duration::from_secs(10), |ctx| {
        let r = ctx.rank() as f64;
        ctx.comm_mut().unwrap().all_gather(&[r]).unwrap()
    });
    for v in out {
        assert_eq!(v, vec![0.0, 1.0, 2.0]);
    }
}

#[test]
fn single_rank_collectives_are_identity() {
    let (_d, mut ctx) = solo(2);
    let comm = ctx.comm_mut().unwrap();
    assert_eq!(comm.all_reduce_sum(&[1.5, 2.0]).unwrap(), vec![1.5, 2.0]);
    assert_eq!(comm.all_gather(&[4.0]).unwrap(), vec![4.0]);
    let r = Catalog::builtin()
        .execute(&KernelCall::new("writeWithMPI").with("data_size", MIB), &mut ctx)
        .unwrap();
    assert_eq!(r.bytes_written, MIB);
}

#[test]
fn mpi_io_is_additive_over_ranks() {
    let c = Catalog::builtin();
    let (_d, out) = on_ranks(4, Duration::from_secs(10), |ctx| {
        let w = c.execute(&KernelCall::new("writeWithMPI").with("data_size", MIB), ctx).unwrap();
        let r = c.execute(&KernelCall::new("readWithMPI").with("data_size", MIB), ctx).unwrap();
        (w.bytes_written, r.bytes_read)
    });
    assert_eq!(out.iter().map(|o| o.0).sum::<u64>(), 4 * MIB);
    assert_eq!(out.iter().map(|o| o.1).sum::<u64>(), 4 * MIB);
}

#[test]
fn skipped_collective_is_a_mismatch() {
    let c = Catalog::builtin();
    let call = KernelCall::new("MPIallReduce").with("data_size", 4);
    let (_d, out) = on_ranks(2, Duration::from_millis(200), |ctx| {
        if ctx.rank() == 0 {
            Some(c.execute(&call, ctx))
        } else {
            None
        }
    });
    assert!(matches!(out[0], Some(Err(KernelError::CollectiveMismatch(_)))));
}

#[test]
fn collective_without_communicator_fails() {
    let dir = TempDir::new().unwrap();
    let scratch = Arc::new(Scratch::create(dir.path(), false, false).unwrap());
    let mut ctx = RankContext::new("t", 0, 1, None, MetricsSink::new(), scratch, ExecOptions::default());
    let err = Catalog::builtin()
        .execute(&KernelCall::new("MPIallReduce").with("data_size", 4), &mut ctx)
        .unwrap_err();
    assert!(matches!(err, KernelError::CommunicatorRequired(_)));
}

#[test]
fn copy_round_trip_preserves_checksum() {
    let c = Catalog::builtin();
    let (_d, mut ctx) = solo(3);
    let h2d = c.execute(&KernelCall::new("dataCopyH2D").with("data_size", MIB), &mut ctx).unwrap();
    let d2h = c.execute(&KernelCall::new("dataCopyD2H").with("data_size", MIB), &mut ctx).unwrap();
    assert_eq!(h2d.checksum, d2h.checksum);
    assert_eq!(ctx.host_pool()[..MIB as usize], ctx.device_pool()[..MIB as usize]);

    let r = c.execute(&KernelCall::new("dataCopyH2D").with("data_size", 0), &mut ctx).unwrap();
    assert!(r.wall_time < 0.01);
}

#[test]
fn copy_follows_bandwidth_model() {
    let (_d, mut ctx) = solo(3);
    let c = Catalog::builtin();
    // first use of a buffer size pays for staging the host and device buffers
    let warm = KernelCall::new("dataCopyH2D").with("data_size", 64 * MIB).with("bandwidth", 1e15);
    c.execute(&warm, &mut ctx).unwrap();
    let call = KernelCall::new("dataCopyH2D")
        .with("data_size", 64 * MIB)
        .with("bandwidth", (1u64 << 30) as f64);
    let r = c.execute(&call, &mut ctx).unwrap();
    assert!((0.0625 * 0.5..=0.0625 * 2.0).contains(&r.wall_time), "{}", r.wall_time);
}

#[test]
fn async_copy_and_reduce_complete_on_drain() {
    let c = Catalog::builtin();
    let (_d, mut ctx) = solo(3);
    c.execute(&KernelCall::new("dataCopyH2DAsync").with("data_size", 1024), &mut ctx)
        .unwrap();
    c.execute(&KernelCall::new("MPIallReduceAsync").with("data_size", 8), &mut ctx)
        .unwrap();
    ctx.drain_pending().unwrap();
    let kernels: Vec<String> = ctx.sink().kernel_events().into_iter().map(|e| e.kernel).collect();
    assert!(kernels.contains(&"dataCopyH2DAsync".to_string()));
    assert!(kernels.contains(&"MPIallReduceAsync".to_string()));
}

#[test]
fn register_custom_kernel() {
    let mut c = Catalog::builtin();
    c.register(
        "noop",
        |_: &KernelCall, _: &mut RankContext| Ok(KernelOutput::default()),
        ParamSchema::new(),
    )
    .unwrap();
    let (_d, mut ctx) = solo(1);
    c.execute(&KernelCall::new("noop"), &mut ctx).unwrap();

    let err = c
        .register(
            "axpy",
            |_: &KernelCall, _: &mut RankContext| Ok(KernelOutput::default()),
            ParamSchema::new().required("data_size", ParamKind::Count),
        )
        .unwrap_err();
    assert!(matches!(err, KernelError::DuplicateKernel(_)));
}

#[test]
fn unknown_kernel_and_unknown_parameter() {
    let c = Catalog::builtin();
    let (_d, mut ctx) = solo(1);
    assert!(matches!(
        c.execute(&KernelCall::new("nope"), &mut ctx),
        Err(KernelError::UnknownKernel(_))
    ));
    assert!(c
        .validate(&KernelCall::new("axpy").with("data_size", 4).with("colour", 1))
        .is_err());
    assert!(c.validate(&KernelCall::new("axpy")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn io_bytes_equal_request(read in 0u64..300_000, write in 0u64..300_000, reps in 1u64..3) {
        let c = Catalog::builtin();
        let (_d, mut ctx) = solo(1);
        let r = c.execute(&KernelCall::new("readNonMPI").with("data_size", read).with("repetitions", reps), &mut ctx).unwrap();
        let w = c.execute(&KernelCall::new("writeNonMPI").with("data_size", write).with("repetitions", reps), &mut ctx).unwrap();
        prop_assert_eq!(r.bytes_read, read * reps);
        prop_assert_eq!(w.bytes_written, write * reps);
        prop_assert_eq!(r.bytes_written + w.bytes_read, 0);
    }
}

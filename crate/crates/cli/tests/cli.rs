use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const SCALE: &str = "0.001";

fn wfmini(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfmini"))
        .args(args)
        .current_dir(dir)
        .env("WFMINI_SCRATCH", dir)
        .env_remove("WFMINI_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a small exemplar as `wf.json` and its pool as `pool.json`.
fn documents(dir: &Path) {
    let o = wfmini(
        dir,
        &[
            "exemplar",
            "--id",
            "ip:serial_cpu:V1",
            "--desk-scale",
            SCALE,
            "--out",
            "wf.json",
            "--resources-out",
            "pool.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn repeated_runs_get_their_own_directories() {
    let dir = TempDir::new().unwrap();
    documents(dir.path());
    let o = wfmini(
        dir.path(),
        &["run", "--workflow", "wf.json", "--resources", "pool.json", "--repeat", "8", "--out", "runs"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for i in 1..=8 {
        let run = dir.path().join(format!("runs/run-{i}"));
        for f in ["trace.jsonl", "summary.json", "workflow.json", "resources.json", "meta.json"] {
            assert!(run.join(f).is_file(), "run-{i}/{f}");
        }
    }
    assert!(!dir.path().join("runs/run-9").exists());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("run-")).count(), 8);

    let o = wfmini(dir.path(), &["repro", "--runs", "runs"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("8 runs"));
    let report = json_file(&dir.path().join("runs/variation-report.json"));
    assert_eq!(report["runs"], 8);
    assert_eq!(report["write_bytes"]["std"], 0.0);
    assert_eq!(report["stage_order_consistent"], true);
}

#[test]
fn workflow_without_resources_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    documents(dir.path());
    let o = wfmini(dir.path(), &["run", "--workflow", "wf.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--resources"));
    assert_eq!(code(&wfmini(dir.path(), &["run", "--exemplar", "ddmd:sync:V3"])), 1);
    assert_eq!(code(&wfmini(dir.path(), &["frobnicate"])), 1);
}

#[test]
fn fixed_seed_reproduces_bytes_and_checksums() {
    let dir = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = wfmini(
            dir.path(),
            &["run", "--exemplar", "ip:serial_cpu:V1", "--desk-scale", SCALE, "--seed", "7", "--out", out],
        );
        assert_eq!(code(&o), 0);
    }
    let summary = |d: &str| json_file(&dir.path().join(d).join("run-1/summary.json"));
    let (a, b) = (summary("a"), summary("b"));
    assert_eq!(a["read_bytes"], b["read_bytes"]);
    assert_eq!(a["write_bytes"], b["write_bytes"]);
    assert_eq!(a["per_category"]["simulation"]["write_bytes"], b["per_category"]["simulation"]["write_bytes"]);

    let checksums = |d: &str| -> Vec<(String, String, u64, f64)> {
        let text = fs::read_to_string(dir.path().join(d).join("run-1/trace.jsonl")).unwrap();
        let mut v: Vec<_> = text
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap())
            .filter(|e| e["kind"] == "kernel")
            .map(|e| {
                (
                    e["task"].as_str().unwrap().to_string(),
                    e["kernel"].as_str().unwrap().to_string(),
                    e["rank"].as_u64().unwrap(),
                    e["checksum"].as_f64().unwrap(),
                )
            })
            .collect();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v
    };
    let ca = checksums("a");
    assert!(!ca.is_empty());
    assert_eq!(ca, checksums("b"));
    assert_eq!(json_file(&dir.path().join("a/run-1/meta.json"))["seed"], 7);
}

fn summary_file(dir: &Path, name: &str, makespan: f64, read: u64, write: u64) -> String {
    let path = dir.join(name);
    let doc = json!({
        "makespan": makespan, "cpu_util_pct": 0.0, "gpu_util_pct": 0.0,
        "read_bytes": read, "write_bytes": write, "per_task": {}, "per_category": {},
    });
    fs::write(&path, doc.to_string()).unwrap();
    name.to_string()
}

#[test]
fn validate_reports_ratios() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let o1 = summary_file(d, "o1.json", 1840.3, 560_500, 100);
    let o2 = summary_file(d, "o2.json", 1336.3, 400_000, 100);
    let m1 = summary_file(d, "m1.json", 428.3, 128_200, 25);
    let m2 = summary_file(d, "m2.json", 327.0, 91_500, 25);
    let o = wfmini(d, &["validate", "--original", &o1, &o2, "--mini", &m1, &m2]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json_file(&d.join("ratio-report.json"));
    assert!((report["per_config"][0]["r_time"].as_f64().unwrap() - 0.2327).abs() < 1e-4);
    assert_eq!(report["constant"], true);
    assert!(stdout(&o).contains("config 2"));

    let o = wfmini(d, &["validate", "--original", &o1, "--mini", &o1, "--out", "self.json"]);
    assert_eq!(code(&o), 0);
    let report = json_file(&d.join("self.json"));
    assert_eq!(report["r_time"], 1.0);
    assert_eq!(report["r_read"], 1.0);

    assert_eq!(code(&wfmini(d, &["validate", "--original", &o1, &o2, "--mini", &m1])), 1);

    let far = summary_file(d, "far.json", 100.0, 91_500, 25);
    let o = wfmini(d, &["validate", "--original", &o1, &o2, "--mini", &m1, &far]);
    assert_eq!(code(&o), 2);
}

#[test]
fn report_writes_timelines() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let o = wfmini(d, &["run", "--exemplar", "ddmd:sync:V1", "--desk-scale", SCALE, "--out", "runs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&wfmini(d, &["report", "--trace", "runs/run-1"])), 0);
    let csv = fs::read_to_string(d.join("runs/run-1/utilization.csv")).unwrap();
    assert!(csv.starts_with("slot,kind,task,start_s,end_s,value"));
    assert!(csv.lines().any(|l| l.contains(",gpu,md_p1_01,")));
    let io = fs::read_to_string(d.join("runs/run-1/io.csv")).unwrap();
    assert_eq!(io.lines().count(), 31);

    let o = wfmini(d, &["report", "--trace", "runs/run-1/trace.jsonl", "--format", "svg", "--out", "svg"]);
    assert_eq!(code(&o), 0);
    let svg = fs::read_to_string(d.join("svg/utilization.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(d.join("svg/io.svg").is_file());

    fs::write(d.join("empty.jsonl"), "").unwrap();
    assert_eq!(code(&wfmini(d, &["report", "--trace", "empty.jsonl"])), 1);
    assert_eq!(code(&wfmini(d, &["report", "--trace", "missing.jsonl"])), 1);
}

#[test]
fn kernels_list_and_bench() {
    let dir = TempDir::new().unwrap();
    let o = wfmini(dir.path(), &["kernels", "list"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(names.len(), 19);
    for n in ["matMulSimple2D", "fft", "MPIallReduce", "dataCopyD2HAsync", "writeWithMPI"] {
        assert!(names.iter().any(|x| x == n), "{n}");
    }
    assert!(stdout(&o).contains("MPIallGather (collective)"));

    let o = wfmini(
        dir.path(),
        &["kernels", "bench", "--name", "axpy", "--param", "data_size=64", "--trials", "3"],
    );
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().last().unwrap().starts_with("median "));

    let bad = |args: &[&str]| code(&wfmini(dir.path(), args));
    assert_eq!(bad(&["kernels", "bench", "--name", "axpy", "--param", "data_size=64", "--trials", "0"]), 1);
    assert_eq!(bad(&["kernels", "bench", "--name", "nope"]), 1);
    assert_eq!(bad(&["kernels", "bench", "--name", "axpy", "--param", "data_size"]), 1);
    assert_eq!(bad(&["kernels", "bench", "--name", "axpy", "--param", "bogus=1"]), 1);
}

#[test]
fn exemplar_documents() {
    let dir = TempDir::new().unwrap();
    let o = wfmini(dir.path(), &["exemplar", "--id", "ddmd:async:V2"]);
    assert_eq!(code(&o), 0);
    let spec: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(spec["tasks"].as_array().unwrap().len(), 45);
    assert_eq!(spec["execution_model"], "async");

    documents(dir.path());
    let pool = json_file(&dir.path().join("pool.json"));
    assert_eq!(pool["num_nodes"], 4);
    assert_eq!(code(&wfmini(dir.path(), &["exemplar", "--id", "ddmd:sync:V3"])), 1);
    assert_eq!(code(&wfmini(dir.path(), &["exemplar", "--id", "ip:serial_cpu:V1", "--desk-scale", "0"])), 1);
}

#[test]
fn calibrate_writes_mapping() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let o = wfmini(d, &["run", "--exemplar", "ip:serial_cpu:V1", "--desk-scale", SCALE, "--out", "orig"]);
    assert_eq!(code(&o), 0);
    let s = json_file(&d.join("orig/run-1/summary.json"));
    let categories: serde_json::Map<String, Value> = s["per_category"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, c)| {
            (
                k.clone(),
                json!({
                    "makespan_s": c["makespan"], "read_bytes": c["read_bytes"],
                    "write_bytes": c["write_bytes"], "num_ranks": c["num_ranks"],
                }),
            )
        })
        .collect();
    let profile = json!({
        "workflow": {"makespan_s": s["makespan"], "read_bytes": s["read_bytes"], "write_bytes": s["write_bytes"]},
        "categories": categories,
    });
    fs::write(d.join("profile.json"), profile.to_string()).unwrap();

    let args = [
        "calibrate", "--exemplar", "ip:serial_cpu:V1", "--desk-scale", SCALE, "--profile", "profile.json",
        "--ratio", "1.0", "--tolerance", "0.5", "--max-iters", "3",
    ];
    let o = wfmini(d, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mapping = json_file(&d.join("mapping.json"));
    assert_eq!(mapping["ratio"], 1.0);
    assert!(mapping["param_factors"]["training:epochs"]["factor"].as_f64().unwrap() > 0.0);
    assert!(d.join("mapping.workflow.json").is_file());

    let mut bad = args.to_vec();
    bad[8] = "1.5";
    assert_eq!(code(&wfmini(d, &bad)), 1);

    fs::write(d.join("broken.json"), r#"{"workflow": {}}"#).unwrap();
    let mut broken = args.to_vec();
    broken[6] = "broken.json";
    assert_eq!(code(&wfmini(d, &broken)), 1);
}

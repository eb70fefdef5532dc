//! `wfmini`: run, calibrate, validate and inspect workflow mini-apps.
//!
//! Exit codes: 0 success, 1 user error (bad flags or input documents),
//! 2 runtime failure (a task failed, calibration did not converge, ratios are
//! not constant).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use wfmini_core::calibrate::{calibrate, ingest_profile, CalibrationError, CalibrationSettings};
use wfmini_core::exemplars::{exemplar_pool, exemplar_spec, ExemplarId, DEFAULT_DESK_SCALE};
use wfmini_core::kernels::{standalone_context, Catalog, KernelCall};
use wfmini_core::metrics::{
    compute_ratios, io_csv, io_svg, io_timeline, reproducibility_stats, summarize, utilization_csv,
    utilization_svg, utilization_timeline, MetricsSummary, DEFAULT_RATIO_TOLERANCE,
};
use wfmini_core::trace::{MetricsSink, RunTrace};
use wfmini_core::workflow::{execute, load_workflow, ResourcePool, RunOptions, WorkflowError, WorkflowSpec};

#[derive(Parser)]
#[command(name = "wfmini", version, about = "Workflow mini-apps: emulate, calibrate and measure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a workflow one or more times and record traces.
    Run(RunArgs),
    /// Tune a workflow's parameters toward a fraction of a profiled original.
    Calibrate(CalibrateArgs),
    /// Compare mini-app and original summaries per configuration.
    Validate(ValidateArgs),
    /// Run-to-run variation over a directory of runs.
    Repro(ReproArgs),
    /// Utilization and I/O timelines from a trace.
    Report(ReportArgs),
    /// List or benchmark catalog kernels.
    Kernels {
        #[command(subcommand)]
        action: KernelsAction,
    },
    /// Write a built-in exemplar as a workflow document.
    Exemplar(ExemplarArgs),
}

#[derive(Args)]
struct Source {
    /// Workflow document (JSON).
    #[arg(long, conflicts_with = "exemplar")]
    workflow: Option<PathBuf>,
    /// Built-in exemplar, `family:model:config` (e.g. ip:serial_cpu:V1).
    #[arg(long)]
    exemplar: Option<String>,
    /// Resource pool document; defaults to the exemplar's pool.
    #[arg(long)]
    resources: Option<PathBuf>,
    /// Size multiplier for exemplars.
    #[arg(long, default_value_t = DEFAULT_DESK_SCALE)]
    desk_scale: f64,
}

#[derive(Args)]
struct Execution {
    /// Global seed (overrides WFMINI_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Scratch root for kernel file I/O (overrides WFMINI_SCRATCH).
    #[arg(long)]
    scratch: Option<PathBuf>,
    /// Keep scratch files after the run.
    #[arg(long)]
    keep_scratch: bool,
    /// Flush written files to storage.
    #[arg(long)]
    fsync: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    exec: Execution,
    /// Output directory; runs go to <out>/run-<i>/.
    #[arg(long, default_value = "wfmini-out")]
    out: PathBuf,
    /// Number of sequential runs.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    exec: Execution,
    /// Profile of the original workflow.
    #[arg(long)]
    profile: PathBuf,
    /// Target ratio of mini-app to original metrics, in (0, 1].
    #[arg(long)]
    ratio: f64,
    /// Accepted relative error per metric, in (0, 0.5].
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    #[arg(long, default_value_t = 5)]
    max_iters: usize,
    /// Mapping output; the tuned workflow is written next to it.
    #[arg(long, default_value = "mapping.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Original summaries, one per configuration, in order (file or run directory).
    #[arg(long, num_args = 1.., required = true)]
    original: Vec<PathBuf>,
    /// Mini-app summaries, aligned with --original.
    #[arg(long, num_args = 1.., required = true)]
    mini: Vec<PathBuf>,
    /// Allowed max/min ratio spread across configurations.
    #[arg(long, default_value_t = DEFAULT_RATIO_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value = "ratio-report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ReproArgs {
    /// Directory holding run-<i>/summary.json.
    #[arg(long)]
    runs: PathBuf,
    /// Report path; defaults to <runs>/variation-report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory or trace.jsonl file.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output directory; defaults to the trace's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KernelsAction {
    /// Print every kernel and its parameters.
    List,
    /// Time repeated executions of one kernel.
    Bench {
        #[arg(long)]
        name: String,
        /// Kernel parameter `name=value`; values are parsed as JSON when possible.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExemplarArgs {
    /// `family:model:config`
    #[arg(long)]
    id: String,
    #[arg(long, default_value_t = DEFAULT_DESK_SCALE)]
    desk_scale: f64,
    /// Workflow output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the exemplar's resource pool here.
    #[arg(long)]
    resources_out: Option<PathBuf>,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait Classify<T> {
    fn user(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn user(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn env_seed(flag: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("WFMINI_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("WFMINI_SEED must be an unsigned integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn scratch_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("WFMINI_SCRATCH").map(PathBuf::from))
        .unwrap_or_else(std::env::temp_dir)
}

struct Loaded {
    spec: WorkflowSpec,
    pool: ResourcePool,
    exemplar: Option<ExemplarId>,
}

fn load_source(src: &Source, catalog: &Catalog) -> anyhow::Result<Loaded> {
    let (spec, exemplar) = match (&src.workflow, &src.exemplar) {
        (Some(path), None) => (load_workflow(&read_json(path)?, catalog)?, None),
        (None, Some(id)) => {
            let id: ExemplarId = id.parse()?;
            (exemplar_spec(id, src.desk_scale)?, Some(id))
        }
        _ => bail!("give exactly one of --workflow or --exemplar"),
    };
    let pool = match (&src.resources, exemplar) {
        (Some(path), _) => {
            serde_json::from_value(read_json(path)?).with_context(|| format!("resource document {}", path.display()))?
        }
        (None, Some(id)) => exemplar_pool(id),
        (None, None) => bail!("--resources is required with --workflow"),
    };
    Ok(Loaded { spec, pool, exemplar })
}

fn run_options(exec: &Execution, catalog: Arc<Catalog>) -> anyhow::Result<RunOptions> {
    let mut o = RunOptions::new(env_seed(exec.seed)?);
    o.scratch_root = scratch_root(exec.scratch.clone());
    o.keep_scratch = exec.keep_scratch;
    o.exec.fsync = exec.fsync;
    o.catalog = catalog;
    Ok(o)
}

fn workflow_failure(e: WorkflowError) -> Failure {
    let code = match e {
        WorkflowError::TaskFailed { .. } | WorkflowError::Scratch(_) => 2,
        _ => 1,
    };
    Failure {
        code,
        error: e.into(),
    }
}

fn cmd_run(args: RunArgs) -> CmdResult {
    if args.repeat == 0 {
        return Err(anyhow!("--repeat must be >= 1")).user();
    }
    let catalog = Arc::new(Catalog::builtin());
    let loaded = load_source(&args.source, &catalog).user()?;
    let options = run_options(&args.exec, catalog).user()?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .user()?;
    for i in 1..=args.repeat {
        let dir = args.out.join(format!("run-{i}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).runtime()?;
        let result = execute(&loaded.spec, loaded.pool, &options);
        let trace = match result {
            Ok(t) => t,
            Err(WorkflowError::TaskFailed { task, source, trace }) => {
                let _ = write_trace(&dir, &trace);
                return Err(anyhow!("run {i}: task `{task}` failed: {source}")).runtime();
            }
            Err(e) => return Err(workflow_failure(e)),
        };
        write_trace(&dir, &trace).runtime()?;
        let summary = summarize(&trace).runtime()?;
        write_json(&dir.join("summary.json"), &summary).runtime()?;
        write_json(&dir.join("workflow.json"), &loaded.spec).runtime()?;
        write_json(&dir.join("resources.json"), &loaded.pool).runtime()?;
        let meta = json!({
            "run_id": trace.run_id,
            "index": i,
            "seed": options.seed,
            "exemplar": loaded.exemplar.map(|e| e.to_string()),
            "desk_scale": loaded.exemplar.map(|_| args.source.desk_scale),
            "tool_version": env!("CARGO_PKG_VERSION"),
        });
        write_json(&dir.join("meta.json"), &meta).runtime()?;
        println!(
            "run-{i}: makespan {:.3} s, cpu {:.1}%, gpu {:.1}%, read {} B, write {} B",
            summary.makespan, summary.cpu_util_pct, summary.gpu_util_pct, summary.read_bytes, summary.write_bytes
        );
    }
    Ok(())
}

fn write_trace(dir: &Path, trace: &RunTrace) -> anyhow::Result<()> {
    let f = fs::File::create(dir.join("trace.jsonl"))?;
    let mut w = std::io::BufWriter::new(f);
    trace.write_jsonl(&mut w)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> CmdResult {
    let catalog = Arc::new(Catalog::builtin());
    let loaded = load_source(&args.source, &catalog).user()?;
    let target = ingest_profile(&read_json(&args.profile).user()?).user()?;
    let options = run_options(&args.exec, catalog).user()?;
    let settings = CalibrationSettings {
        ratio: args.ratio,
        tolerance: args.tolerance,
        max_iters: args.max_iters,
    };
    settings.validate().user()?;
    let pool = loaded.pool;
    let runner = |spec: &WorkflowSpec| -> anyhow::Result<MetricsSummary> {
        let trace = execute(spec, pool, &options)?;
        Ok(summarize(&trace)?)
    };
    let (calibration, converged) = match calibrate(&loaded.spec, &target, settings, runner) {
        Ok(c) => (c, true),
        Err(CalibrationError::NonConvergence { best, .. }) => (*best, false),
        Err(e @ CalibrationError::RunnerFailure(_)) => return Err(e).runtime(),
        Err(e) => return Err(e).user(),
    };
    for it in &calibration.history {
        println!(
            "run {}: worst residual {:.4}{}",
            it.run,
            it.worst,
            if it.accepted { "" } else { " (rejected)" }
        );
    }
    write_json(&args.out, &calibration.mapping).runtime()?;
    let tuned = args.out.with_extension("workflow.json");
    write_json(&tuned, &calibration.spec).runtime()?;
    println!("mapping: {}\ntuned workflow: {}", args.out.display(), tuned.display());
    if !converged {
        return Err(anyhow!("calibration did not reach tolerance {} in {} runs", args.tolerance, args.max_iters))
            .runtime();
    }
    Ok(())
}

fn load_summary(path: &Path) -> anyhow::Result<MetricsSummary> {
    let file = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
    serde_json::from_value(read_json(&file)?).with_context(|| format!("summary document {}", file.display()))
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    if !(args.tolerance >= 1.0) {
        return Err(anyhow!("--tolerance is a max/min spread and must be >= 1")).user();
    }
    let original = args.original.iter().map(|p| load_summary(p)).collect::<anyhow::Result<Vec<_>>>().user()?;
    let mini = args.mini.iter().map(|p| load_summary(p)).collect::<anyhow::Result<Vec<_>>>().user()?;
    let report = compute_ratios(&original, &mini, args.tolerance).user()?;
    write_json(&args.out, &report).runtime()?;
    for c in &report.per_config {
        println!(
            "config {}: r_time {:.4}  r_read {:.4}  r_write {:.4}",
            c.config + 1,
            c.r_time,
            c.r_read,
            c.r_write
        );
    }
    println!(
        "spread time {:.4} read {:.4} write {:.4} (tolerance {})",
        report.spread.time, report.spread.read, report.spread.write, report.tolerance
    );
    if !report.constant {
        return Err(anyhow!("ratios are not constant across configurations")).runtime();
    }
    Ok(())
}

fn run_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut dirs: Vec<(usize, PathBuf)> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let idx = name.strip_prefix("run-")?.parse().ok()?;
            e.path().join("summary.json").is_file().then(|| (idx, e.path()))
        })
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

fn cmd_repro(args: ReproArgs) -> CmdResult {
    let dirs = run_dirs(&args.runs).user()?;
    let summaries = dirs.iter().map(|d| load_summary(d)).collect::<anyhow::Result<Vec<_>>>().user()?;
    let report = reproducibility_stats(&summaries).user()?;
    let out = args.out.unwrap_or_else(|| args.runs.join("variation-report.json"));
    write_json(&out, &report).runtime()?;
    println!("{} runs", report.runs);
    println!("makespan (s)  {}  cv {:.4}", report.makespan.display, report.makespan.cv);
    println!("read (B)      {}", report.read_bytes.display);
    println!("write (B)     {}", report.write_bytes.display);
    for (stage, s) in &report.per_stage {
        println!("{stage:<12}  {}  cv {:.4}", s.makespan.display, s.makespan.cv);
    }
    println!("stage order consistent: {}", report.stage_order_consistent);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let (file, dir) = if args.trace.is_dir() {
        (args.trace.join("trace.jsonl"), args.trace.clone())
    } else {
        let dir = args.trace.parent().map(Path::to_path_buf).unwrap_or_default();
        (args.trace.clone(), dir)
    };
    let f = fs::File::open(&file).with_context(|| format!("opening {}", file.display())).user()?;
    let trace = RunTrace::read_jsonl(std::io::BufReader::new(f)).user()?;
    let util = utilization_timeline(&trace).user()?;
    let io = io_timeline(&trace).user()?;
    let out = args.out.unwrap_or(dir);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).user()?;
    let (u_name, u_text, i_name, i_text) = match args.format {
        Format::Csv => (
            "utilization.csv",
            utilization_csv(&util).runtime()?,
            "io.csv",
            io_csv(&io).runtime()?,
        ),
        Format::Svg => ("utilization.svg", utilization_svg(&util), "io.svg", io_svg(&io)),
    };
    for (name, text) in [(u_name, u_text), (i_name, i_text)] {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display())).runtime()?;
        println!("{}", path.display());
    }
    Ok(())
}

fn parse_param(s: &str) -> anyhow::Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--param expects name=value, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn cmd_kernels(action: KernelsAction) -> CmdResult {
    let catalog = Catalog::builtin();
    match action {
        KernelsAction::List => {
            for name in catalog.names() {
                let schema = catalog.schema(name).expect("listed kernel has a schema");
                let params: Vec<String> = schema
                    .params
                    .iter()
                    .map(|p| {
                        if p.required {
                            format!("{}:{}", p.name, p.kind)
                        } else {
                            format!("[{}:{}]", p.name, p.kind)
                        }
                    })
                    .collect();
                let tag = if catalog.is_collective(name) { " (collective)" } else { "" };
                println!("{name}{tag}  {}", params.join(" "));
            }
            Ok(())
        }
        KernelsAction::Bench {
            name,
            params,
            trials,
            seed,
            scratch,
        } => {
            if trials == 0 {
                return Err(anyhow!("--trials must be >= 1")).user();
            }
            let mut call = KernelCall::new(&name);
            for p in &params {
                let (k, v) = parse_param(p).user()?;
                call = call.with(&k, v);
            }
            catalog.validate(&call).user()?;
            let seed = env_seed(seed).user()?;
            let mut ctx = standalone_context(scratch_root(scratch), seed, MetricsSink::with_kernel_events(false))
                .runtime()?;
            let mut times = Vec::with_capacity(trials);
            println!("trial  wall_time_s");
            for t in 1..=trials {
                let r = catalog.execute(&call, &mut ctx).runtime()?;
                println!("{t:>5}  {:.6}", r.wall_time);
                times.push(r.wall_time);
            }
            times.sort_by(f64::total_cmp);
            let median = if trials % 2 == 1 {
                times[trials / 2]
            } else {
                0.5 * (times[trials / 2 - 1] + times[trials / 2])
            };
            println!("median {median:.6}");
            Ok(())
        }
    }
}

fn cmd_exemplar(args: ExemplarArgs) -> CmdResult {
    let id: ExemplarId = args.id.parse().user()?;
    let spec = exemplar_spec(id, args.desk_scale).user()?;
    match &args.out {
        Some(path) => write_json(path, &spec).runtime()?,
        None => println!("{}", serde_json::to_string_pretty(&spec).expect("spec serializes")),
    }
    if let Some(path) = &args.resources_out {
        write_json(path, &exemplar_pool(id)).runtime()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Repro(a) => cmd_repro(a),
        Command::Report(a) => cmd_report(a),
        Command::Kernels { action } => cmd_kernels(action),
        Command::Exemplar(a) => cmd_exemplar(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

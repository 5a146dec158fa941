//! Command-line front end: `generate`, `schedule`, `simulate`, `report`
//! and `sweep`. Every command reads one TOML [`RunConfig`]; flags override
//! its fields.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{AdapterConfig, Overrides, PipelineSection, RunConfig, SolverSection, SyntheticSource, DEFAULT_STAGES};
pub use report::{cmd_report, costmodel_report, CostModelReport, ReportOutput};

use crate::costmodel::{microbatch_time, profile_capacity};
use crate::error::{Error, EXIT_OTHER};
use crate::packing::{PackingResult, SolveTiming, SolverUsed};
use crate::pipesim::{compare_policies, simulate_pipeline, uniform_1f1b_makespan, PipelineInput, Policy, SimResult};
use crate::schedule::{plan, PlanSummary, Schedule, SCHEMA_VERSION};
use crate::workload::{write_samples_jsonl, DatasetStats, Workload};

pub const SCHEDULE_FILE: &str = "schedule.json";
pub const SUMMARY_FILE: &str = "schedule_summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Parser)]
#[command(name = "loraplan", version, about = "Multi-adapter LoRA fine-tuning scheduler and pipeline simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Token capacity per microbatch.
    #[arg(long)]
    pub capacity: Option<u64>,
    #[arg(long)]
    pub stages: Option<usize>,
    /// Per-stage solver timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Threads for per-batch packing.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Materialize the configured datasets as JSONL plus length stats.
    Generate(CommonArgs),
    /// Pack, assemble, merge and repair a schedule.
    Schedule(CommonArgs),
    /// Simulate a schedule file, one policy, or all policies side by side.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Existing schedule JSON to simulate instead of planning one.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Run all three policies on the configured workload.
        #[arg(long)]
        compare: bool,
        /// sequential_1f1b, uniform_fill or fused_schedule.
        #[arg(long)]
        policy: Option<String>,
        /// Write a line-per-event trace of the (last) simulation here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Aggregate run directories into CSV tables.
    Report {
        /// A run directory, or a directory whose subdirectories are runs.
        dir: PathBuf,
    },
    /// Throughput of each candidate capacity.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated capacities; defaults to the config's candidates.
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<u64>,
    },
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            capacity: self.capacity,
            stages: self.stages,
            timeout: self.timeout,
            group_size: self.group_size,
            workers: self.workers,
            seed: self.seed,
            out: self.out.clone(),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn max_padded_sample(w: &Workload) -> u64 {
    w.samples
        .iter()
        .map(|s| w.adapter(&s.adapter_id).expect("known adapter").padded(u64::from(s.length_tokens)))
        .max()
        .unwrap_or(0)
}

/// The configured capacity, or the profiler's pick among candidates that
/// hold the longest padded sample.
pub fn resolve_capacity(cfg: &RunConfig, w: &Workload) -> Result<u64, Error> {
    let need = max_padded_sample(w);
    if let Some(c) = cfg.capacity {
        if c < need {
            return Err(Error::Config(format!(
                "capacity {c} below the longest padded sample ({need} tokens)"
            )));
        }
        return Ok(c);
    }
    let usable: Vec<u64> = cfg.capacity_candidates.iter().copied().filter(|&c| c >= need).collect();
    if usable.is_empty() {
        return Err(Error::Config(format!(
            "no capacity given and no candidate holds the longest padded sample ({need} tokens)"
        )));
    }
    Ok(profile_capacity(&usable, &cfg.time_model, cfg.stages)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub schema_version: u32,
    pub seed: u64,
    pub files: Vec<PathBuf>,
    pub stats: Vec<DatasetStats>,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutput, Error> {
    let w = cfg.load_workload()?;
    let out = cfg.out_dir();
    let mut files = Vec::new();
    for a in &w.adapters {
        let own: Vec<_> = w
            .samples_of(&a.adapter_id)
            .map(|s| crate::workload::SampleRecord {
                global_batch_index: None,
                ..s.clone()
            })
            .collect();
        let path = out.join("data").join(format!("{}.jsonl", a.adapter_id));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_samples_jsonl(&path, &own)?;
        files.push(path);
    }
    let result = GenerateOutput {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        files,
        stats: w.stats(),
    };
    write_file(&out.join(STATS_FILE), &to_json(&result))?;
    Ok(result)
}

/// Per-batch packing metrics; timings live here rather than in the
/// schedule so the schedule file is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingRecord {
    pub group_id: usize,
    pub global_batch_index: usize,
    pub bin_count: usize,
    pub smallest_bin_tokens: u64,
    pub solver_used: SolverUsed,
    pub greedy_bins: usize,
    pub greedy_smallest: u64,
    pub stage1_bins: usize,
    pub stage1_optimal: bool,
    pub stage2_smallest: u64,
    pub stage2_optimal: bool,
    pub timing: SolveTiming,
}

impl PackingRecord {
    fn new(g: usize, j: usize, r: &PackingResult) -> Self {
        Self {
            group_id: g,
            global_batch_index: j,
            bin_count: r.bin_count,
            smallest_bin_tokens: r.smallest_bin_tokens,
            solver_used: r.solver_used,
            greedy_bins: r.greedy_bins,
            greedy_smallest: r.greedy_smallest,
            stage1_bins: r.stage1_bins,
            stage1_optimal: r.stage1_optimal,
            stage2_smallest: r.stage2_smallest,
            stage2_optimal: r.stage2_optimal,
            timing: r.timing,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSummaryFile {
    pub summary: PlanSummary,
    pub groups: Vec<Vec<String>>,
    pub packings: Vec<PackingRecord>,
}

pub struct ScheduleOutput {
    pub schedule: Schedule,
    pub summary: ScheduleSummaryFile,
    pub schedule_path: PathBuf,
    pub summary_path: PathBuf,
}

pub fn cmd_schedule(cfg: &RunConfig) -> Result<ScheduleOutput, Error> {
    let w = cfg.load_workload()?;
    let capacity = resolve_capacity(cfg, &w)?;
    let out = plan(&w, &cfg.plan_config(capacity)?)?;
    let summary = ScheduleSummaryFile {
        summary: out.summary,
        groups: out.grouping.groups.iter().map(|g| g.adapter_ids.clone()).collect(),
        packings: out
            .packings
            .iter()
            .flat_map(|(g, m)| m.iter().map(move |(j, r)| PackingRecord::new(*g, *j, r)))
            .collect(),
    };
    let dir = cfg.out_dir();
    let schedule_path = dir.join(SCHEDULE_FILE);
    let summary_path = dir.join(SUMMARY_FILE);
    write_file(&schedule_path, &out.schedule.to_json())?;
    write_file(&summary_path, &to_json(&summary))?;
    Ok(ScheduleOutput {
        schedule: out.schedule,
        summary,
        schedule_path,
        summary_path,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub stages: usize,
    pub capacity: Option<u64>,
    pub adapters: usize,
    pub results: Vec<SimResult>,
    pub costmodel: CostModelReport,
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub schedule: Option<PathBuf>,
    pub compare: bool,
    pub policy: Option<Policy>,
    pub trace: Option<PathBuf>,
}

pub fn cmd_simulate(cfg: &RunConfig, opts: &SimulateOptions) -> Result<SimReport, Error> {
    let mut pipe = cfg.pipeline_config();
    pipe.record_trace = opts.trace.is_some();
    let (results, capacity, adapters) = if let Some(path) = &opts.schedule {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s = Schedule::from_json(&text)?;
        let r = simulate_pipeline(PipelineInput::Schedule(&s), &pipe)?;
        (vec![r], Some(s.capacity), s.adapter_ids().len())
    } else {
        let w = cfg.load_workload()?;
        let policies: Vec<Policy> = match (opts.compare, opts.policy) {
            (true, _) => Policy::ALL.to_vec(),
            (false, Some(p)) => vec![p],
            (false, None) => vec![Policy::FusedSchedule],
        };
        let needs_capacity = policies.contains(&Policy::FusedSchedule);
        let capacity = if needs_capacity { Some(resolve_capacity(cfg, &w)?) } else { cfg.capacity };
        let plan_cfg = cfg.plan_config(capacity.unwrap_or(u64::MAX))?;
        (compare_policies(&w, &plan_cfg, &pipe, &policies)?, capacity, w.adapters.len())
    };
    if let Some(t) = &opts.trace {
        let last = results.last().expect("at least one result");
        write_file(t, &last.trace_text())?;
    }
    let report = SimReport {
        schema_version: SCHEMA_VERSION,
        stages: cfg.stages,
        capacity,
        adapters,
        results,
        costmodel: costmodel_report(&cfg.hardware()?)?,
    };
    write_file(&cfg.out_dir().join(REPORT_FILE), &to_json(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub capacity: u64,
    /// Tokens per second of uniform full microbatches (4 per stage).
    pub analytic_tokens_per_s: f64,
    /// Bubble ratio and throughput of the planned workload, when the
    /// capacity holds every sample.
    pub fused_bubble_ratio: Option<f64>,
    pub fused_tokens_per_s: Option<f64>,
}

pub fn cmd_sweep(cfg: &RunConfig, candidates: &[u64]) -> Result<Vec<SweepRow>, Error> {
    let list: Vec<u64> = if candidates.is_empty() {
        cfg.capacity_candidates.clone()
    } else {
        candidates.to_vec()
    };
    if list.is_empty() || list.contains(&0) {
        return Err(Error::Config("sweep needs positive --candidates or capacity_candidates".into()));
    }
    let workload = if cfg.adapters.is_empty() { None } else { Some(cfg.load_workload()?) };
    let pipe = cfg.pipeline_config();
    let m = 4 * cfg.stages;
    let mut rows = Vec::new();
    for &c in &list {
        let f = microbatch_time(c, &cfg.time_model)? / cfg.stages as f64;
        let total = uniform_1f1b_makespan(cfg.stages, m, f, pipe.backward_ratio * f);
        let mut row = SweepRow {
            capacity: c,
            analytic_tokens_per_s: (m as u64 * c) as f64 / total,
            fused_bubble_ratio: None,
            fused_tokens_per_s: None,
        };
        if let Some(w) = workload.as_ref().filter(|w| max_padded_sample(w) <= c) {
            let s = plan(w, &cfg.plan_config(c)?)?.schedule;
            let r = simulate_pipeline(PipelineInput::Schedule(&s), &pipe)?;
            row.fused_bubble_ratio = Some(r.bubble_ratio);
            row.fused_tokens_per_s = Some(r.throughput_tokens_per_s);
        }
        rows.push(row);
    }
    let mut csv = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        csv.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_file(&cfg.out_dir().join("sweep.csv"), &String::from_utf8(bytes).expect("csv is utf-8"))?;
    Ok(rows)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(c) => {
            let out = cmd_generate(&c.resolve()?)?;
            for (s, f) in out.stats.iter().zip(&out.files) {
                println!(
                    "{}: {} samples, mean {:.1}, p50 {}, p95 {}, max {} -> {}",
                    s.adapter_id,
                    s.count,
                    s.mean_tokens,
                    s.p50,
                    s.p95,
                    s.max_tokens,
                    f.display()
                );
            }
        }
        Command::Schedule(c) => {
            let out = cmd_schedule(&c.resolve()?)?;
            let s = &out.summary.summary;
            println!(
                "{} samples, {} groups, {} global batches, capacity {}: {} microbatches, {} noops, {} merged away",
                s.samples, s.groups, s.global_batches, s.capacity, s.microbatches, s.noops, s.merged_away
            );
            let used: Vec<String> = s.solver_used.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("solver_used {} (greedy {:.1}%), solve {:.3}s, wall {:.3}s", used.join(" "), 100.0 * s.greedy_fraction, s.solve_secs, s.wall_secs);
            println!("wrote {} and {}", out.schedule_path.display(), out.summary_path.display());
        }
        Command::Simulate {
            common,
            schedule,
            compare,
            policy,
            trace,
        } => {
            let cfg = common.resolve()?;
            let policy = policy.map(|p| p.parse::<Policy>()).transpose()?;
            let report = cmd_simulate(
                &cfg,
                &SimulateOptions {
                    schedule,
                    compare,
                    policy,
                    trace,
                },
            )?;
            for r in &report.results {
                println!(
                    "{:<16} bubble {:>7.3}%  time {:.6}s  {:.1} tok/s  {} microbatches  {} noops",
                    r.policy.map_or("-", Policy::as_str),
                    100.0 * r.bubble_ratio,
                    r.total_time,
                    r.throughput_tokens_per_s,
                    r.microbatches,
                    r.noops
                );
            }
        }
        Command::Report { dir } => {
            let out = cmd_report(&dir)?;
            print!("{}", out.text);
        }
        Command::Sweep { common, candidates } => {
            let rows = cmd_sweep(&common.resolve()?, &candidates)?;
            for r in rows {
                let fused = match (r.fused_bubble_ratio, r.fused_tokens_per_s) {
                    (Some(b), Some(t)) => format!("fused bubble {:.3}% {:.1} tok/s", 100.0 * b, t),
                    _ => "fused -".into(),
                };
                println!("capacity {:>6}  analytic {:.1} tok/s  {fused}", r.capacity, r.analytic_tokens_per_s);
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == 0 {
                EXIT_OTHER
            } else {
                code
            }
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

/// Length stats straight from a schedule, for reports.
pub(crate) fn schedule_stats(s: &Schedule) -> Vec<(String, Vec<u32>)> {
    let mut by: std::collections::BTreeMap<String, Vec<u32>> = Default::default();
    for e in &s.entries {
        if let Some(mb) = &e.microbatch {
            for seg in &mb.segments {
                by.entry(seg.adapter_id.clone())
                    .or_default()
                    .extend(seg.samples.iter().map(|x| x.length_tokens));
            }
        }
    }
    by.into_iter().collect()
}

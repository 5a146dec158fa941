use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, schedule_stats, ScheduleSummaryFile, SimReport, REPORT_FILE, SCHEDULE_FILE, SUMMARY_FILE};
use crate::costmodel::{
    arithmetic_intensity, lora_memory_bytes, total_bytes, traffic, GemmShape, HardwareProfile, MemoryFootprint, Pass,
    TrafficReport, Variant,
};
use crate::error::Error;
use crate::pipesim::Policy;
use crate::schedule::Schedule;

/// Tokens, hidden size and rank of the layer all cost-model numbers refer to.
pub const REFERENCE_SHAPE: GemmShape = GemmShape {
    m: 8192,
    k: 4096,
    n: 4096,
    r: 16,
    element_bytes: 2,
};
const HIST_BIN_TOKENS: u32 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelReport {
    pub shape: GemmShape,
    pub hardware: HardwareProfile,
    pub arithmetic_intensity: f64,
    pub memory_bound: bool,
    pub memory: MemoryFootprint,
    pub traffic: Vec<TrafficReport>,
    pub total_bytes: Vec<(Variant, u64)>,
    /// Unfused over frozen bytes.
    pub unfused_over_frozen: f64,
    /// Fused multi-adapter over unfused bytes.
    pub fused_over_unfused: f64,
    pub note: String,
}

pub fn costmodel_report(hw: &HardwareProfile) -> Result<CostModelReport, Error> {
    let s = REFERENCE_SHAPE;
    let ai = arithmetic_intensity(s.r as f64, s.n as f64, s.m as f64)?;
    let memory = lora_memory_bytes(s.n, s.k, s.r)?;
    let variants = [Variant::Frozen, Variant::Unfused, Variant::FusedLora, Variant::FusedMultiLora];
    let mut reports = Vec::new();
    let mut totals = Vec::new();
    for v in variants {
        for p in [Pass::Forward, Pass::Backward] {
            reports.push(traffic(&s, p, v)?);
        }
        totals.push((v, total_bytes(&s, v)?));
    }
    let get = |v: Variant| totals.iter().find(|(x, _)| *x == v).expect("all variants counted").1 as f64;
    Ok(CostModelReport {
        shape: s,
        hardware: *hw,
        arithmetic_intensity: ai,
        memory_bound: ai < hw.machine_balance,
        memory,
        traffic: reports,
        unfused_over_frozen: get(Variant::Unfused) / get(Variant::Frozen),
        fused_over_unfused: get(Variant::FusedMultiLora) / get(Variant::Unfused),
        total_bytes: totals,
        note: format!(
            "adapter parameters are {:.2}% of the frozen weight; the memory saving comes from \
             dropping optimizer state and gradients for the frozen weight",
            100.0 * memory.adapter_param_fraction
        ),
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub runs: Vec<PathBuf>,
    pub files: Vec<PathBuf>,
    pub text: String,
}

struct Run {
    name: String,
    schedule: Schedule,
    summary: ScheduleSummaryFile,
    report: SimReport,
}

fn load_run(dir: &Path) -> Result<Run, Error> {
    let missing: Vec<&str> = [SCHEDULE_FILE, SUMMARY_FILE, REPORT_FILE]
        .into_iter()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("{}: missing {}", dir.display(), missing.join(", "))));
    }
    let path = dir.join(SCHEDULE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Run {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| ".".into()),
        schedule: Schedule::from_json(&text)?,
        summary: read_json(&dir.join(SUMMARY_FILE))?,
        report: read_json(&dir.join(REPORT_FILE))?,
    })
}

fn is_run(dir: &Path) -> bool {
    dir.join(SCHEDULE_FILE).is_file()
}

fn csv_text<T: Serialize>(rows: &[T]) -> Result<String, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Serialize)]
struct SummaryRow {
    run: String,
    adapters: usize,
    samples: usize,
    capacity: u64,
    stages: usize,
    microbatches: usize,
    noops: usize,
    merged_away: usize,
    greedy_fraction: f64,
    solve_secs: f64,
    sequential_bubble: Option<f64>,
    uniform_fill_bubble: Option<f64>,
    fused_bubble: Option<f64>,
}

#[derive(Serialize)]
struct BubbleRow {
    run: String,
    adapters: usize,
    policy: String,
    bubble_ratio: f64,
    total_time: f64,
    throughput_tokens_per_s: f64,
    microbatches: usize,
    noops: usize,
}

#[derive(Serialize)]
struct HistRow {
    run: String,
    adapter_id: String,
    bin_start: u32,
    bin_end: u32,
    count: usize,
}

#[derive(Serialize)]
struct TrafficRow {
    variant: Variant,
    pass: Pass,
    kernel: String,
    bytes_read: u64,
    bytes_written: u64,
}

/// Reads one run directory, or every run directly below `dir`, and writes
/// `summary.csv`, `bubble_ratios.csv`, `length_hist.csv` and `traffic.csv`
/// into `dir`.
pub fn cmd_report(dir: &Path) -> Result<ReportOutput, Error> {
    if !dir.is_dir() {
        let kind = if dir.exists() { std::io::ErrorKind::NotADirectory } else { std::io::ErrorKind::NotFound };
        return Err(Error::io(dir, std::io::Error::from(kind)));
    }
    let run_dirs: Vec<PathBuf> = if is_run(dir) {
        vec![dir.to_path_buf()]
    } else {
        let mut subs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && is_run(p))
            .collect();
        subs.sort();
        subs
    };
    if run_dirs.is_empty() {
        // name the files a run needs
        load_run(dir)?;
    }
    let mut runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    runs.sort_by(|a, b| a.summary.summary.adapters.cmp(&b.summary.summary.adapters).then(a.name.cmp(&b.name)));

    let mut summary = Vec::new();
    let mut bubbles = Vec::new();
    let mut hist = Vec::new();
    for r in &runs {
        let s = &r.summary.summary;
        let bubble_of = |p: Policy| r.report.results.iter().find(|x| x.policy == Some(p)).map(|x| x.bubble_ratio);
        let fused = bubble_of(Policy::FusedSchedule)
            .or_else(|| r.report.results.iter().find(|x| x.policy.is_none()).map(|x| x.bubble_ratio));
        summary.push(SummaryRow {
            run: r.name.clone(),
            adapters: s.adapters,
            samples: s.samples,
            capacity: s.capacity,
            stages: s.stage_count,
            microbatches: s.microbatches,
            noops: s.noops,
            merged_away: s.merged_away,
            greedy_fraction: s.greedy_fraction,
            solve_secs: s.solve_secs,
            sequential_bubble: bubble_of(Policy::Sequential1f1b),
            uniform_fill_bubble: bubble_of(Policy::UniformFill),
            fused_bubble: fused,
        });
        for x in &r.report.results {
            bubbles.push(BubbleRow {
                run: r.name.clone(),
                adapters: r.report.adapters,
                policy: x.policy.map_or("schedule", Policy::as_str).to_string(),
                bubble_ratio: x.bubble_ratio,
                total_time: x.total_time,
                throughput_tokens_per_s: x.throughput_tokens_per_s,
                microbatches: x.microbatches,
                noops: x.noops,
            });
        }
        for (adapter, lengths) in schedule_stats(&r.schedule) {
            let mut counts = std::collections::BTreeMap::<u32, usize>::new();
            for l in lengths {
                *counts.entry(l / HIST_BIN_TOKENS).or_default() += 1;
            }
            for (b, count) in counts {
                hist.push(HistRow {
                    run: r.name.clone(),
                    adapter_id: adapter.clone(),
                    bin_start: b * HIST_BIN_TOKENS,
                    bin_end: (b + 1) * HIST_BIN_TOKENS,
                    count,
                });
            }
        }
    }
    let traffic_rows: Vec<TrafficRow> = runs[0]
        .report
        .costmodel
        .traffic
        .iter()
        .flat_map(|t| {
            t.kernels.iter().map(move |k| TrafficRow {
                variant: t.variant,
                pass: t.pass,
                kernel: k.kernel.clone(),
                bytes_read: k.bytes_read,
                bytes_written: k.bytes_written,
            })
        })
        .collect();

    let mut files = Vec::new();
    for (name, text) in [
        ("summary.csv", csv_text(&summary)?),
        ("bubble_ratios.csv", csv_text(&bubbles)?),
        ("length_hist.csv", csv_text(&hist)?),
        ("traffic.csv", csv_text(&traffic_rows)?),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }

    let mut text = String::new();
    for row in &summary {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |b| format!("{:.2}%", 100.0 * b));
        text.push_str(&format!(
            "{}: {} adapters, {} microbatches, {} noops, bubble sequential {} uniform {} fused {}\n",
            row.run,
            row.adapters,
            row.microbatches,
            row.noops,
            pct(row.sequential_bubble),
            pct(row.uniform_fill_bubble),
            pct(row.fused_bubble)
        ));
    }
    for f in &files {
        text.push_str(&format!("wrote {}\n", f.display()));
    }
    Ok(ReportOutput {
        runs: run_dirs,
        files,
        text,
    })
}

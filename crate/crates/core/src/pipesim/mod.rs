//! Pipeline-parallel and data-parallel execution simulators.
//!
//! Per-stage forward time of a microbatch is its multiplier times
//! `microbatch_time(padded tokens) / S`; backward is `backward_ratio` times
//! forward. Communication is free. Three policies feed the same engine:
//! `sequential_1f1b` runs one adapter at a time and flushes the pipeline
//! after every global batch; `uniform_fill` round-robins fixed-size
//! microbatches over all adapters without flushing, with the noops the lemma
//! requires; `fused_schedule` runs a planned [`Schedule`].

mod engine;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{microbatch_time, CostModelError, TimeModelParams};
use crate::error::Error;
use crate::packing::{Microbatch, PackedSample};
use crate::schedule::{check_bubble_lemma, plan, verify_and_fix, PlanConfig, Schedule, ScheduleEntry, ScheduleError};
use crate::workload::Workload;

use engine::{run_1f1b, Unit};
pub use engine::{Op, TraceEvent};

pub const DEFAULT_BACKWARD_RATIO: f64 = 2.0;
pub const DEFAULT_SAMPLES_PER_MICROBATCH: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Invalid(String),
    #[error("schedule breaks the bubble lemma at {count} entries; first at commit index {first_index} (adapter {adapter_id:?} batch {batch})")]
    LemmaViolated {
        count: usize,
        first_index: usize,
        adapter_id: String,
        batch: usize,
    },
    #[error(transparent)]
    CostModel(#[from] CostModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[serde(rename = "sequential_1f1b")]
    Sequential1f1b,
    UniformFill,
    FusedSchedule,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Sequential1f1b, Policy::UniformFill, Policy::FusedSchedule];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Sequential1f1b => "sequential_1f1b",
            Policy::UniformFill => "uniform_fill",
            Policy::FusedSchedule => "fused_schedule",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| SimError::Invalid(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: usize,
    #[serde(default)]
    pub time_model: TimeModelParams,
    #[serde(default = "default_ratio")]
    pub backward_ratio: f64,
    /// One per stage; empty means all 1.0.
    #[serde(default)]
    pub stage_multipliers: Vec<f64>,
    /// Samples per microbatch for the two baseline policies.
    #[serde(default = "default_spm")]
    pub samples_per_microbatch: usize,
    #[serde(default)]
    pub record_trace: bool,
}

fn default_ratio() -> f64 {
    DEFAULT_BACKWARD_RATIO
}
fn default_spm() -> usize {
    DEFAULT_SAMPLES_PER_MICROBATCH
}

impl PipelineConfig {
    pub fn new(stages: usize, time_model: TimeModelParams) -> Self {
        Self {
            stages,
            time_model,
            backward_ratio: DEFAULT_BACKWARD_RATIO,
            stage_multipliers: Vec::new(),
            samples_per_microbatch: DEFAULT_SAMPLES_PER_MICROBATCH,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.stages < 1 {
            return Err(SimError::Invalid("stage count must be >= 1".into()));
        }
        if !(self.backward_ratio >= 0.0 && self.backward_ratio.is_finite()) {
            return Err(SimError::Invalid("backward_ratio must be >= 0".into()));
        }
        if !self.stage_multipliers.is_empty() && self.stage_multipliers.len() != self.stages {
            return Err(SimError::Invalid(format!(
                "{} stage multipliers for {} stages",
                self.stage_multipliers.len(),
                self.stages
            )));
        }
        if self.stage_multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(SimError::Invalid("stage multipliers must be > 0".into()));
        }
        if self.samples_per_microbatch < 1 {
            return Err(SimError::Invalid("samples_per_microbatch must be >= 1".into()));
        }
        self.time_model.validate()?;
        Ok(())
    }

    fn multipliers(&self) -> Vec<f64> {
        if self.stage_multipliers.is_empty() {
            vec![1.0; self.stages]
        } else {
            self.stage_multipliers.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    pub total_time: f64,
    pub stage_busy: Vec<f64>,
    pub stage_idle: Vec<f64>,
    pub bubble_ratio: f64,
    pub throughput_tokens_per_s: f64,
    pub tokens: u64,
    pub padded_tokens: u64,
    pub microbatches: usize,
    pub noops: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_tokens: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_imbalance: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl SimResult {
    fn from_timeline(total: f64, busy: Vec<f64>, tokens: u64, padded: u64, microbatches: usize, noops: usize) -> Self {
        let lanes = busy.len().max(1) as f64;
        let idle: Vec<f64> = busy.iter().map(|b| (total - b).max(0.0)).collect();
        let bubble = if total > 0.0 { idle.iter().sum::<f64>() / (lanes * total) } else { 0.0 };
        Self {
            policy: None,
            total_time: total,
            stage_busy: busy,
            stage_idle: idle,
            bubble_ratio: bubble,
            throughput_tokens_per_s: if total > 0.0 { tokens as f64 / total } else { 0.0 },
            tokens,
            padded_tokens: padded,
            microbatches,
            noops,
            rank_tokens: Vec::new(),
            load_imbalance: None,
            trace: Vec::new(),
        }
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Makespan of `microbatches` identical units through a flushed 1F1B run.
pub fn uniform_1f1b_makespan(stages: usize, microbatches: usize, forward: f64, backward: f64) -> f64 {
    if forward <= 0.0 {
        return microbatches as f64 * backward;
    }
    let units: Vec<Unit> = (0..microbatches)
        .map(|i| Unit {
            forward,
            noop: false,
            label: i,
        })
        .collect();
    run_1f1b(&units, &vec![1.0; stages.max(1)], backward / forward, 0.0, None).end
}

struct Stream {
    units: Vec<Unit>,
    /// Exclusive end of each flushed run within `units`.
    flushes: Vec<usize>,
    tokens: u64,
    padded: u64,
    noops: usize,
}

fn run_stream(stream: &Stream, cfg: &PipelineConfig) -> SimResult {
    let mult = cfg.multipliers();
    let mut trace = Vec::new();
    let mut t = 0.0;
    let mut busy = vec![0.0; cfg.stages];
    let mut begin = 0;
    for &end in &stream.flushes {
        let run = run_1f1b(
            &stream.units[begin..end],
            &mult,
            cfg.backward_ratio,
            t,
            cfg.record_trace.then_some(&mut trace),
        );
        t = run.end;
        for (b, r) in busy.iter_mut().zip(run.busy) {
            *b += r;
        }
        begin = end;
    }
    let mut r = SimResult::from_timeline(
        t,
        busy,
        stream.tokens,
        stream.padded,
        stream.units.len() - stream.noops,
        stream.noops,
    );
    r.trace = trace;
    r
}

fn stage_forward(tokens: u64, cfg: &PipelineConfig) -> Result<f64, SimError> {
    Ok(microbatch_time(tokens, &cfg.time_model)? / cfg.stages as f64)
}

fn schedule_stream(schedule: &Schedule, cfg: &PipelineConfig) -> Result<Stream, SimError> {
    let mut home_sum: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    let mut all = (0.0, 0usize);
    let mut fwd = Vec::with_capacity(schedule.entries.len());
    for e in &schedule.entries {
        if e.is_noop() {
            fwd.push(None);
            continue;
        }
        let f = stage_forward(e.padded_tokens(), cfg)?;
        let h = home_sum.entry((e.group_id, e.global_batch_index)).or_default();
        h.0 += f;
        h.1 += 1;
        all.0 += f;
        all.1 += 1;
        fwd.push(Some(f));
    }
    let fallback = if all.1 > 0 { all.0 / all.1 as f64 } else { stage_forward(0, cfg)? };
    let units: Vec<Unit> = schedule
        .entries
        .iter()
        .zip(&fwd)
        .enumerate()
        .map(|(i, (e, f))| Unit {
            forward: f.unwrap_or_else(|| match home_sum.get(&(e.group_id, e.global_batch_index)) {
                Some(&(s, n)) => s / n as f64,
                None => fallback,
            }),
            noop: e.is_noop(),
            label: i,
        })
        .collect();
    Ok(Stream {
        flushes: vec![units.len()],
        units,
        tokens: schedule.entries.iter().map(ScheduleEntry::raw_tokens).sum(),
        padded: schedule.entries.iter().map(ScheduleEntry::padded_tokens).sum(),
        noops: schedule.noop_count(),
    })
}

/// Fixed-size chunks of an adapter's batch-`j` samples in dataset order.
fn chunks(workload: &Workload, adapter_id: &str, j: usize, per: usize) -> Vec<Microbatch> {
    let spec = workload.adapter(adapter_id).expect("adapter of workload");
    let samples: Vec<_> = workload
        .samples_of(adapter_id)
        .filter(|s| s.global_batch_index == Some(j))
        .collect();
    samples
        .chunks(per)
        .map(|c| {
            let mut mb = Microbatch::empty(u64::MAX);
            for s in c {
                mb.push(
                    adapter_id,
                    spec.padding_multiple,
                    PackedSample {
                        sample_id: s.sample_id.clone(),
                        length_tokens: s.length_tokens,
                        global_batch_index: j,
                    },
                );
            }
            mb
        })
        .collect()
}

fn sequential_stream(workload: &Workload, cfg: &PipelineConfig) -> Result<Stream, SimError> {
    let mut units = Vec::new();
    let mut flushes = Vec::new();
    let (mut tokens, mut padded) = (0, 0);
    for a in &workload.adapters {
        let batches = workload
            .samples_of(&a.adapter_id)
            .filter_map(|s| s.global_batch_index)
            .max()
            .map_or(0, |m| m + 1);
        for j in 0..batches {
            for mb in chunks(workload, &a.adapter_id, j, cfg.samples_per_microbatch) {
                tokens += mb.raw_tokens();
                padded += mb.total_padded_tokens;
                units.push(Unit {
                    forward: stage_forward(mb.total_padded_tokens, cfg)?,
                    noop: false,
                    label: units.len(),
                });
            }
            flushes.push(units.len());
        }
    }
    Ok(Stream {
        units,
        flushes,
        tokens,
        padded,
        noops: 0,
    })
}

/// The uniform-fill baseline as a schedule: at each global-batch index,
/// chunk `i` of every adapter in turn, then chunk `i + 1`, with lemma noops.
pub fn uniform_fill_schedule(workload: &Workload, cfg: &PipelineConfig) -> Result<Schedule, SimError> {
    let mut entries = Vec::new();
    for j in 0..workload.batch_count() {
        let per_adapter: Vec<Vec<Microbatch>> = workload
            .adapters
            .iter()
            .map(|a| chunks(workload, &a.adapter_id, j, cfg.samples_per_microbatch))
            .collect();
        let rounds = per_adapter.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..rounds {
            for (ai, list) in per_adapter.iter().enumerate() {
                if let Some(mb) = list.get(i) {
                    entries.push(ScheduleEntry::microbatch(ai, j, mb.clone()));
                }
            }
        }
    }
    Ok(verify_and_fix(&Schedule::new(cfg.stages, u64::MAX, entries), cfg.stages)?)
}

pub enum PipelineInput<'a> {
    Schedule(&'a Schedule),
    Sequential(&'a Workload),
    UniformFill(&'a Workload),
}

pub fn simulate_pipeline(input: PipelineInput<'_>, cfg: &PipelineConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let (stream, policy) = match input {
        PipelineInput::Schedule(s) => {
            let v = check_bubble_lemma(s, cfg.stages);
            if let Some(first) = v.first() {
                return Err(SimError::LemmaViolated {
                    count: v.len(),
                    first_index: first.commit_index,
                    adapter_id: first.adapter_id.clone(),
                    batch: first.batch,
                });
            }
            (schedule_stream(s, cfg)?, Policy::FusedSchedule)
        }
        PipelineInput::Sequential(w) => (sequential_stream(w, cfg)?, Policy::Sequential1f1b),
        PipelineInput::UniformFill(w) => (schedule_stream(&uniform_fill_schedule(w, cfg)?, cfg)?, Policy::UniformFill),
    };
    let mut r = run_stream(&stream, cfg);
    r.policy = Some(policy);
    Ok(r)
}

/// Lock-step data parallelism: step `i` lasts as long as the slowest rank's
/// `i`-th microbatch (forward plus backward).
pub fn simulate_dp(streams: &[Vec<u64>], params: &TimeModelParams, backward_ratio: f64) -> Result<SimResult, SimError> {
    if streams.is_empty() {
        return Err(SimError::Invalid("data parallelism needs at least one rank".into()));
    }
    let steps = streams[0].len();
    if let Some((r, s)) = streams.iter().enumerate().find(|(_, s)| s.len() != steps) {
        return Err(SimError::Invalid(format!(
            "rank {r} has {} steps, rank 0 has {steps}",
            s.len()
        )));
    }
    params.validate()?;
    let scale = 1.0 + backward_ratio;
    let mut busy = vec![0.0; streams.len()];
    let mut total = 0.0;
    for i in 0..steps {
        let mut step = 0.0f64;
        for (r, s) in streams.iter().enumerate() {
            let t = microbatch_time(s[i], params)? * scale;
            busy[r] += t;
            step = step.max(t);
        }
        total += step;
    }
    let rank_tokens: Vec<u64> = streams.iter().map(|s| s.iter().sum()).collect();
    let tokens = rank_tokens.iter().sum();
    let max_busy = busy.iter().copied().fold(0.0, f64::max);
    let mean_busy = busy.iter().sum::<f64>() / busy.len() as f64;
    let mut r = SimResult::from_timeline(total, busy, tokens, tokens, steps * streams.len(), 0);
    r.load_imbalance = Some(if max_busy > 0.0 { 1.0 - mean_busy / max_busy } else { 0.0 });
    r.rank_tokens = rank_tokens;
    Ok(r)
}

/// Runs each policy on the same workload; `fused_schedule` plans it first.
pub fn compare_policies(workload: &Workload, plan_cfg: &PlanConfig, cfg: &PipelineConfig, policies: &[Policy]) -> Result<Vec<SimResult>, Error> {
    let plan_cfg = PlanConfig {
        stages: cfg.stages,
        ..plan_cfg.clone()
    };
    let mut planned: Option<Schedule> = None;
    let mut out = Vec::with_capacity(policies.len());
    for &p in policies {
        let r = match p {
            Policy::Sequential1f1b => simulate_pipeline(PipelineInput::Sequential(workload), cfg)?,
            Policy::UniformFill => simulate_pipeline(PipelineInput::UniformFill(workload), cfg)?,
            Policy::FusedSchedule => {
                if planned.is_none() {
                    planned = Some(plan(workload, &plan_cfg)?.schedule);
                }
                simulate_pipeline(PipelineInput::Schedule(planned.as_ref().expect("planned above")), cfg)?
            }
        };
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

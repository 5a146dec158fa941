use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_schedule, merge_pass, verify_and_fix, Schedule, SCHEMA_VERSION};
use crate::error::Error;
use crate::grouping::{group_adapters, GroupingPlan, DEFAULT_GROUP_SIZE};
use crate::packing::{pack_many, PackingResult, SolverBudget, SolverUsed};
use crate::workload::{SampleRecord, Workload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub capacity: u64,
    pub stages: usize,
    pub group_size: usize,
    pub budget: SolverBudget,
    pub workers: usize,
}

impl PlanConfig {
    pub fn new(capacity: u64, stages: usize) -> Self {
        Self {
            capacity,
            stages,
            group_size: DEFAULT_GROUP_SIZE,
            budget: SolverBudget::default(),
            workers: 1,
        }
    }
}

/// Metrics of one planning run; the only part that varies between otherwise
/// identical runs is the timing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub schema_version: u32,
    pub adapters: usize,
    pub samples: usize,
    pub groups: usize,
    pub global_batches: usize,
    pub stage_count: usize,
    pub capacity: u64,
    pub packed_batches: usize,
    pub bins_total: usize,
    pub greedy_bins_total: usize,
    pub solver_used: BTreeMap<String, usize>,
    pub greedy_fraction: f64,
    pub merged_away: usize,
    pub microbatches: usize,
    pub noops: usize,
    pub stage1_nodes: u64,
    pub stage2_nodes: u64,
    pub solve_secs: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub grouping: GroupingPlan,
    pub packings: BTreeMap<usize, BTreeMap<usize, PackingResult>>,
    pub schedule: Schedule,
    pub summary: PlanSummary,
}

fn solver_name(s: SolverUsed) -> &'static str {
    match s {
        SolverUsed::Greedy => "greedy",
        SolverUsed::Milp => "milp",
        SolverUsed::MilpStage1GreedyStage2 => "milp_stage1_greedy_stage2",
    }
}

/// Grouping, per-batch packing, assembly, merge, then lemma repair.
pub fn plan(workload: &Workload, cfg: &PlanConfig) -> Result<PlanOutput, Error> {
    let t0 = Instant::now();
    let grouping = group_adapters(&workload.stats(), cfg.group_size)?;
    let batch_count = workload.batch_count();
    let mut by_key: BTreeMap<(usize, usize), Vec<SampleRecord>> = BTreeMap::new();
    for g in &grouping.groups {
        for j in 0..batch_count {
            by_key.insert((g.group_id, j), Vec::new());
        }
    }
    for s in &workload.samples {
        let g = grouping.group_of(&s.adapter_id).expect("every adapter is grouped");
        let j = s.global_batch_index.expect("workload labels batches");
        by_key.get_mut(&(g, j)).expect("key created above").push(s.clone());
    }
    let jobs: Vec<((usize, usize), Vec<SampleRecord>)> = by_key.into_iter().collect();
    let results = pack_many(&jobs, cfg.capacity, &workload.paddings(), &cfg.budget, cfg.workers)?;

    let mut packings: BTreeMap<usize, BTreeMap<usize, PackingResult>> = BTreeMap::new();
    let mut solver_used: BTreeMap<String, usize> = BTreeMap::new();
    let (mut bins, mut greedy_bins, mut n1, mut n2, mut solve, mut packed) = (0, 0, 0, 0, 0.0, 0);
    for ((g, j), r) in results {
        if r.bin_count > 0 {
            packed += 1;
            *solver_used.entry(solver_name(r.solver_used).to_string()).or_default() += 1;
        }
        bins += r.bin_count;
        greedy_bins += r.greedy_bins;
        n1 += r.timing.stage1_nodes;
        n2 += r.timing.stage2_nodes;
        solve += r.timing.greedy_secs + r.timing.stage1_secs + r.timing.stage2_secs;
        packings.entry(g).or_default().insert(j, r);
    }

    let built = build_schedule(&packings, &grouping, cfg.stages, cfg.capacity)?;
    let merged = merge_pass(&built, cfg.capacity, cfg.stages);
    let schedule = verify_and_fix(&merged, cfg.stages)?;

    let greedy = solver_used.get("greedy").copied().unwrap_or(0);
    let summary = PlanSummary {
        schema_version: SCHEMA_VERSION,
        adapters: workload.adapters.len(),
        samples: workload.samples.len(),
        groups: grouping.groups.len(),
        global_batches: batch_count,
        stage_count: cfg.stages,
        capacity: cfg.capacity,
        packed_batches: packed,
        bins_total: bins,
        greedy_bins_total: greedy_bins,
        greedy_fraction: if packed == 0 { 1.0 } else { greedy as f64 / packed as f64 },
        solver_used,
        merged_away: built.microbatch_count() - merged.microbatch_count(),
        microbatches: schedule.microbatch_count(),
        noops: schedule.noop_count(),
        stage1_nodes: n1,
        stage2_nodes: n2,
        solve_secs: solve,
        wall_secs: t0.elapsed().as_secs_f64(),
    };
    Ok(PlanOutput {
        grouping,
        packings,
        schedule,
        summary,
    })
}

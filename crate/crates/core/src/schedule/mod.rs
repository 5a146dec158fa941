//! Global interleaved schedule: assembly from per-group packings, the
//! cross-batch merge pass, and bubble-lemma checking and repair.
//!
//! The lemma: with `S` stages, no entry holding adapter `a`'s batch `j + 1`
//! may sit at a commit index below `k + S - 1`, where `k` is the last index
//! holding batch `j` of `a`.

mod plan;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grouping::GroupingPlan;
use crate::packing::{Microbatch, PackingResult};

pub use plan::{plan, PlanConfig, PlanOutput, PlanSummary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("no packing for group {group} global batch {batch}")]
    MissingPacking { group: usize, batch: usize },
    #[error("group {0} in round-robin order but not in the grouping plan")]
    UnknownGroup(usize),
    #[error(
        "adapter {adapter_id:?} batch {batch} appears at commit index {commit_index} after a later batch; no-op insertion cannot restore order"
    )]
    OrderInversion {
        adapter_id: String,
        batch: usize,
        commit_index: usize,
    },
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("schedule JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Microbatch,
    Noop,
}

/// One schedule slot. `group_id` and `global_batch_index` name the packing
/// the entry came from; a noop takes the home of the entry it precedes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub commit_index: usize,
    pub kind: EntryKind,
    pub group_id: usize,
    pub global_batch_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microbatch: Option<Microbatch>,
}

impl ScheduleEntry {
    pub fn microbatch(group_id: usize, global_batch_index: usize, mb: Microbatch) -> Self {
        Self {
            commit_index: 0,
            kind: EntryKind::Microbatch,
            group_id,
            global_batch_index,
            microbatch: Some(mb),
        }
    }

    pub fn noop(group_id: usize, global_batch_index: usize) -> Self {
        Self {
            commit_index: 0,
            kind: EntryKind::Noop,
            group_id,
            global_batch_index,
            microbatch: None,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.kind == EntryKind::Noop
    }

    pub fn padded_tokens(&self) -> u64 {
        self.microbatch.as_ref().map_or(0, |m| m.total_padded_tokens)
    }

    pub fn raw_tokens(&self) -> u64 {
        self.microbatch.as_ref().map_or(0, Microbatch::raw_tokens)
    }

    /// Distinct `(adapter, global batch)` pairs held by this entry.
    pub fn adapter_batches(&self) -> Vec<(&str, usize)> {
        let mut out: Vec<(&str, usize)> = Vec::new();
        if let Some(mb) = &self.microbatch {
            for seg in &mb.segments {
                for s in &seg.samples {
                    let key = (seg.adapter_id.as_str(), s.global_batch_index);
                    if !out.contains(&key) {
                        out.push(key);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub schema_version: u32,
    pub stage_count: usize,
    pub capacity: u64,
    pub entries: Vec<ScheduleEntry>,
}

impl Schedule {
    pub fn new(stage_count: usize, capacity: u64, entries: Vec<ScheduleEntry>) -> Self {
        let mut s = Self {
            schema_version: SCHEMA_VERSION,
            stage_count,
            capacity,
            entries,
        };
        s.renumber();
        s
    }

    fn renumber(&mut self) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.commit_index = i;
        }
    }

    pub fn noop_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_noop()).count()
    }

    pub fn microbatch_count(&self) -> usize {
        self.entries.len() - self.noop_count()
    }

    /// Every `(adapter_id, sample_id)` in commit order.
    pub fn sample_keys(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .filter_map(|e| e.microbatch.as_ref())
            .flat_map(|mb| {
                mb.segments
                    .iter()
                    .flat_map(|seg| seg.samples.iter().map(move |s| (seg.adapter_id.clone(), s.sample_id.clone())))
            })
            .collect()
    }

    pub fn adapter_ids(&self) -> BTreeSet<String> {
        self.sample_keys().into_iter().map(|(a, _)| a).collect()
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.stage_count < 1 {
            return bad("stage_count must be >= 1".into());
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.commit_index != i {
                return bad(format!("entries[{i}].commit_index is {}", e.commit_index));
            }
            match (e.kind, &e.microbatch) {
                (EntryKind::Noop, Some(_)) => return bad(format!("entries[{i}].microbatch present on a noop")),
                (EntryKind::Microbatch, None) => return bad(format!("entries[{i}].microbatch missing")),
                (EntryKind::Microbatch, Some(mb)) if !mb.is_consistent() || mb.is_empty() => {
                    return bad(format!("entries[{i}].microbatch is empty, inconsistent or over capacity"))
                }
                _ => {}
            }
        }
        let mut seen = HashSet::new();
        for k in self.sample_keys() {
            if !seen.insert(k.clone()) {
                return bad(format!("sample {:?} of adapter {:?} scheduled twice", k.1, k.0));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schedule serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScheduleError> {
        let s: Self = serde_json::from_str(text).map_err(|e| ScheduleError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

/// A batch-`(j+1)` entry committed too early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub adapter_id: String,
    pub batch: usize,
    pub commit_index: usize,
    /// Last commit index holding batch `batch - 1`.
    pub previous_last: usize,
    pub required_index: usize,
}

fn last_commits(schedule: &Schedule) -> HashMap<(&str, usize), usize> {
    let mut last = HashMap::new();
    for (i, e) in schedule.entries.iter().enumerate() {
        for key in e.adapter_batches() {
            last.insert(key, i);
        }
    }
    last
}

pub fn check_bubble_lemma(schedule: &Schedule, stages: usize) -> Vec<Violation> {
    let gap = stages.saturating_sub(1);
    let last = last_commits(schedule);
    let mut out = Vec::new();
    for (i, e) in schedule.entries.iter().enumerate() {
        for (a, j) in e.adapter_batches() {
            if j == 0 {
                continue;
            }
            if let Some(&k) = last.get(&(a, j - 1)) {
                if i < k + gap {
                    out.push(Violation {
                        adapter_id: a.to_string(),
                        batch: j,
                        commit_index: i,
                        previous_last: k,
                        required_index: k + gap,
                    });
                }
            }
        }
    }
    out
}

/// Emits entries round-robin over groups at each global-batch index.
pub fn build_schedule(
    packings: &BTreeMap<usize, BTreeMap<usize, PackingResult>>,
    plan: &GroupingPlan,
    stages: usize,
    capacity: u64,
) -> Result<Schedule, ScheduleError> {
    for g in &plan.round_robin_order {
        if plan.group(*g).is_none() {
            return Err(ScheduleError::UnknownGroup(*g));
        }
    }
    let batches: BTreeSet<usize> = packings.values().flat_map(|m| m.keys().copied()).collect();
    let mut entries = Vec::new();
    for &j in &batches {
        for &g in &plan.round_robin_order {
            let r = packings
                .get(&g)
                .and_then(|m| m.get(&j))
                .ok_or(ScheduleError::MissingPacking { group: g, batch: j })?;
            entries.extend(r.microbatches.iter().cloned().map(|mb| ScheduleEntry::microbatch(g, j, mb)));
        }
    }
    Ok(Schedule::new(stages, capacity, entries))
}

/// Inserts the fewest noops, each run placed directly before the entry that
/// commits too early. Fails only when some adapter's batch order is already
/// inverted, which padding cannot repair.
pub fn verify_and_fix(schedule: &Schedule, stages: usize) -> Result<Schedule, ScheduleError> {
    let gap = stages.saturating_sub(1);
    let mut last: HashMap<(String, usize), usize> = HashMap::new();
    let mut highest: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<ScheduleEntry> = Vec::with_capacity(schedule.entries.len());
    for e in &schedule.entries {
        let keys = e.adapter_batches();
        let mut required = 0;
        for &(a, j) in &keys {
            if let Some(&h) = highest.get(a) {
                if j < h {
                    return Err(ScheduleError::OrderInversion {
                        adapter_id: a.to_string(),
                        batch: j,
                        commit_index: e.commit_index,
                    });
                }
            }
            if j > 0 {
                if let Some(&k) = last.get(&(a.to_string(), j - 1)) {
                    required = required.max(k + gap);
                }
            }
        }
        while out.len() < required {
            out.push(ScheduleEntry::noop(e.group_id, e.global_batch_index));
        }
        let pos = out.len();
        for &(a, j) in &keys {
            last.insert((a.to_string(), j), pos);
            let h = highest.entry(a.to_string()).or_insert(j);
            *h = (*h).max(j);
        }
        out.push(e.clone());
    }
    Ok(Schedule::new(stages, schedule.capacity, out))
}

/// Moves whole samples from each group's batch `j + 1` into its batch-`j`
/// tail (the last, least-full microbatch) while capacity and the lemma hold.
/// Donors are visited in schedule order and their samples shortest first.
/// A donor emptied by the moves is deleted unless the deletion would add a
/// lemma violation elsewhere, in which case that donor's moves are undone.
pub fn merge_pass(schedule: &Schedule, capacity: u64, stages: usize) -> Schedule {
    let mut out = schedule.clone();
    out.renumber();
    // Mixing batch j and j+1 of one adapter in a single entry would break
    // batch order, so even a one-stage pipeline needs a gap of one.
    let gap = stages.saturating_sub(1).max(1);
    let baseline = check_bubble_lemma(&out, stages).len();
    let mut homes: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for e in out.entries.iter().filter(|e| !e.is_noop()) {
        homes.entry(e.group_id).or_default().insert(e.global_batch_index);
    }
    let mut idx = Holders::build(&out);
    for (g, batches) in &homes {
        for &j in batches {
            if batches.contains(&(j + 1)) {
                merge_boundary(&mut out, &mut idx, *g, j, capacity, stages, gap, baseline);
            }
        }
    }
    out.renumber();
    out
}

/// Which entries hold each (adapter, batch) and how many of its samples,
/// plus the entries homed at each (group, batch).
struct Holders {
    samples: HashMap<(String, usize), BTreeMap<usize, usize>>,
    homes: HashMap<(usize, usize), Vec<usize>>,
}

impl Holders {
    fn build(s: &Schedule) -> Self {
        let mut samples: HashMap<(String, usize), BTreeMap<usize, usize>> = HashMap::new();
        let mut homes: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, e) in s.entries.iter().enumerate() {
            let Some(mb) = &e.microbatch else { continue };
            homes.entry((e.group_id, e.global_batch_index)).or_default().push(i);
            for seg in &mb.segments {
                for x in &seg.samples {
                    *samples
                        .entry((seg.adapter_id.clone(), x.global_batch_index))
                        .or_default()
                        .entry(i)
                        .or_default() += 1;
                }
            }
        }
        Self { samples, homes }
    }

    fn last(&self, adapter: &str, batch: usize) -> Option<usize> {
        self.samples
            .get(&(adapter.to_string(), batch))
            .and_then(|m| m.keys().next_back().copied())
    }

    fn moved(&mut self, adapter: &str, batch: usize, from: usize, to: usize) {
        let m = self.samples.get_mut(&(adapter.to_string(), batch)).expect("sample is indexed");
        let c = m.get_mut(&from).expect("donor holds the sample");
        *c -= 1;
        if *c == 0 {
            m.remove(&from);
        }
        *m.entry(to).or_default() += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn merge_boundary(
    out: &mut Schedule,
    idx: &mut Holders,
    g: usize,
    j: usize,
    capacity: u64,
    stages: usize,
    gap: usize,
    baseline: usize,
) {
    let Some(&tail) = idx.homes.get(&(g, j)).and_then(|v| v.last()) else {
        return;
    };
    let mut next = tail + 1;
    loop {
        let Some(d) = idx
            .homes
            .get(&(g, j + 1))
            .and_then(|v| v.iter().copied().find(|&i| i >= next))
        else {
            return;
        };
        let tail_before = out.entries[tail].clone();
        let donor_before = out.entries[d].clone();
        let mut candidates: Vec<(String, u32, crate::packing::PackedSample)> = donor_before
            .microbatch
            .as_ref()
            .expect("home entries are microbatches")
            .segments
            .iter()
            .flat_map(|seg| seg.samples.iter().map(move |s| (seg.adapter_id.clone(), seg.padding_multiple, s.clone())))
            .collect();
        candidates.sort_by(|x, y| {
            x.2.length_tokens
                .cmp(&y.2.length_tokens)
                .then_with(|| x.0.cmp(&y.0))
                .then_with(|| x.2.sample_id.cmp(&y.2.sample_id))
        });
        let mut moved = false;
        for (adapter, pad, sample) in candidates {
            if sample.global_batch_index != j + 1 {
                continue;
            }
            if idx.last(&adapter, j).is_some_and(|l| tail < l + gap) {
                continue;
            }
            let tail_mb = out.entries[tail].microbatch.as_mut().expect("tail is a microbatch");
            if tail_mb.total_with(&adapter, pad, u64::from(sample.length_tokens)) > capacity.min(tail_mb.capacity) {
                continue;
            }
            let donor_mb = out.entries[d].microbatch.as_mut().expect("donor is a microbatch");
            donor_mb.remove(&adapter, &sample.sample_id).expect("candidate taken from donor");
            idx.moved(&adapter, j + 1, d, tail);
            out.entries[tail]
                .microbatch
                .as_mut()
                .expect("tail is a microbatch")
                .push(&adapter, pad, sample);
            moved = true;
        }
        next = d + 1;
        if moved && out.entries[d].microbatch.as_ref().is_some_and(Microbatch::is_empty) {
            out.entries.remove(d);
            out.renumber();
            if check_bubble_lemma(out, stages).len() > baseline {
                out.entries.insert(d, donor_before);
                out.entries[tail] = tail_before;
                out.renumber();
            } else {
                next = d;
            }
            *idx = Holders::build(out);
        }
    }
}

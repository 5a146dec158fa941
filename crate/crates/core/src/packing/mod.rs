//! Microbatch packing of one global batch under a token capacity.
//!
//! A bin holds per-adapter segments; each segment's length is rounded up to
//! that adapter's padding multiple and the padded segment lengths of a bin
//! must sum to at most the capacity. [`pack_global_batch`] runs the greedy
//! baseline, then the two exact stages (fewest bins, then the emptiest
//! possible smallest bin) and keeps the greedy packing unless the exact
//! stages strictly improve on it.

mod bnb;
pub mod formulation;
mod greedy;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{pad_to_multiple, SampleRecord};

pub use bnb::Deadline;

pub const DEFAULT_NODE_LIMIT: u64 = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PackingError {
    #[error("sample {sample_id:?} of adapter {adapter_id:?} pads to {padded} tokens, above capacity {capacity}")]
    UnpackableSample {
        adapter_id: String,
        sample_id: String,
        padded: u64,
        capacity: u64,
    },
    #[error("no packing into exactly {bins} bins exists")]
    InfeasibleBinCount { bins: usize },
    #[error("no padding multiple known for adapter {0:?}")]
    UnknownAdapter(String),
    #[error("invalid solver budget: {0}")]
    InvalidBudget(String),
    #[error("capacity must be >= 1")]
    ZeroCapacity,
    #[error("global batch {batch}: {source}")]
    InBatch {
        batch: String,
        #[source]
        source: Box<PackingError>,
    },
}

/// Time and node allowance for each exact stage of each global batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverBudget {
    #[serde(with = "secs")]
    pub timeout: Duration,
    #[serde(default)]
    pub node_limit: Option<u64>,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            node_limit: Some(DEFAULT_NODE_LIMIT),
        }
    }
}

impl SolverBudget {
    pub fn new(timeout: Duration, node_limit: Option<u64>) -> Result<Self, PackingError> {
        let b = Self { timeout, node_limit };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PackingError> {
        if self.timeout.is_zero() {
            return Err(PackingError::InvalidBudget("timeout must be > 0".into()));
        }
        Ok(())
    }

    fn deadline(&self) -> Deadline {
        Deadline::new(Instant::now() + self.timeout, self.node_limit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSample {
    pub sample_id: String,
    pub length_tokens: u32,
    pub global_batch_index: usize,
}

/// All samples of one adapter inside one microbatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub adapter_id: String,
    pub padding_multiple: u32,
    pub raw_tokens: u64,
    pub padded_tokens: u64,
    pub samples: Vec<PackedSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Microbatch {
    pub capacity: u64,
    pub total_padded_tokens: u64,
    /// Sorted by adapter id.
    pub segments: Vec<Segment>,
}

impl Microbatch {
    pub fn empty(capacity: u64) -> Self {
        Self {
            capacity,
            total_padded_tokens: 0,
            segments: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.segments.iter().map(|s| s.samples.len()).sum()
    }

    pub fn raw_tokens(&self) -> u64 {
        self.segments.iter().map(|s| s.raw_tokens).sum()
    }

    pub fn segment(&self, adapter_id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.adapter_id == adapter_id)
    }

    /// Padded total after adding `length` raw tokens to the adapter's segment.
    pub fn total_with(&self, adapter_id: &str, padding_multiple: u32, length: u64) -> u64 {
        match self.segment(adapter_id) {
            Some(seg) => self.total_padded_tokens - seg.padded_tokens + pad_to_multiple(seg.raw_tokens + length, padding_multiple),
            None => self.total_padded_tokens + pad_to_multiple(length, padding_multiple),
        }
    }

    pub fn push(&mut self, adapter_id: &str, padding_multiple: u32, sample: PackedSample) {
        let pos = match self.segments.binary_search_by(|s| s.adapter_id.as_str().cmp(adapter_id)) {
            Ok(p) => p,
            Err(p) => {
                self.segments.insert(
                    p,
                    Segment {
                        adapter_id: adapter_id.to_string(),
                        padding_multiple,
                        raw_tokens: 0,
                        padded_tokens: 0,
                        samples: Vec::new(),
                    },
                );
                p
            }
        };
        let seg = &mut self.segments[pos];
        seg.raw_tokens += u64::from(sample.length_tokens);
        seg.samples.push(sample);
        self.refresh(pos);
    }

    /// Removes a sample by id, dropping its segment when it becomes empty.
    pub fn remove(&mut self, adapter_id: &str, sample_id: &str) -> Option<PackedSample> {
        let pos = self.segments.iter().position(|s| s.adapter_id == adapter_id)?;
        let seg = &mut self.segments[pos];
        let i = seg.samples.iter().position(|s| s.sample_id == sample_id)?;
        let sample = seg.samples.remove(i);
        seg.raw_tokens -= u64::from(sample.length_tokens);
        if seg.samples.is_empty() {
            self.total_padded_tokens -= seg.padded_tokens;
            self.segments.remove(pos);
        } else {
            self.refresh(pos);
        }
        Some(sample)
    }

    fn refresh(&mut self, pos: usize) {
        let seg = &mut self.segments[pos];
        let new_padded = pad_to_multiple(seg.raw_tokens, seg.padding_multiple);
        self.total_padded_tokens = self.total_padded_tokens - seg.padded_tokens + new_padded;
        seg.padded_tokens = new_padded;
    }

    /// Checks capacity and that each segment is padded minimally.
    pub fn is_consistent(&self) -> bool {
        let mut total = 0;
        for s in &self.segments {
            let raw: u64 = s.samples.iter().map(|x| u64::from(x.length_tokens)).sum();
            if raw != s.raw_tokens || s.padded_tokens != pad_to_multiple(raw, s.padding_multiple) || s.samples.is_empty() {
                return false;
            }
            total += s.padded_tokens;
        }
        total == self.total_padded_tokens && total <= self.capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverUsed {
    Greedy,
    Milp,
    /// Stage 1 beat the greedy bin count; stage 2 ran out of budget without
    /// improving the stage-1 packing's smallest bin.
    MilpStage1GreedyStage2,
}

/// Wall-clock and node counts; not part of a packing's identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTiming {
    pub greedy_secs: f64,
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub stage1_nodes: u64,
    pub stage2_nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingResult {
    /// Ordered by padded total, fullest first, so the least-full bin is last.
    pub microbatches: Vec<Microbatch>,
    pub bin_count: usize,
    pub smallest_bin_tokens: u64,
    pub solver_used: SolverUsed,
    pub greedy_bins: usize,
    pub greedy_smallest: u64,
    pub stage1_bins: usize,
    pub stage1_optimal: bool,
    pub stage2_smallest: u64,
    pub stage2_optimal: bool,
    #[serde(skip)]
    pub timing: SolveTiming,
}

impl PackingResult {
    pub fn empty() -> Self {
        Self {
            microbatches: Vec::new(),
            bin_count: 0,
            smallest_bin_tokens: 0,
            solver_used: SolverUsed::Greedy,
            greedy_bins: 0,
            greedy_smallest: 0,
            stage1_bins: 0,
            stage1_optimal: true,
            stage2_smallest: 0,
            stage2_optimal: true,
            timing: SolveTiming::default(),
        }
    }

    pub fn sample_count(&self) -> usize {
        self.microbatches.iter().map(Microbatch::sample_count).sum()
    }

    /// Equality ignoring timing.
    pub fn same_packing(&self, other: &Self) -> bool {
        Self { timing: SolveTiming::default(), ..self.clone() } == Self { timing: SolveTiming::default(), ..other.clone() }
    }
}

/// Solver-side view of one global batch.
#[derive(Debug, Clone)]
pub(crate) struct Instance {
    /// Sorted by length descending, then adapter id, then sample id.
    pub items: Vec<Item>,
    pub adapter_ids: Vec<String>,
    pub paddings: Vec<u32>,
    pub capacity: u64,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Item {
    pub adapter: usize,
    pub len: u64,
    /// Index into the caller's sample slice.
    pub source: usize,
}

impl Instance {
    pub(crate) fn new(samples: &[SampleRecord], capacity: u64, paddings: &BTreeMap<String, u32>) -> Result<Self, PackingError> {
        if capacity == 0 {
            return Err(PackingError::ZeroCapacity);
        }
        let mut adapter_ids: Vec<String> = samples.iter().map(|s| s.adapter_id.clone()).collect();
        adapter_ids.sort();
        adapter_ids.dedup();
        let mut pads = Vec::with_capacity(adapter_ids.len());
        for a in &adapter_ids {
            pads.push(*paddings.get(a).ok_or_else(|| PackingError::UnknownAdapter(a.clone()))?);
        }
        let mut items: Vec<Item> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| Item {
                adapter: adapter_ids.binary_search(&s.adapter_id).expect("collected above"),
                len: u64::from(s.length_tokens),
                source: i,
            })
            .collect();
        for it in &items {
            let padded = pad_to_multiple(it.len, pads[it.adapter]);
            if padded > capacity {
                let s = &samples[it.source];
                return Err(PackingError::UnpackableSample {
                    adapter_id: s.adapter_id.clone(),
                    sample_id: s.sample_id.clone(),
                    padded,
                    capacity,
                });
            }
        }
        items.sort_by(|a, b| {
            b.len
                .cmp(&a.len)
                .then_with(|| a.adapter.cmp(&b.adapter))
                .then_with(|| samples[a.source].sample_id.cmp(&samples[b.source].sample_id))
        });
        Ok(Self {
            items,
            adapter_ids,
            paddings: pads,
            capacity,
            samples: samples.to_vec(),
        })
    }

    pub(crate) fn adapter_count(&self) -> usize {
        self.adapter_ids.len()
    }

    pub(crate) fn pad(&self, adapter: usize, raw: u64) -> u64 {
        pad_to_multiple(raw, self.paddings[adapter])
    }

    /// `ceil(sum over adapters of padded total demand / C)`.
    pub(crate) fn bin_lower_bound(&self) -> usize {
        let mut raw = vec![0u64; self.adapter_count()];
        for it in &self.items {
            raw[it.adapter] += it.len;
        }
        let demand: u64 = raw.iter().enumerate().map(|(a, &r)| self.pad(a, r)).sum();
        demand.div_ceil(self.capacity) as usize
    }

    /// Padded load of every bin for an item-to-bin assignment.
    pub(crate) fn loads(&self, assignment: &[usize], bins: usize) -> Vec<u64> {
        let a = self.adapter_count();
        let mut raw = vec![0u64; bins * a];
        for (it, &b) in self.items.iter().zip(assignment) {
            raw[b * a + it.adapter] += it.len;
        }
        (0..bins)
            .map(|b| (0..a).map(|ad| self.pad(ad, raw[b * a + ad])).sum())
            .collect()
    }

    /// Builds microbatches (fullest first) from an item-to-bin assignment.
    pub(crate) fn materialize(&self, assignment: &[usize], bins: usize) -> Vec<Microbatch> {
        let mut out: Vec<Microbatch> = (0..bins).map(|_| Microbatch::empty(self.capacity)).collect();
        for (it, &b) in self.items.iter().zip(assignment) {
            let s = &self.samples[it.source];
            out[b].push(
                &s.adapter_id,
                self.paddings[it.adapter],
                PackedSample {
                    sample_id: s.sample_id.clone(),
                    length_tokens: s.length_tokens,
                    global_batch_index: s.global_batch_index.unwrap_or(0),
                },
            );
        }
        out.sort_by_key(|m| std::cmp::Reverse(m.total_padded_tokens));
        out
    }
}

fn smallest(bins: &[Microbatch]) -> u64 {
    bins.iter().map(|b| b.total_padded_tokens).min().unwrap_or(0)
}

/// First-fit-decreasing packing.
pub fn greedy_pack(samples: &[SampleRecord], capacity: u64, paddings: &BTreeMap<String, u32>) -> Result<PackingResult, PackingError> {
    let start = Instant::now();
    let inst = Instance::new(samples, capacity, paddings)?;
    let (assignment, bins) = greedy::first_fit_decreasing(&inst);
    let microbatches = inst.materialize(&assignment, bins);
    let small = smallest(&microbatches);
    Ok(PackingResult {
        bin_count: bins,
        smallest_bin_tokens: small,
        solver_used: SolverUsed::Greedy,
        greedy_bins: bins,
        greedy_smallest: small,
        stage1_bins: bins,
        stage1_optimal: false,
        stage2_smallest: small,
        stage2_optimal: false,
        timing: SolveTiming {
            greedy_secs: start.elapsed().as_secs_f64(),
            ..SolveTiming::default()
        },
        microbatches,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinBinsOutcome {
    pub bins: usize,
    pub microbatches: Vec<Microbatch>,
    /// True when the search proved `bins` minimal within the budget.
    pub optimal: bool,
    pub nodes: u64,
}

/// Fewest bins (stage 1), searched by depth-first branch-and-bound with the
/// first-fit-decreasing packing as the starting incumbent.
pub fn milp_min_bins(
    samples: &[SampleRecord],
    capacity: u64,
    paddings: &BTreeMap<String, u32>,
    budget: &SolverBudget,
) -> Result<MinBinsOutcome, PackingError> {
    budget.validate()?;
    let inst = Instance::new(samples, capacity, paddings)?;
    let (greedy_assign, greedy_bins) = greedy::first_fit_decreasing(&inst);
    let out = bnb::min_bins(&inst, greedy_assign, greedy_bins, &mut budget.deadline());
    Ok(MinBinsOutcome {
        microbatches: inst.materialize(&out.assignment, out.bins),
        bins: out.bins,
        optimal: out.optimal,
        nodes: out.nodes,
    })
}

/// Stage 2: among packings into exactly `bins` non-empty bins, one whose
/// smallest bin holds the fewest padded tokens.
pub fn milp_min_smallest_bin(
    samples: &[SampleRecord],
    capacity: u64,
    paddings: &BTreeMap<String, u32>,
    bins: usize,
    budget: &SolverBudget,
) -> Result<PackingResult, PackingError> {
    budget.validate()?;
    let inst = Instance::new(samples, capacity, paddings)?;
    if bins == 0 || bins > inst.items.len() {
        return Err(PackingError::InfeasibleBinCount { bins });
    }
    let (greedy_assign, greedy_bins) = greedy::first_fit_decreasing(&inst);
    let mut deadline = budget.deadline();
    let incumbent = if greedy_bins <= bins {
        Some(greedy::split_to(&inst, greedy_assign, greedy_bins, bins))
    } else {
        None
    };
    let start = Instant::now();
    let out = bnb::min_smallest_bin(&inst, bins, incumbent, &mut deadline);
    let Some(assignment) = out.assignment else {
        return Err(PackingError::InfeasibleBinCount { bins });
    };
    let microbatches = inst.materialize(&assignment, bins);
    let small = smallest(&microbatches);
    Ok(PackingResult {
        bin_count: bins,
        smallest_bin_tokens: small,
        solver_used: SolverUsed::Milp,
        greedy_bins,
        greedy_smallest: 0,
        stage1_bins: bins,
        stage1_optimal: false,
        stage2_smallest: small,
        stage2_optimal: out.optimal,
        timing: SolveTiming {
            stage2_secs: start.elapsed().as_secs_f64(),
            stage2_nodes: out.nodes,
            ..SolveTiming::default()
        },
        microbatches,
    })
}

/// Greedy baseline, stage 1 bounded by the greedy bin count, stage 2 at the
/// resulting bin count, then the selection rule: the greedy packing is kept
/// when the exact stages match its bin count without shrinking its smallest
/// bin.
pub fn pack_global_batch(
    samples: &[SampleRecord],
    capacity: u64,
    paddings: &BTreeMap<String, u32>,
    budget: &SolverBudget,
) -> Result<PackingResult, PackingError> {
    budget.validate()?;
    let t0 = Instant::now();
    let inst = Instance::new(samples, capacity, paddings)?;
    if inst.items.is_empty() {
        return Ok(PackingResult::empty());
    }
    let (greedy_assign, greedy_bins) = greedy::first_fit_decreasing(&inst);
    let greedy_mb = inst.materialize(&greedy_assign, greedy_bins);
    let greedy_small = smallest(&greedy_mb);
    let greedy_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let s1 = bnb::min_bins(&inst, greedy_assign.clone(), greedy_bins, &mut budget.deadline());
    let stage1_secs = t1.elapsed().as_secs_f64();
    let target = s1.bins.min(greedy_bins);

    let t2 = Instant::now();
    let start_assign = if target == greedy_bins { greedy_assign } else { s1.assignment.clone() };
    let start_small = *inst.loads(&start_assign, target).iter().min().expect("at least one bin");
    let s2 = bnb::min_smallest_bin(&inst, target, Some((start_assign, start_small)), &mut budget.deadline());
    let stage2_secs = t2.elapsed().as_secs_f64();
    let (s2_assign, s2_small) = {
        let a = s2.assignment.expect("incumbent was supplied");
        let small = *inst.loads(&a, target).iter().min().expect("at least one bin");
        (a, small)
    };

    let timing = SolveTiming {
        greedy_secs,
        stage1_secs,
        stage2_secs,
        stage1_nodes: s1.nodes,
        stage2_nodes: s2.nodes,
    };
    let (microbatches, solver_used) = if target == greedy_bins && s2_small >= greedy_small {
        (greedy_mb, SolverUsed::Greedy)
    } else {
        let used = if target < greedy_bins && !s2.optimal && !s2.improved {
            SolverUsed::MilpStage1GreedyStage2
        } else {
            SolverUsed::Milp
        };
        (inst.materialize(&s2_assign, target), used)
    };
    Ok(PackingResult {
        bin_count: microbatches.len(),
        smallest_bin_tokens: smallest(&microbatches),
        microbatches,
        solver_used,
        greedy_bins,
        greedy_smallest: greedy_small,
        stage1_bins: target,
        stage1_optimal: s1.optimal,
        stage2_smallest: s2_small,
        stage2_optimal: s2.optimal,
        timing,
    })
}

/// Packs independent batches on `workers` threads. Output order and content
/// do not depend on the worker count.
pub fn pack_many<K>(
    jobs: &[(K, Vec<SampleRecord>)],
    capacity: u64,
    paddings: &BTreeMap<String, u32>,
    budget: &SolverBudget,
    workers: usize,
) -> Result<Vec<(K, PackingResult)>, PackingError>
where
    K: Clone + Send + Sync + std::fmt::Debug,
{
    budget.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PackingError::InvalidBudget(format!("worker pool: {e}")))?;
    let results: Vec<Result<(K, PackingResult), PackingError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(key, samples)| {
                pack_global_batch(samples, capacity, paddings, budget)
                    .map(|r| (key.clone(), r))
                    .map_err(|e| PackingError::InBatch {
                        batch: format!("{key:?}"),
                        source: Box::new(e),
                    })
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Packs every global batch of one group, keyed by batch index.
pub fn pack_all(
    batches: &BTreeMap<usize, Vec<SampleRecord>>,
    capacity: u64,
    paddings: &BTreeMap<String, u32>,
    budget: &SolverBudget,
    workers: usize,
) -> Result<BTreeMap<usize, PackingResult>, PackingError> {
    let jobs: Vec<(usize, Vec<SampleRecord>)> = batches.iter().map(|(k, v)| (*k, v.clone())).collect();
    Ok(pack_many(&jobs, capacity, paddings, budget, workers)?.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn items(lengths: &[u32]) -> Vec<SampleRecord> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| SampleRecord {
                global_batch_index: Some(0),
                ..SampleRecord::new("a", format!("s{i:02}"), l)
            })
            .collect()
    }

    fn pads(p: u32) -> BTreeMap<String, u32> {
        [("a".to_string(), p), ("b".to_string(), p)].into_iter().collect()
    }

    fn bin_lengths(r: &PackingResult) -> Vec<Vec<u32>> {
        r.microbatches
            .iter()
            .map(|m| {
                let mut v: Vec<u32> = m.segments.iter().flat_map(|s| s.samples.iter().map(|x| x.length_tokens)).collect();
                v.sort_unstable_by(|a, b| b.cmp(a));
                v
            })
            .collect()
    }

    fn ample() -> SolverBudget {
        SolverBudget::new(Duration::from_secs(30), None).unwrap()
    }

    const FFD_TRAP: [u32; 8] = [5, 5, 4, 4, 3, 3, 3, 3];

    #[test]
    fn ffd_hand_trace() {
        let r = greedy_pack(&items(&FFD_TRAP), 10, &pads(1)).unwrap();
        assert_eq!(bin_lengths(&r), vec![vec![5, 5], vec![3, 3, 3], vec![4, 4], vec![3]]);
        assert_eq!(r.bin_count, 4);
    }

    #[test]
    fn ffd_single_full_sample() {
        let r = greedy_pack(&items(&[10]), 10, &pads(1)).unwrap();
        assert_eq!(r.bin_count, 1);
    }

    #[test]
    fn padding_shares_one_segment() {
        let r = greedy_pack(&items(&[3, 3]), 10, &pads(4)).unwrap();
        assert_eq!(r.bin_count, 1);
        assert_eq!(r.microbatches[0].segments.len(), 1);
        assert_eq!(r.microbatches[0].total_padded_tokens, 8);
    }

    #[test]
    fn unpackable_sample() {
        let err = greedy_pack(&items(&[9, 11]), 10, &pads(1)).unwrap_err();
        assert!(matches!(err, PackingError::UnpackableSample { ref sample_id, .. } if sample_id == "s01"));
        // fits raw but not once padded
        assert!(greedy_pack(&items(&[9]), 10, &pads(4)).is_err());
    }

    #[test]
    fn min_bins_beats_ffd() {
        let r = milp_min_bins(&items(&FFD_TRAP), 10, &pads(1), &ample()).unwrap();
        assert_eq!(r.bins, 3);
        assert!(r.optimal);
        let mut got: Vec<Vec<u32>> = r
            .microbatches
            .iter()
            .map(|m| {
                let mut v: Vec<u32> = m.segments[0].samples.iter().map(|s| s.length_tokens).collect();
                v.sort_unstable_by(|a, b| b.cmp(a));
                v
            })
            .collect();
        got.sort();
        assert_eq!(got, vec![vec![4, 3, 3], vec![4, 3, 3], vec![5, 5]]);
    }

    #[test]
    fn min_bins_trivial_cases() {
        assert_eq!(milp_min_bins(&items(&[7]), 10, &pads(1), &ample()).unwrap().bins, 1);
        assert_eq!(milp_min_bins(&items(&[2, 3, 4]), 10, &pads(1), &ample()).unwrap().bins, 1);
    }

    #[test]
    fn min_smallest_bin_examples() {
        let r = milp_min_smallest_bin(&items(&[6, 2, 2]), 10, &pads(1), 2, &ample()).unwrap();
        assert_eq!(r.smallest_bin_tokens, 2);
        assert_eq!(bin_lengths(&r), vec![vec![6, 2], vec![2]]);

        let r = milp_min_smallest_bin(&items(&[4, 4, 4]), 10, &pads(1), 3, &ample()).unwrap();
        assert!(r.microbatches.iter().all(|m| m.total_padded_tokens == 4));

        let r = milp_min_smallest_bin(&items(&[9, 1]), 10, &pads(1), 2, &ample()).unwrap();
        assert_eq!(r.smallest_bin_tokens, 1);
    }

    #[test]
    fn min_smallest_bin_infeasible() {
        // 9 + 9 cannot share a bin of 10
        let err = milp_min_smallest_bin(&items(&[9, 9]), 10, &pads(1), 1, &ample()).unwrap_err();
        assert_eq!(err, PackingError::InfeasibleBinCount { bins: 1 });
        assert!(milp_min_smallest_bin(&items(&[1, 1]), 10, &pads(1), 3, &ample()).is_err());
    }

    #[test]
    fn greedy_kept_when_optimal() {
        let r = pack_global_batch(&items(&[6, 4]), 10, &pads(1), &ample()).unwrap();
        assert_eq!(r.solver_used, SolverUsed::Greedy);
        assert_eq!(r.bin_count, 1);
    }

    #[test]
    fn milp_chosen_on_ffd_trap() {
        let r = pack_global_batch(&items(&FFD_TRAP), 10, &pads(1), &ample()).unwrap();
        assert_eq!(r.solver_used, SolverUsed::Milp);
        assert_eq!(r.bin_count, 3);
        assert!(r.stage1_optimal && r.stage2_optimal);
    }

    #[test]
    fn expired_budget_falls_back_to_greedy() {
        let tiny = SolverBudget::new(Duration::from_nanos(1), None).unwrap();
        let r = pack_global_batch(&items(&FFD_TRAP), 10, &pads(1), &tiny).unwrap();
        assert_eq!(r.solver_used, SolverUsed::Greedy);
        assert_eq!(r.bin_count, 4);
        assert!(!r.stage1_optimal && !r.stage2_optimal);
    }

    #[test]
    fn zero_timeout_rejected() {
        assert!(SolverBudget::new(Duration::ZERO, None).is_err());
    }

    #[test]
    fn smaller_last_bin_selected_at_equal_count() {
        // FFD: {8,2} {7,1} {5,4}, smallest 8; {7} {8,2} {5,4,1} has 7
        let r = pack_global_batch(&items(&[8, 7, 5, 4, 2, 1]), 10, &pads(1), &ample()).unwrap();
        assert_eq!((r.greedy_bins, r.greedy_smallest), (3, 8));
        assert_eq!((r.bin_count, r.smallest_bin_tokens), (3, 7));
        assert_eq!(r.solver_used, SolverUsed::Milp);
        assert!(r.stage2_optimal);
    }

    #[test]
    fn empty_batch() {
        let r = pack_global_batch(&[], 10, &pads(1), &ample()).unwrap();
        assert_eq!(r.bin_count, 0);
        assert!(pack_all(&BTreeMap::new(), 10, &pads(1), &ample(), 4).unwrap().is_empty());
    }

    #[test]
    fn error_carries_batch_index() {
        let batches: BTreeMap<usize, Vec<SampleRecord>> = [(0, items(&[3])), (1, items(&[30]))].into_iter().collect();
        let err = pack_all(&batches, 10, &pads(1), &ample(), 2).unwrap_err();
        assert!(matches!(err, PackingError::InBatch { ref batch, .. } if batch == "1"));
    }

    #[test]
    fn microbatch_push_remove() {
        let mut m = Microbatch::empty(100);
        let s = |id: &str, l| PackedSample {
            sample_id: id.into(),
            length_tokens: l,
            global_batch_index: 0,
        };
        m.push("b", 8, s("x", 3));
        m.push("a", 8, s("y", 9));
        assert_eq!(m.total_padded_tokens, 8 + 16);
        assert_eq!(m.total_with("b", 8, 5), 24);
        assert_eq!(m.total_with("b", 8, 6), 32);
        assert_eq!(m.segments[0].adapter_id, "a");
        m.remove("a", "y").unwrap();
        assert_eq!(m.total_padded_tokens, 8);
        assert!(m.is_consistent());
        assert!(m.remove("a", "y").is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn batch() -> impl Strategy<Value = (Vec<(bool, u32)>, u64, u32)> {
            (prop::collection::vec((any::<bool>(), 1u32..600), 0..24), 640u64..2048, prop::sample::select(vec![1u32, 8, 64]))
        }

        fn records(v: &[(bool, u32)]) -> Vec<SampleRecord> {
            v.iter()
                .enumerate()
                .map(|(i, &(b, l))| SampleRecord {
                    global_batch_index: Some(0),
                    ..SampleRecord::new(if b { "b" } else { "a" }, format!("s{i:02}"), l)
                })
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(96))]

            #[test]
            fn every_sample_placed_once_within_capacity((v, cap, p) in batch()) {
                let recs = records(&v);
                let budget = SolverBudget::new(Duration::from_secs(5), Some(5_000)).unwrap();
                let r = pack_global_batch(&recs, cap, &pads(p), &budget).unwrap();
                let mut ids: Vec<String> = r
                    .microbatches
                    .iter()
                    .flat_map(|m| m.segments.iter().flat_map(|s| s.samples.iter().map(|x| x.sample_id.clone())))
                    .collect();
                ids.sort();
                let mut want: Vec<String> = recs.iter().map(|s| s.sample_id.clone()).collect();
                want.sort();
                prop_assert_eq!(ids, want);
                for m in &r.microbatches {
                    prop_assert!(m.total_padded_tokens <= cap);
                    prop_assert!(m.is_consistent());
                    prop_assert!(!m.is_empty());
                }
                prop_assert_eq!(r.bin_count, r.microbatches.len());
                prop_assert!(r.microbatches.windows(2).all(|w| w[0].total_padded_tokens >= w[1].total_padded_tokens));
            }

            #[test]
            fn never_worse_than_greedy((v, cap, p) in batch()) {
                let recs = records(&v);
                let budget = SolverBudget::new(Duration::from_secs(5), Some(5_000)).unwrap();
                let g = greedy_pack(&recs, cap, &pads(p)).unwrap();
                let r = pack_global_batch(&recs, cap, &pads(p), &budget).unwrap();
                prop_assert!(r.bin_count <= g.bin_count);
                if r.bin_count == g.bin_count {
                    prop_assert!(r.smallest_bin_tokens <= g.smallest_bin_tokens);
                }
                let raw: u64 = recs.iter().map(|s| u64::from(s.length_tokens)).sum();
                prop_assert!(r.bin_count as u64 >= raw.div_ceil(cap));
            }

            #[test]
            fn worker_count_does_not_change_result(jobs in prop::collection::vec(prop::collection::vec((any::<bool>(), 1u32..500), 0..16), 1..6)) {
                let budget = SolverBudget::new(Duration::from_secs(5), Some(2_000)).unwrap();
                let jobs: Vec<(usize, Vec<SampleRecord>)> = jobs.iter().enumerate().map(|(i, v)| (i, records(v))).collect();
                let one = pack_many(&jobs, 1000, &pads(8), &budget, 1).unwrap();
                let many = pack_many(&jobs, 1000, &pads(8), &budget, 4).unwrap();
                let strip = |v: Vec<(usize, PackingResult)>| {
                    v.into_iter().map(|(k, r)| (k, PackingResult { timing: SolveTiming::default(), ..r })).collect::<Vec<_>>()
                };
                prop_assert_eq!(strip(one), strip(many));
            }
        }
    }
}

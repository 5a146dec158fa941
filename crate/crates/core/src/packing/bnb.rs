//! Depth-first branch-and-bound for both exact stages.
//!
//! Items are visited longest first. An item may go into any open bin it fits
//! or into the next unopened bin, so bins are always opened in index order,
//! and among open bins with identical per-adapter contents only the first is
//! tried. Both prunes remove only symmetric copies of explored subtrees.

use std::time::Instant;

use super::Instance;

const CLOCK_CHECK_INTERVAL: u64 = 64;

/// Wall-clock deadline plus an optional node allowance. When the node limit
/// is reached before the clock, results do not depend on machine speed.
#[derive(Debug, Clone)]
pub struct Deadline {
    at: Instant,
    node_limit: Option<u64>,
    nodes: u64,
    expired: bool,
}

impl Deadline {
    pub fn new(at: Instant, node_limit: Option<u64>) -> Self {
        Self {
            at,
            node_limit,
            nodes: 0,
            expired: false,
        }
    }

    /// Counts one node; false once the budget is spent.
    fn tick(&mut self) -> bool {
        if self.expired {
            return false;
        }
        self.nodes += 1;
        let over_limit = self.node_limit.is_some_and(|l| self.nodes > l);
        self.expired = over_limit || (self.nodes % CLOCK_CHECK_INTERVAL == 1 && Instant::now() >= self.at);
        !self.expired
    }

    pub fn nodes(&self) -> u64 {
        self.nodes
    }
}

struct Bins {
    adapters: usize,
    raw: Vec<u64>,
    load: Vec<u64>,
    raw_sum: Vec<u64>,
}

impl Bins {
    fn new(inst: &Instance) -> Self {
        let n = inst.items.len().max(1);
        let a = inst.adapter_count();
        Self {
            adapters: a,
            raw: vec![0; n * a],
            load: vec![0; n],
            raw_sum: vec![0; n],
        }
    }

    fn state(&self, b: usize) -> &[u64] {
        &self.raw[b * self.adapters..(b + 1) * self.adapters]
    }

    fn load_after(&self, inst: &Instance, b: usize, adapter: usize, len: u64) -> u64 {
        let cur = self.raw[b * self.adapters + adapter];
        self.load[b] - inst.pad(adapter, cur) + inst.pad(adapter, cur + len)
    }

    fn add(&mut self, inst: &Instance, b: usize, adapter: usize, len: u64) {
        self.load[b] = self.load_after(inst, b, adapter, len);
        self.raw[b * self.adapters + adapter] += len;
        self.raw_sum[b] += len;
    }

    fn remove(&mut self, inst: &Instance, b: usize, adapter: usize, len: u64) {
        let i = b * self.adapters + adapter;
        let cur = self.raw[i];
        self.load[b] = self.load[b] - inst.pad(adapter, cur) + inst.pad(adapter, cur - len);
        self.raw[i] = cur - len;
        self.raw_sum[b] -= len;
    }

    /// Open bins (below `used`) that `item` fits, skipping duplicate states.
    fn candidates(&self, inst: &Instance, used: usize, adapter: usize, len: u64) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for b in 0..used {
            if self.load_after(inst, b, adapter, len) > inst.capacity {
                continue;
            }
            if out.iter().any(|&o| self.state(o) == self.state(b)) {
                continue;
            }
            out.push(b);
        }
        out
    }
}

pub(crate) struct Stage1 {
    pub assignment: Vec<usize>,
    pub bins: usize,
    pub optimal: bool,
    pub nodes: u64,
}

struct MinBins<'a> {
    inst: &'a Instance,
    dl: &'a mut Deadline,
    bins: Bins,
    assign: Vec<usize>,
    suffix_raw: Vec<u64>,
    best: usize,
    best_assign: Vec<usize>,
    lower: usize,
    aborted: bool,
}

impl MinBins<'_> {
    fn search(&mut self, i: usize, used: usize) {
        if self.aborted || self.best <= self.lower {
            return;
        }
        if !self.dl.tick() {
            self.aborted = true;
            return;
        }
        let n = self.inst.items.len();
        if i == n {
            if used < self.best {
                self.best = used;
                self.best_assign.clone_from(&self.assign);
            }
            return;
        }
        let c = self.inst.capacity;
        let room: u64 = (0..used).map(|b| c - self.bins.raw_sum[b]).sum();
        let extra = self.suffix_raw[i].saturating_sub(room);
        if used + extra.div_ceil(c) as usize >= self.best {
            return;
        }
        let it = self.inst.items[i];
        for b in self.bins.candidates(self.inst, used, it.adapter, it.len) {
            self.bins.add(self.inst, b, it.adapter, it.len);
            self.assign[i] = b;
            self.search(i + 1, used);
            self.bins.remove(self.inst, b, it.adapter, it.len);
            if self.aborted || self.best <= self.lower {
                return;
            }
        }
        if used + 1 < self.best {
            self.bins.add(self.inst, used, it.adapter, it.len);
            self.assign[i] = used;
            self.search(i + 1, used + 1);
            self.bins.remove(self.inst, used, it.adapter, it.len);
        }
    }
}

fn suffix_sums(inst: &Instance) -> Vec<u64> {
    let mut s = vec![0u64; inst.items.len() + 1];
    for i in (0..inst.items.len()).rev() {
        s[i] = s[i + 1] + inst.items[i].len;
    }
    s
}

/// Fewest bins, starting from an incumbent packing into `incumbent_bins`.
pub(crate) fn min_bins(inst: &Instance, incumbent: Vec<usize>, incumbent_bins: usize, dl: &mut Deadline) -> Stage1 {
    let lower = inst.bin_lower_bound();
    if !dl.tick() {
        return Stage1 {
            assignment: incumbent,
            bins: incumbent_bins,
            optimal: false,
            nodes: dl.nodes(),
        };
    }
    let mut s = MinBins {
        inst,
        bins: Bins::new(inst),
        assign: vec![0; inst.items.len()],
        suffix_raw: suffix_sums(inst),
        best: incumbent_bins,
        best_assign: incumbent,
        lower,
        aborted: false,
        dl,
    };
    s.search(0, 0);
    Stage1 {
        optimal: !s.aborted || s.best <= s.lower,
        assignment: s.best_assign,
        bins: s.best,
        nodes: s.dl.nodes(),
    }
}

pub(crate) struct Stage2 {
    /// None only when no packing into the requested bin count was found.
    pub assignment: Option<Vec<usize>>,
    pub optimal: bool,
    /// True when the search beat the incumbent it was given.
    pub improved: bool,
    pub nodes: u64,
}

struct MinSmallest<'a> {
    inst: &'a Instance,
    dl: &'a mut Deadline,
    target: usize,
    bins: Bins,
    assign: Vec<usize>,
    suffix_min_pad: Vec<u64>,
    best: u64,
    best_assign: Option<Vec<usize>>,
    lower: u64,
    improved: bool,
    aborted: bool,
}

impl MinSmallest<'_> {
    fn done(&self) -> bool {
        self.aborted || (self.best_assign.is_some() && self.best <= self.lower)
    }

    fn search(&mut self, i: usize, used: usize) {
        if self.done() {
            return;
        }
        if !self.dl.tick() {
            self.aborted = true;
            return;
        }
        let n = self.inst.items.len();
        if n - i < self.target - used {
            return;
        }
        if i == n {
            let small = self.bins.load[..used].iter().copied().min().unwrap_or(0);
            if self.best_assign.is_none() || small < self.best {
                self.best = small;
                self.best_assign = Some(self.assign.clone());
                self.improved = true;
            }
            return;
        }
        // every bin only grows, and an unopened bin ends at least as full as
        // the smallest padded item still to place
        let mut bound = self.bins.load[..used].iter().copied().min().unwrap_or(u64::MAX);
        if used < self.target {
            bound = bound.min(self.suffix_min_pad[i]);
        }
        if self.best_assign.is_some() && bound.max(self.lower) >= self.best {
            return;
        }
        let it = self.inst.items[i];
        for b in self.bins.candidates(self.inst, used, it.adapter, it.len) {
            self.bins.add(self.inst, b, it.adapter, it.len);
            self.assign[i] = b;
            self.search(i + 1, used);
            self.bins.remove(self.inst, b, it.adapter, it.len);
            if self.done() {
                return;
            }
        }
        if used < self.target {
            self.bins.add(self.inst, used, it.adapter, it.len);
            self.assign[i] = used;
            self.search(i + 1, used + 1);
            self.bins.remove(self.inst, used, it.adapter, it.len);
        }
    }
}

/// Lower bound on the smallest of `target` bins: the total padded demand
/// minus what the other bins can hold, and the smallest padded item.
fn smallest_bin_lower_bound(inst: &Instance, target: usize) -> u64 {
    let a = inst.adapter_count();
    let mut raw = vec![0u64; a];
    for it in &inst.items {
        raw[it.adapter] += it.len;
    }
    let demand: u64 = raw.iter().enumerate().map(|(ad, &r)| inst.pad(ad, r)).sum();
    let by_demand = demand.saturating_sub((target as u64 - 1) * inst.capacity);
    let by_item = inst.items.iter().map(|it| inst.pad(it.adapter, it.len)).min().unwrap_or(0);
    by_demand.max(by_item)
}

/// Smallest possible least-full bin over packings into exactly `target`
/// non-empty bins.
pub(crate) fn min_smallest_bin(inst: &Instance, target: usize, incumbent: Option<(Vec<usize>, u64)>, dl: &mut Deadline) -> Stage2 {
    let n = inst.items.len();
    let (best, best_assign) = match incumbent {
        Some((a, s)) => (s, Some(a)),
        None => (u64::MAX, None),
    };
    if target == 0 || target > n {
        return Stage2 {
            assignment: None,
            optimal: true,
            improved: false,
            nodes: 0,
        };
    }
    if !dl.tick() {
        return Stage2 {
            assignment: best_assign,
            optimal: false,
            improved: false,
            nodes: dl.nodes(),
        };
    }
    let lower = smallest_bin_lower_bound(inst, target);
    let mut suffix_min_pad = vec![u64::MAX; n + 1];
    for i in (0..n).rev() {
        let it = inst.items[i];
        suffix_min_pad[i] = suffix_min_pad[i + 1].min(inst.pad(it.adapter, it.len));
    }
    let mut s = MinSmallest {
        inst,
        target,
        bins: Bins::new(inst),
        assign: vec![0; n],
        suffix_min_pad,
        best,
        best_assign,
        lower,
        improved: false,
        aborted: false,
        dl,
    };
    s.search(0, 0);
    let proven = s.best_assign.is_some() && s.best <= s.lower;
    Stage2 {
        optimal: !s.aborted || proven,
        improved: s.improved,
        assignment: s.best_assign,
        nodes: s.dl.nodes(),
    }
}

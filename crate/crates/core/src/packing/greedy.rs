use super::Instance;

/// First-fit decreasing over the instance's pre-sorted items. Returns the
/// bin of every item and the bin count.
pub(crate) fn first_fit_decreasing(inst: &Instance) -> (Vec<usize>, usize) {
    let a = inst.adapter_count();
    let mut raw: Vec<u64> = Vec::new();
    let mut load: Vec<u64> = Vec::new();
    let mut assignment = Vec::with_capacity(inst.items.len());
    for it in &inst.items {
        let fits = (0..load.len()).find(|&b| {
            let cur = raw[b * a + it.adapter];
            load[b] - inst.pad(it.adapter, cur) + inst.pad(it.adapter, cur + it.len) <= inst.capacity
        });
        let b = fits.unwrap_or_else(|| {
            raw.extend(std::iter::repeat_n(0, a));
            load.push(0);
            load.len() - 1
        });
        let cur = raw[b * a + it.adapter];
        load[b] = load[b] - inst.pad(it.adapter, cur) + inst.pad(it.adapter, cur + it.len);
        raw[b * a + it.adapter] = cur + it.len;
        assignment.push(b);
    }
    (assignment, load.len())
}

/// Opens bins until there are `target` of them by moving the last-placed
/// item of the bin holding the most items into a fresh bin. Moving an item
/// out of a bin never raises its padded load, so capacity still holds.
pub(crate) fn split_to(inst: &Instance, mut assignment: Vec<usize>, mut bins: usize, target: usize) -> (Vec<usize>, u64) {
    while bins < target {
        let mut counts = vec![0usize; bins];
        for &b in &assignment {
            counts[b] += 1;
        }
        let donor = (0..bins).max_by_key(|&b| (counts[b], std::cmp::Reverse(b))).expect("bins > 0");
        assert!(counts[donor] >= 2, "not enough items for {target} bins");
        let last = assignment.iter().rposition(|&b| b == donor).expect("donor has items");
        assignment[last] = bins;
        bins += 1;
    }
    let small = inst.loads(&assignment, bins).into_iter().min().unwrap_or(0);
    (assignment, small)
}

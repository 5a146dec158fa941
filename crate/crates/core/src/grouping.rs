//! Head-tail adapter grouping.
//!
//! Adapters are sorted by mean sample length and groups are filled by taking
//! alternately from the short and the long end of that order. Groups then run
//! in a fixed round-robin, so two consecutive global batches of one adapter
//! are always separated by the other groups' microbatches.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::DatasetStats;

pub const DEFAULT_GROUP_SIZE: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("grouping needs at least one adapter")]
    NoAdapters,
    #[error("group size must be >= 1")]
    ZeroGroupSize,
    #[error("adapter {0:?} listed twice")]
    DuplicateAdapter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterGroup {
    pub group_id: usize,
    pub adapter_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub groups: Vec<AdapterGroup>,
    pub round_robin_order: Vec<usize>,
}

impl GroupingPlan {
    pub fn group_of(&self, adapter_id: &str) -> Option<usize> {
        self.groups
            .iter()
            .find(|g| g.adapter_ids.iter().any(|a| a == adapter_id))
            .map(|g| g.group_id)
    }

    pub fn group(&self, group_id: usize) -> Option<&AdapterGroup> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }

    pub fn adapter_count(&self) -> usize {
        self.groups.iter().map(|g| g.adapter_ids.len()).sum()
    }
}

/// Partitions adapters into groups of `group_size` (clamped to the adapter
/// count). When fewer than `group_size` adapters remain they form a final,
/// smaller group.
pub fn group_adapters(stats: &[DatasetStats], group_size: usize) -> Result<GroupingPlan, GroupingError> {
    if stats.is_empty() {
        return Err(GroupingError::NoAdapters);
    }
    if group_size == 0 {
        return Err(GroupingError::ZeroGroupSize);
    }
    let mut seen = HashSet::new();
    for s in stats {
        if !seen.insert(s.adapter_id.as_str()) {
            return Err(GroupingError::DuplicateAdapter(s.adapter_id.clone()));
        }
    }
    let mut order: Vec<&DatasetStats> = stats.iter().collect();
    order.sort_by(|a, b| {
        a.mean_tokens
            .total_cmp(&b.mean_tokens)
            .then_with(|| a.adapter_id.cmp(&b.adapter_id))
    });
    let size = group_size.min(order.len());

    let (mut head, mut tail) = (0usize, order.len());
    let mut groups = Vec::new();
    while tail - head >= size {
        let mut ids = Vec::with_capacity(size);
        let mut from_head = true;
        while ids.len() < size {
            if from_head {
                ids.push(order[head].adapter_id.clone());
                head += 1;
            } else {
                tail -= 1;
                ids.push(order[tail].adapter_id.clone());
            }
            from_head = !from_head;
        }
        groups.push(ids);
    }
    if head < tail {
        groups.push(order[head..tail].iter().map(|s| s.adapter_id.clone()).collect());
    }

    let groups: Vec<AdapterGroup> = groups
        .into_iter()
        .enumerate()
        .map(|(group_id, adapter_ids)| AdapterGroup { group_id, adapter_ids })
        .collect();
    let round_robin_order = (0..groups.len()).collect();
    Ok(GroupingPlan {
        groups,
        round_robin_order,
    })
}

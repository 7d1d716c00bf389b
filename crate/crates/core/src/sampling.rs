//! Filling the working sample: seeded random groups or a contiguous group
//! range. Pinned entries always survive; an explicit clear drops them too.

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workbook::{SampleEntry, Workbook};

/// Inclusive range of groups, ordered by first appearance in the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRange {
    pub from_group: String,
    pub to_group: String,
}

impl GroupRange {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        GroupRange {
            from_group: from.into(),
            to_group: to.into(),
        }
    }
}

fn pinned(workbook: &Workbook) -> Vec<SampleEntry> {
    workbook
        .working_sample
        .iter()
        .filter(|e| e.keep_pin)
        .cloned()
        .collect()
}

/// Pinned entries first, then every dataset row of `groups` not already
/// pinned, in dataset order.
fn rebuild(workbook: &mut Workbook, groups: &HashSet<&str>) -> Result<usize> {
    let mut sample = pinned(workbook);
    let pinned_ids: HashSet<u32> = sample.iter().map(|e| e.data_id).collect();
    for row in &workbook.dataset {
        if !groups.contains(row.group_id.as_str()) {
            continue;
        }
        let data_id = row.data_id.ok_or(Error::NotIndexed)?;
        if pinned_ids.contains(&data_id) {
            continue;
        }
        sample.push(SampleEntry {
            data_id,
            group_id: row.group_id.clone(),
            text: row.text.clone(),
            keep_pin: false,
        });
    }
    workbook.working_sample = sample;
    Ok(workbook.working_sample.len())
}

fn require_indexed(workbook: &Workbook) -> Result<()> {
    if workbook.dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !workbook.is_indexed() {
        return Err(Error::NotIndexed);
    }
    Ok(())
}

/// Draws `n_groups` whole groups uniformly without replacement from the
/// groups that hold no pinned entry. Pinned groups come on top.
pub fn random_sample(workbook: &mut Workbook, n_groups: usize, seed: u64) -> Result<usize> {
    require_indexed(workbook)?;
    let pinned_groups: HashSet<String> = pinned(workbook).into_iter().map(|e| e.group_id).collect();
    let eligible: Vec<String> = workbook
        .groups()
        .into_iter()
        .filter(|g| !pinned_groups.contains(*g))
        .map(str::to_owned)
        .collect();
    if n_groups == 0 || n_groups > eligible.len() {
        return Err(Error::OutOfRange {
            requested: n_groups,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<&str> = index::sample(&mut rng, eligible.len(), n_groups)
        .into_iter()
        .map(|i| eligible[i].as_str())
        .collect();
    rebuild(workbook, &chosen)
}

pub fn sequential_sample(workbook: &mut Workbook, range: &GroupRange) -> Result<usize> {
    require_indexed(workbook)?;
    let groups: Vec<String> = workbook.groups().into_iter().map(str::to_owned).collect();
    let pos = |g: &str| {
        groups
            .iter()
            .position(|x| x == g)
            .ok_or_else(|| Error::UnknownGroup(g.to_owned()))
    };
    let (from, to) = (pos(&range.from_group)?, pos(&range.to_group)?);
    if from > to {
        return Err(Error::InvertedRange {
            from: range.from_group.clone(),
            to: range.to_group.clone(),
        });
    }
    let chosen: HashSet<&str> = groups[from..=to].iter().map(String::as_str).collect();
    rebuild(workbook, &chosen)
}

pub fn clear_sample(workbook: &mut Workbook) {
    workbook.working_sample.clear();
}

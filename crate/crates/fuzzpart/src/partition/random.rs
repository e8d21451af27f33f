//! Random baseline: the entry function anchors partition 0 (allowlist
//! emission later adds it to every partition's file), the remaining
//! functions are shuffled with a seeded generator and dealt round-robin so
//! vertex counts stay balanced.

use std::collections::BTreeSet;

use crate::callgraph::{CallGraph, FunctionId};
use crate::rng::SplitRng;

use super::{PartitionError, PartitionMode, PartitionPlan};

/// Shuffle-and-deal vertex partitioning. Deterministic for a fixed seed.
/// Partition sizes excluding the entry differ by at most one.
pub fn random_partition(
    g: &CallGraph,
    k: usize,
    rng_seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::InvalidK);
    }
    let mut rest: Vec<FunctionId> = g.ids().filter(|&id| id != g.entry()).collect();
    let mut rng = SplitRng::new(rng_seed);
    rng.shuffle(&mut rest);

    let mut members: Vec<BTreeSet<FunctionId>> = vec![BTreeSet::new(); k];
    members[0].insert(g.entry());
    for (i, id) in rest.into_iter().enumerate() {
        members[i % k].insert(id);
    }
    let loads: Vec<f64> = members
        .iter()
        .map(|set| set.iter().map(|&id| g.stats(id).score.unwrap_or(0.0)).sum())
        .collect();
    let owner = {
        let mut owner = vec![0usize; g.len()];
        for (p, set) in members.iter().enumerate() {
            for &id in set {
                owner[id.index()] = p;
            }
        }
        owner
    };
    let cut = g
        .edges()
        .iter()
        .filter(|&&(u, v)| owner[u.index()] != owner[v.index()])
        .count() as u64;
    Ok(PartitionPlan {
        mode: PartitionMode::Random,
        k,
        members,
        edge_assignment: None,
        loads,
        cut_edges: Some(cut),
        replication_factor: None,
    })
}

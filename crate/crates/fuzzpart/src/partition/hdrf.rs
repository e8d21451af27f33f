//! HDRF-style streaming edge partitioning, adapted to dynamic function
//! scores.
//!
//! Edges stream in descending order of their highest endpoint score (ties
//! broken lexicographically), so high-potential regions are placed while the
//! locality term still has room to keep them together. For each edge
//! `(u, v)` and partition `p` the greedy maximizes
//!
//! ```text
//! C_REP(u, v, p) + lambda * C_BAL(p)
//! ```
//!
//! `C_REP` rewards partitions that already hold a replica of an endpoint,
//! degree-weighted so the lower-degree endpoint (whose replicas are more
//! expensive) counts for more: each endpoint `w` with a replica in `p`
//! contributes `1 + (1 - theta_w)` where
//! `theta_w = degree(w) / (degree(u) + degree(v))` over partial degrees that
//! include the current edge. `C_BAL` favors lightly loaded partitions, with
//! load measured as the cumulative score of the partition's replicas.
//!
//! Isolated vertices never appear in the edge stream; they are dealt
//! round-robin by descending score afterward so every function stays
//! fuzzable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::callgraph::{CallGraph, FunctionId};

use super::{effective_scores, PartitionError, PartitionMode, PartitionPlan};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HdrfParams {
    /// Balance weight; values above 1 are required for HDRF's balance
    /// guarantee.
    pub lambda: f64,
    /// Stabilizer in the balance denominator.
    pub epsilon: f64,
}

impl Default for HdrfParams {
    fn default() -> Self {
        HdrfParams {
            lambda: 1.1,
            epsilon: 1e-12,
        }
    }
}

/// Split the graph into `k` edge sets with replica tracking. `scores` is
/// indexed by function.
pub fn hdrf_partition(
    g: &CallGraph,
    scores: &[f64],
    k: usize,
    params: &HdrfParams,
) -> Result<PartitionPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::InvalidK);
    }
    if g.edge_count() == 0 {
        return Err(PartitionError::NoEdges);
    }
    let scores = effective_scores(g, scores)?;

    let mut ordered: Vec<(FunctionId, FunctionId)> = g.edges().to_vec();
    ordered.sort_by(|&(a1, a2), &(b1, b2)| {
        let max_a = scores[a1.index()].max(scores[a2.index()]);
        let max_b = scores[b1.index()].max(scores[b2.index()]);
        max_b
            .total_cmp(&max_a)
            .then_with(|| g.name(a1).cmp(g.name(b1)))
            .then_with(|| g.name(a2).cmp(g.name(b2)))
    });

    let mut partial_degree = vec![0u64; g.len()];
    let mut replicas: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g.len()];
    let mut members: Vec<BTreeSet<FunctionId>> = vec![BTreeSet::new(); k];
    let mut loads = vec![0.0f64; k];
    let mut assignment: BTreeMap<(FunctionId, FunctionId), usize> = BTreeMap::new();

    for (u, v) in ordered {
        // Partial degrees count the current edge, per the classic greedy.
        partial_degree[u.index()] += 1;
        partial_degree[v.index()] += 1;
        let du = partial_degree[u.index()] as f64;
        let dv = partial_degree[v.index()] as f64;
        let theta_u = du / (du + dv);
        let theta_v = dv / (du + dv);
        let max_load = loads.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_load = loads.iter().cloned().fold(f64::INFINITY, f64::min);

        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for p in 0..k {
            let mut c_rep = 0.0;
            if replicas[u.index()].contains(&p) {
                c_rep += 1.0 + (1.0 - theta_u);
            }
            if v != u && replicas[v.index()].contains(&p) {
                c_rep += 1.0 + (1.0 - theta_v);
            }
            let c_bal = (max_load - loads[p]) / (params.epsilon + max_load - min_load);
            let score = c_rep + params.lambda * c_bal;
            if score > best_score || (score == best_score && loads[p] < loads[best]) {
                best = p;
                best_score = score;
            }
        }

        assignment.insert((u, v), best);
        for w in [u, v] {
            if replicas[w.index()].insert(best) {
                members[best].insert(w);
                loads[best] += scores[w.index()];
            }
        }
    }

    // Isolated vertices: round-robin by descending score, ties by name.
    let mut isolated: Vec<FunctionId> = g
        .ids()
        .filter(|&id| partial_degree[id.index()] == 0)
        .collect();
    isolated.sort_by(|a, b| {
        scores[b.index()]
            .total_cmp(&scores[a.index()])
            .then_with(|| g.name(*a).cmp(g.name(*b)))
    });
    for (i, id) in isolated.into_iter().enumerate() {
        let p = i % k;
        members[p].insert(id);
        loads[p] += scores[id.index()];
    }

    let total_replicas: usize = members.iter().map(|m| m.len()).sum();
    Ok(PartitionPlan {
        mode: PartitionMode::Edge,
        k,
        members,
        edge_assignment: Some(assignment),
        loads,
        cut_edges: None,
        replication_factor: Some(total_replicas as f64 / g.len() as f64),
    })
}

//! Fennel-style streaming vertex partitioning, adapted to dynamic function
//! scores.
//!
//! Vertices stream in BFS order from the entry function (over undirected
//! edges), so call locality is preserved in the stream; vertices unreachable
//! from the entry follow in descending score order. Each vertex goes to the
//! partition maximizing
//!
//! ```text
//! |N(v) ∩ members[p]|  -  alpha * gamma * (loads[p] / s_mean)^(gamma - 1)
//! ```
//!
//! where `s_mean` is the mean score and `alpha = sqrt(k) * |E| / |V|^gamma`,
//! the classic Fennel interpolation constant. Dividing loads by the mean
//! score expresses score-based load in "equivalent vertices", keeping alpha
//! at its classic scale. Partitions whose load would exceed
//! `slack * total_score / k` are excluded unless every partition would be.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::callgraph::{CallGraph, FunctionId};

use super::{effective_scores, PartitionError, PartitionMode, PartitionPlan};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FennelParams {
    /// Exponent of the load penalty. Classic value 1.5.
    pub gamma: f64,
    /// Balance slack `nu`: per-partition capacity is `nu * total / k`.
    pub slack: f64,
}

impl Default for FennelParams {
    fn default() -> Self {
        FennelParams {
            gamma: 1.5,
            slack: 1.1,
        }
    }
}

/// Deterministic stream order: BFS from the entry over undirected adjacency,
/// then unreached vertices by descending score (ties by name).
fn stream_order(g: &CallGraph, scores: &[f64]) -> Vec<FunctionId> {
    let mut order = Vec::with_capacity(g.len());
    let mut seen = vec![false; g.len()];
    let mut queue = VecDeque::new();
    seen[g.entry().index()] = true;
    queue.push_back(g.entry());
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for v in g.neighbors(u) {
            if !seen[v.index()] {
                seen[v.index()] = true;
                queue.push_back(v);
            }
        }
    }
    let mut rest: Vec<FunctionId> = g.ids().filter(|id| !seen[id.index()]).collect();
    rest.sort_by(|a, b| {
        scores[b.index()]
            .total_cmp(&scores[a.index()])
            .then_with(|| g.name(*a).cmp(g.name(*b)))
    });
    order.extend(rest);
    order
}

/// Split the graph into `k` disjoint vertex sets balanced by cumulative
/// score. `scores` is indexed by function.
pub fn fennel_partition(
    g: &CallGraph,
    scores: &[f64],
    k: usize,
    params: &FennelParams,
) -> Result<PartitionPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::InvalidK);
    }
    if k > g.len() {
        return Err(PartitionError::KExceedsVertices {
            k,
            vertices: g.len(),
        });
    }
    let scores = effective_scores(g, scores)?;
    let n = g.len();
    let total: f64 = scores.iter().sum();
    let mean = total / n as f64;
    let alpha = (k as f64).sqrt() * g.edge_count() as f64 / (n as f64).powf(params.gamma);
    let capacity = params.slack * total / k as f64;

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut loads = vec![0.0f64; k];
    let mut sizes = vec![0usize; k];
    let mut empty_partitions = k;
    let order = stream_order(g, &scores);

    let mut neighbor_counts = vec![0u32; k];
    for (streamed, &v) in order.iter().enumerate() {
        let s_v = scores[v.index()];
        neighbor_counts.iter_mut().for_each(|c| *c = 0);
        for u in g.neighbors(v) {
            if let Some(p) = assignment[u.index()] {
                neighbor_counts[p] += 1;
            }
        }
        let remaining = n - streamed;
        // When only as many vertices remain as there are empty partitions,
        // they must fill those partitions: no partition stays empty when
        // |V| >= k.
        let force_empty = empty_partitions >= remaining && empty_partitions > 0;
        let allowed: Vec<usize> = if force_empty {
            (0..k).filter(|&p| sizes[p] == 0).collect()
        } else {
            (0..k).filter(|&p| loads[p] + s_v <= capacity).collect()
        };
        let choice = if allowed.is_empty() {
            // Capacity excluded everything: the least-loaded partition wins.
            (0..k)
                .min_by(|&a, &b| loads[a].total_cmp(&loads[b]))
                .unwrap()
        } else {
            let mut best = allowed[0];
            let mut best_gain = gain(neighbor_counts[best], loads[best], s_v, mean, alpha, params);
            for &p in &allowed[1..] {
                let gain_p = gain(neighbor_counts[p], loads[p], s_v, mean, alpha, params);
                if gain_p > best_gain || (gain_p == best_gain && loads[p] < loads[best]) {
                    best = p;
                    best_gain = gain_p;
                }
            }
            best
        };
        if sizes[choice] == 0 {
            empty_partitions -= 1;
        }
        assignment[v.index()] = Some(choice);
        loads[choice] += s_v;
        sizes[choice] += 1;
    }

    let mut members: Vec<BTreeSet<FunctionId>> = vec![BTreeSet::new(); k];
    for id in g.ids() {
        members[assignment[id.index()].unwrap()].insert(id);
    }
    let cut = g
        .edges()
        .iter()
        .filter(|&&(u, v)| assignment[u.index()] != assignment[v.index()])
        .count() as u64;
    Ok(PartitionPlan {
        mode: PartitionMode::Vertex,
        k,
        members,
        edge_assignment: None,
        loads,
        cut_edges: Some(cut),
        replication_factor: None,
    })
}

#[inline]
fn gain(neighbors: u32, load: f64, _s_v: f64, mean: f64, alpha: f64, params: &FennelParams) -> f64 {
    neighbors as f64 - alpha * params.gamma * (load / mean).powf(params.gamma - 1.0)
}

//! Score-adapted streaming graph partitioning.
//!
//! A partitioning round splits the scored call graph into `k` tasks, one per
//! fuzzing worker. Both real algorithms balance *cumulative function
//! scores*, not vertex counts, so that high-potential functions spread
//! evenly across instances:
//!
//! * [`fennel_partition`] — streaming vertex partitioning. Each function
//!   lands in exactly one partition; calls may cross partitions (cut edges).
//! * [`hdrf_partition`] — streaming edge partitioning for skewed,
//!   power-law-like call graphs. Each call edge lands in exactly one
//!   partition; functions incident to edges in several partitions are
//!   replicated.
//! * [`random_partition`] — the uninformed baseline: shuffle and deal.
//!
//! All three are pure functions of their inputs; two runs over the same
//! snapshot produce identical plans.

mod fennel;
mod hdrf;
mod random;

pub use fennel::{fennel_partition, FennelParams};
pub use hdrf::{hdrf_partition, HdrfParams};
pub use random::random_partition;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::callgraph::{CallGraph, FunctionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Vertex,
    Edge,
    Random,
}

impl std::fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionMode::Vertex => write!(f, "vertex"),
            PartitionMode::Edge => write!(f, "edge"),
            PartitionMode::Random => write!(f, "random"),
        }
    }
}

/// The output of a partitioning round.
///
/// In vertex and random modes `members` is a disjoint cover of the vertex
/// set. In edge mode `members` are replica sets (possibly overlapping) and
/// `edge_assignment` maps every edge to its partition.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub k: usize,
    pub members: Vec<BTreeSet<FunctionId>>,
    pub edge_assignment: Option<BTreeMap<(FunctionId, FunctionId), usize>>,
    /// Cumulative score per partition.
    pub loads: Vec<f64>,
    /// Vertex modes: number of edges with endpoints in different partitions.
    pub cut_edges: Option<u64>,
    /// Edge mode: total replicas divided by `|V|`.
    pub replication_factor: Option<f64>,
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("cannot split {vertices} vertices into {k} partitions")]
    KExceedsVertices { k: usize, vertices: usize },
    #[error("edge partitioning needs at least one edge")]
    NoEdges,
    #[error("scores cover {scores} functions but the graph has {vertices}")]
    ScoreLengthMismatch { scores: usize, vertices: usize },
    #[error("plan is inconsistent with the graph: {0}")]
    Inconsistent(String),
}

/// Quality metrics of a plan, recomputed from the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanMetrics {
    pub cut_edges: Option<u64>,
    pub replication_factor: Option<f64>,
    /// `max_load / mean_load`; 1.0 for a perfectly balanced plan.
    pub load_imbalance: f64,
}

/// Validate a plan against its graph and compute quality metrics.
pub fn plan_metrics(plan: &PartitionPlan, g: &CallGraph) -> Result<PlanMetrics, PartitionError> {
    if plan.members.len() != plan.k || plan.loads.len() != plan.k {
        return Err(PartitionError::Inconsistent(format!(
            "plan claims k={} but carries {} member sets and {} loads",
            plan.k,
            plan.members.len(),
            plan.loads.len()
        )));
    }
    for set in &plan.members {
        for &id in set {
            if id.index() >= g.len() {
                return Err(PartitionError::Inconsistent(format!(
                    "member {id:?} is not a vertex of the graph"
                )));
            }
        }
    }
    let total_members: usize = plan.members.iter().map(|s| s.len()).sum();
    match plan.mode {
        PartitionMode::Vertex | PartitionMode::Random => {
            let mut owner: Vec<Option<usize>> = vec![None; g.len()];
            for (p, set) in plan.members.iter().enumerate() {
                for &id in set {
                    if owner[id.index()].replace(p).is_some() {
                        return Err(PartitionError::Inconsistent(format!(
                            "vertex `{}` appears in more than one partition",
                            g.name(id)
                        )));
                    }
                }
            }
            if total_members != g.len() {
                return Err(PartitionError::Inconsistent(format!(
                    "members cover {total_members} of {} vertices",
                    g.len()
                )));
            }
            let cut = g
                .edges()
                .iter()
                .filter(|&&(u, v)| owner[u.index()] != owner[v.index()])
                .count() as u64;
            Ok(PlanMetrics {
                cut_edges: Some(cut),
                replication_factor: None,
                load_imbalance: imbalance(&plan.loads),
            })
        }
        PartitionMode::Edge => {
            let assignment = plan.edge_assignment.as_ref().ok_or_else(|| {
                PartitionError::Inconsistent("edge-mode plan carries no edge assignment".into())
            })?;
            if assignment.len() != g.edge_count() {
                return Err(PartitionError::Inconsistent(format!(
                    "{} edges assigned but the graph has {}",
                    assignment.len(),
                    g.edge_count()
                )));
            }
            for (&(u, v), &p) in assignment {
                if !g.has_edge(u, v) {
                    return Err(PartitionError::Inconsistent(format!(
                        "assigned edge ({}, {}) is not in the graph",
                        g.name(u),
                        g.name(v)
                    )));
                }
                if p >= plan.k {
                    return Err(PartitionError::Inconsistent(format!(
                        "edge assigned to partition {p} but k={}",
                        plan.k
                    )));
                }
                if !plan.members[p].contains(&u) || !plan.members[p].contains(&v) {
                    return Err(PartitionError::Inconsistent(
                        "edge endpoints missing from their partition's replica set".into(),
                    ));
                }
            }
            Ok(PlanMetrics {
                cut_edges: None,
                replication_factor: Some(total_members as f64 / g.len() as f64),
                load_imbalance: imbalance(&plan.loads),
            })
        }
    }
}

fn imbalance(loads: &[f64]) -> f64 {
    let mean = loads.iter().sum::<f64>() / loads.len() as f64;
    if mean <= 0.0 {
        return 1.0;
    }
    loads.iter().cloned().fold(0.0, f64::max) / mean
}

/// Scores indexed by function, with the zero-information degenerate case
/// mapped to uniform weight so load balancing stays meaningful.
pub(crate) fn effective_scores(g: &CallGraph, scores: &[f64]) -> Result<Vec<f64>, PartitionError> {
    if scores.len() != g.len() {
        return Err(PartitionError::ScoreLengthMismatch {
            scores: scores.len(),
            vertices: g.len(),
        });
    }
    if scores.iter().sum::<f64>() > 0.0 {
        Ok(scores.to_vec())
    } else {
        Ok(vec![1.0; g.len()])
    }
}

/// Summary line printed by the `partition` subcommand.
pub fn metrics_line(algo: &str, k: usize, metrics: &PlanMetrics) -> String {
    let cut = metrics
        .cut_edges
        .map(|c| c.to_string())
        .unwrap_or_else(|| "-".to_string());
    let repl = metrics
        .replication_factor
        .map(crate::util::fmt_sig9)
        .unwrap_or_else(|| "-".to_string());
    format!(
        "algo={algo} k={k} cut={cut} repl={repl} imbalance={}",
        crate::util::fmt_sig9(metrics.load_imbalance)
    )
}

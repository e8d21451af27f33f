//! Deterministic desk-scale substitute for real fuzzing.
//!
//! A [`SimProgram`] models a target as its call graph plus, per function, a
//! line count and a discovery difficulty, and per call edge a traversal
//! probability. The [`SimBackend`] implements the campaign backend contract
//! over that model: each mutation extends a retained seed's walk through the
//! graph and discovers not-yet-covered lines with probability
//! `difficulty * exp(-decay * covered_fraction)` — marginal discoveries get
//! exponentially harder as a function fills up, which is what makes
//! redundant exploration between instances expensive.
//!
//! Everything is driven by seeded [`SplitRng`] streams: a given
//! (program seed, campaign seed, config) triple produces bit-identical
//! campaigns.

mod backend;
mod compare;

pub use backend::{sim_fuzz_step, SimBackend, WorkerSim};
pub use compare::{run_comparison, ComparisonMode, ComparisonReport, ModeRun};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::{CallGraph, FunctionId, GraphError, GraphFileFunction};
use crate::coverage::ExecutionTrace;
use crate::rng::SplitRng;

/// Tunables of the coverage-response model and the program generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimModelParams {
    /// Coefficient of the exponential discovery decay.
    pub decay: f64,
    /// Maximum walk extension attempts per mutation.
    pub max_extension: usize,
    /// Generator: probability that a new function also calls a random
    /// earlier function, creating cycles and cross-links.
    pub extra_edge_prob: f64,
    /// Generator: per-edge traversal probability range.
    pub traversal_min: f64,
    pub traversal_max: f64,
}

impl Default for SimModelParams {
    fn default() -> Self {
        SimModelParams {
            decay: 3.0,
            max_extension: 8,
            extra_edge_prob: 0.3,
            traversal_min: 0.3,
            traversal_max: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("need at least 2 functions, got {0}")]
    TooSmall(usize),
    #[error("power-law exponent must lie in [2, 3.5], got {0}")]
    BadExponent(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("program file: {0}")]
    Format(String),
}

/// Synthetic target: call graph, per-function difficulty, per-edge
/// traversal probability.
#[derive(Debug, Clone)]
pub struct SimProgram {
    pub graph: CallGraph,
    /// Discovery difficulty per function, in (0, 1].
    pub difficulty: Vec<f64>,
    /// Out-neighbors with traversal probabilities, aligned with the graph.
    out_probs: Vec<Vec<(FunctionId, f64)>>,
}

impl SimProgram {
    pub fn lines_total(&self, id: FunctionId) -> u64 {
        self.graph.stats(id).lines_total
    }

    pub fn out_edges(&self, id: FunctionId) -> &[(FunctionId, f64)] {
        &self.out_probs[id.index()]
    }

    pub fn total_lines(&self) -> u64 {
        self.graph.ids().map(|id| self.lines_total(id)).sum()
    }

    fn from_parts(
        graph: CallGraph,
        difficulty: Vec<f64>,
        traversal: impl Fn(FunctionId, FunctionId) -> f64,
    ) -> Self {
        let out_probs = graph
            .ids()
            .map(|u| {
                graph
                    .callees(u)
                    .iter()
                    .map(|&v| (v, traversal(u, v)))
                    .collect()
            })
            .collect();
        SimProgram {
            graph,
            difficulty,
            out_probs,
        }
    }

    #[cfg(test)]
    pub(crate) fn from_parts_for_tests(
        graph: CallGraph,
        difficulty: Vec<f64>,
        traversal: f64,
    ) -> Self {
        Self::from_parts(graph, difficulty, |_, _| traversal)
    }

    /// Wrap an arbitrary call graph in the simulation model, drawing
    /// difficulties and traversal probabilities from a seeded stream.
    pub fn from_graph(graph: CallGraph, seed: u64) -> Self {
        let mut rng = SplitRng::new(seed).split(0x51D);
        let difficulty: Vec<f64> = (0..graph.len())
            .map(|_| log_uniform(&mut rng, 0.01, 1.0))
            .collect();
        let mut probs: BTreeMap<(FunctionId, FunctionId), f64> = BTreeMap::new();
        for &(u, v) in graph.edges() {
            probs.insert((u, v), rng.range_f64(0.3, 1.0));
        }
        Self::from_parts(graph, difficulty, |u, v| probs[&(u, v)])
    }

    /// Serialize as a Graph File with simulation annotations. Coverage
    /// tooling that only understands the plain Graph File format can read
    /// the same document.
    pub fn to_json(&self) -> String {
        let file = SimProgramFile {
            entry: self.graph.name(self.graph.entry()).to_string(),
            functions: self
                .graph
                .ids()
                .map(|id| GraphFileFunction {
                    name: self.graph.name(id).to_string(),
                    lines: self.lines_total(id),
                })
                .collect(),
            edges: self
                .graph
                .edges()
                .iter()
                .map(|&(u, v)| {
                    (
                        self.graph.name(u).to_string(),
                        self.graph.name(v).to_string(),
                    )
                })
                .collect(),
            difficulty: self
                .graph
                .ids()
                .map(|id| (self.graph.name(id).to_string(), self.difficulty[id.index()]))
                .collect(),
            traversal: self
                .graph
                .edges()
                .iter()
                .map(|&(u, v)| {
                    let p = self.out_probs[u.index()]
                        .iter()
                        .find(|(w, _)| *w == v)
                        .map(|(_, p)| *p)
                        .unwrap_or(1.0);
                    (
                        self.graph.name(u).to_string(),
                        self.graph.name(v).to_string(),
                        p,
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("sim program serialization cannot fail")
    }

    /// Parse a program file. Missing annotations are filled deterministically
    /// from `fallback_seed`, so a plain Graph File is also a valid program.
    pub fn parse(text: &str, fallback_seed: u64) -> Result<Self, SimError> {
        let file: SimProgramFile =
            serde_json::from_str(text).map_err(|e| SimError::Format(e.to_string()))?;
        let graph_json = serde_json::json!({
            "entry": file.entry,
            "functions": file.functions,
            "edges": file.edges,
        });
        let loaded = CallGraph::parse(&graph_json.to_string())?;
        let graph = loaded.graph;
        // Start from deterministic fallback draws, then let annotations
        // override them, so a plain Graph File is also a valid program.
        let mut program = SimProgram::from_graph(graph.clone(), fallback_seed);
        for (name, d) in &file.difficulty {
            if let Some(id) = graph.id_of(name) {
                program.difficulty[id.index()] = *d;
            }
        }
        let mut annotated: BTreeMap<(FunctionId, FunctionId), f64> = BTreeMap::new();
        for (u, v, p) in &file.traversal {
            if let (Some(u), Some(v)) = (graph.id_of(u), graph.id_of(v)) {
                annotated.insert((u, v), *p);
            }
        }
        for (u, list) in program.out_probs.iter_mut().enumerate() {
            for (v, p) in list.iter_mut() {
                if let Some(&override_p) = annotated.get(&(FunctionId(u as u32), *v)) {
                    *p = override_p;
                }
            }
        }
        Ok(program)
    }
}

#[derive(Serialize, Deserialize)]
struct SimProgramFile {
    entry: String,
    functions: Vec<GraphFileFunction>,
    edges: Vec<(String, String)>,
    #[serde(default)]
    difficulty: BTreeMap<String, f64>,
    #[serde(default)]
    traversal: Vec<(String, String, f64)>,
}

fn log_uniform(rng: &mut SplitRng, lo: f64, hi: f64) -> f64 {
    (rng.range_f64(lo.ln(), hi.ln())).exp()
}

/// Generate a synthetic target with power-law-like out-degree skew.
///
/// Uses a redirection scheme: each new function is called by a uniformly
/// chosen earlier function, except that with probability `1/(exponent - 1)`
/// the edge redirects to that function's own parent, so old well-connected
/// functions keep accumulating callees. Every function stays reachable from
/// the entry. Extra forward edges create cycles and cross-links.
pub fn generate_program(
    n_functions: usize,
    power_law_exponent: f64,
    rng_seed: u64,
    params: &SimModelParams,
) -> Result<SimProgram, SimError> {
    if n_functions < 2 {
        return Err(SimError::TooSmall(n_functions));
    }
    if !(2.0..=3.5).contains(&power_law_exponent) {
        return Err(SimError::BadExponent(power_law_exponent));
    }
    let redirect = 1.0 / (power_law_exponent - 1.0);
    let mut rng = SplitRng::new(rng_seed);
    let mut graph = CallGraph::new("main")?;
    graph.stats_mut(FunctionId(0)).lines_total = 5 + rng.index(196) as u64;

    let mut parent: Vec<usize> = vec![0; n_functions];
    let mut edges: Vec<(String, String)> = Vec::new();
    let name = |i: usize| {
        if i == 0 {
            "main".to_string()
        } else {
            format!("f{i:04}")
        }
    };
    for i in 1..n_functions {
        let candidate = rng.index(i);
        let target = if candidate != 0 && rng.chance(redirect) {
            parent[candidate]
        } else {
            candidate
        };
        parent[i] = target;
        edges.push((name(target), name(i)));
        if rng.chance(params.extra_edge_prob) {
            let back = rng.index(i);
            edges.push((name(i), name(back)));
        }
    }
    graph.merge_dynamic_edges(&edges)?;
    for i in 1..n_functions {
        let id = graph.id_of(&name(i)).expect("generated function");
        graph.stats_mut(id).lines_total = 5 + rng.index(196) as u64;
    }
    let difficulty: Vec<f64> = (0..n_functions)
        .map(|_| log_uniform(&mut rng, 0.01, 1.0))
        .collect();
    let mut probs: BTreeMap<(FunctionId, FunctionId), f64> = BTreeMap::new();
    for &(u, v) in graph.edges() {
        probs.insert(
            (u, v),
            rng.range_f64(params.traversal_min, params.traversal_max),
        );
    }
    Ok(SimProgram::from_parts(graph, difficulty, |u, v| {
        probs[&(u, v)]
    }))
}

/// A simulated test case: a walk through the call graph plus the lines it
/// covers.
#[derive(Debug, Clone)]
pub struct SimSeed {
    /// Walk through the call graph, starting at the entry.
    pub walk: Vec<FunctionId>,
    /// All lines this input covers, inherited from its parent plus its own
    /// discoveries. Keys always lie on the walk.
    pub covered: BTreeMap<FunctionId, std::collections::BTreeSet<u16>>,
    /// This seed's own discoveries (disjoint from the parent's lines on the
    /// same instance).
    pub new_lines: BTreeMap<FunctionId, Vec<u16>>,
    /// Replayable trace: walk enters/exits, one entry block per walk step,
    /// one block per newly discovered line.
    pub trace: ExecutionTrace,
}

/// Block-id namespace: each function owns a 256-slot range, slot 0 is the
/// function entry block and slot `1 + line` marks a line discovery.
pub fn entry_block(id: FunctionId) -> u64 {
    (id.0 as u64) << 8
}

pub fn line_block(id: FunctionId, line: u16) -> u64 {
    ((id.0 as u64) << 8) | (1 + line as u64)
}

impl SimSeed {
    /// Synthesize the nested trace for a walk and its new discoveries.
    pub fn build_trace(
        graph: &CallGraph,
        walk: &[FunctionId],
        new_lines: &BTreeMap<FunctionId, Vec<u16>>,
    ) -> ExecutionTrace {
        let mut trace = ExecutionTrace::new();
        let mut emitted: std::collections::BTreeSet<FunctionId> = Default::default();
        for &f in walk {
            let fname = graph.name(f);
            trace.push_enter(fname);
            trace.push_block(fname, entry_block(f));
            if emitted.insert(f) {
                if let Some(lines) = new_lines.get(&f) {
                    for &line in lines {
                        trace.push_block(fname, line_block(f, line));
                    }
                }
            }
        }
        for &f in walk.iter().rev() {
            trace.push_exit(graph.name(f));
        }
        trace
    }

    /// Content hash for queue deduplication.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.walk.len() * 4 + 16);
        for f in &self.walk {
            bytes.extend_from_slice(&f.0.to_le_bytes());
        }
        bytes.push(0xFF);
        for (f, lines) in &self.covered {
            bytes.extend_from_slice(&f.0.to_le_bytes());
            for &l in lines {
                bytes.extend_from_slice(&l.to_le_bytes());
            }
        }
        crate::util::fnv1a_64(&bytes)
    }
}

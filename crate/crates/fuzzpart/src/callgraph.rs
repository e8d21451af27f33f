//! The function call graph: construction from graph files, dynamic edge
//! merging, the orphan-function safeguard, Katz centrality, and induced
//! subgraph queries.
//!
//! A [`CallGraph`] is the single source of structural truth for a campaign.
//! Vertices and edges only ever grow: dynamic traces may reveal functions
//! and calls that static extraction missed, and discarding them would throw
//! away fuzzing space. Functions are addressed by dense integer handles
//! ([`FunctionId`]); names appear only at I/O boundaries.
//!
//! Iteration order is insertion order everywhere, so every algorithm
//! downstream of the graph is reproducible.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense handle for a function vertex. Indices are assigned at insertion and
/// never reused for the lifetime of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionId(pub u32);

impl FunctionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Per-function coverage counters, stagnation counter, centrality, and score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FunctionStats {
    /// Total lines in the function body; 0 for placeholders discovered
    /// dynamically until a coverage report refines it.
    pub lines_total: u64,
    /// Lines covered as of the current cycle.
    pub lines_covered_cur: u64,
    /// Lines covered as of the previous cycle's snapshot.
    pub lines_covered_pre: u64,
    /// Consecutive cycles without new coverage.
    pub stagnation_cycles: u64,
    /// Katz centrality; `None` until computed for the current graph shape.
    pub katz: Option<f64>,
    /// Entropy-weighted score; `None` until scored.
    pub score: Option<f64>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function name must be non-empty")]
    EmptyName,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function id {0:?} is not a vertex of this graph")]
    UnknownId(FunctionId),
    #[error("katz centrality did not converge after {iterations} iterations (residual {residual:e}, tolerance {tolerance:e})")]
    KatzDiverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
}

/// On-disk form of a call graph (the Graph File format).
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub entry: String,
    pub functions: Vec<GraphFileFunction>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFileFunction {
    pub name: String,
    pub lines: u64,
}

/// A parsed graph plus any non-fatal irregularities found while loading.
#[derive(Debug)]
pub struct LoadedGraph {
    pub graph: CallGraph,
    pub warnings: Vec<String>,
}

/// Directed function call graph with per-function stats.
#[derive(Debug, Clone)]
pub struct CallGraph {
    names: Vec<String>,
    stats: Vec<FunctionStats>,
    index_of: HashMap<String, FunctionId>,
    /// Edges in insertion order; `edge_set` backs idempotent insertion.
    edges: Vec<(FunctionId, FunctionId)>,
    edge_set: HashSet<(FunctionId, FunctionId)>,
    out_adj: Vec<Vec<FunctionId>>,
    in_adj: Vec<Vec<FunctionId>>,
    entry: FunctionId,
}

impl CallGraph {
    /// Create a graph containing only the entry function.
    pub fn new(entry: &str) -> Result<Self, GraphError> {
        if entry.is_empty() {
            return Err(GraphError::EmptyName);
        }
        let mut g = CallGraph {
            names: Vec::new(),
            stats: Vec::new(),
            index_of: HashMap::new(),
            edges: Vec::new(),
            edge_set: HashSet::new(),
            out_adj: Vec::new(),
            in_adj: Vec::new(),
            entry: FunctionId(0),
        };
        g.insert_function(entry, 0)?;
        Ok(g)
    }

    /// Parse a Graph File document. Unknown edge endpoints and an undeclared
    /// entry are inserted as zero-line placeholders with a warning, mirroring
    /// how dynamic discovery legitimately reveals functions the static
    /// extractor missed.
    pub fn parse(text: &str) -> Result<LoadedGraph, GraphError> {
        let file: GraphFile = serde_json::from_str(text)?;
        if file.entry.is_empty() {
            return Err(GraphError::EmptyName);
        }
        let mut warnings = Vec::new();
        let mut graph = CallGraph::new(&file.entry)?;
        let mut entry_declared = false;
        for f in &file.functions {
            if f.name == file.entry {
                if entry_declared {
                    return Err(GraphError::DuplicateFunction(f.name.clone()));
                }
                graph.stats[graph.entry.index()].lines_total = f.lines;
                entry_declared = true;
                continue;
            }
            if graph.index_of.contains_key(&f.name) {
                return Err(GraphError::DuplicateFunction(f.name.clone()));
            }
            graph.insert_function(&f.name, f.lines)?;
        }
        if !entry_declared {
            warnings.push(format!(
                "entry `{}` is not declared in `functions`; inserted with 0 lines",
                file.entry
            ));
        }
        for (caller, callee) in &file.edges {
            for name in [caller, callee] {
                if !graph.index_of.contains_key(name.as_str()) {
                    warnings.push(format!(
                        "edge endpoint `{name}` is not declared in `functions`; inserted with 0 lines"
                    ));
                    graph.insert_function(name, 0)?;
                }
            }
            let u = graph.index_of[caller.as_str()];
            let v = graph.index_of[callee.as_str()];
            graph.insert_edge(u, v);
        }
        Ok(LoadedGraph { graph, warnings })
    }

    /// Serialize back to the Graph File format.
    pub fn to_graph_file(&self) -> GraphFile {
        GraphFile {
            entry: self.name(self.entry).to_string(),
            functions: self
                .ids()
                .map(|id| GraphFileFunction {
                    name: self.name(id).to_string(),
                    lines: self.stats(id).lines_total,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|&(u, v)| (self.name(u).to_string(), self.name(v).to_string()))
                .collect(),
        }
    }

    fn insert_function(&mut self, name: &str, lines_total: u64) -> Result<FunctionId, GraphError> {
        if name.is_empty() {
            return Err(GraphError::EmptyName);
        }
        debug_assert!(!self.index_of.contains_key(name));
        let id = FunctionId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.stats.push(FunctionStats {
            lines_total,
            ..FunctionStats::default()
        });
        self.index_of.insert(name.to_string(), id);
        self.out_adj.push(Vec::new());
        self.in_adj.push(Vec::new());
        Ok(id)
    }

    fn insert_edge(&mut self, u: FunctionId, v: FunctionId) -> bool {
        if !self.edge_set.insert((u, v)) {
            return false;
        }
        self.edges.push((u, v));
        self.out_adj[u.index()].push(v);
        self.in_adj[v.index()].push(u);
        true
    }

    /// Look up an existing function, or insert it with zero-initialized stats.
    pub fn intern(&mut self, name: &str) -> Result<FunctionId, GraphError> {
        match self.index_of.get(name) {
            Some(&id) => Ok(id),
            None => self.insert_function(name, 0),
        }
    }

    /// Merge dynamically observed call pairs into the graph. Unknown
    /// endpoints are inserted with zero-initialized stats; existing stats are
    /// untouched. Idempotent. Returns the number of edges actually added.
    pub fn merge_dynamic_edges<S: AsRef<str>>(
        &mut self,
        trace: &[(S, S)],
    ) -> Result<usize, GraphError> {
        let mut added = 0;
        for (caller, callee) in trace {
            let u = self.intern(caller.as_ref())?;
            let v = self.intern(callee.as_ref())?;
            if self.insert_edge(u, v) {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Make sure every listed function exists as a vertex. Returns the newly
    /// inserted (orphan) functions; the orchestrator appends those to every
    /// partition so that functions whose call edges were never observed are
    /// not prematurely excluded from fuzzing.
    pub fn append_orphans<S: AsRef<str>>(
        &mut self,
        function_list: &[S],
    ) -> Result<Vec<FunctionId>, GraphError> {
        let mut orphans = Vec::new();
        for name in function_list {
            let name = name.as_ref();
            if !self.index_of.contains_key(name) {
                orphans.push(self.insert_function(name, 0)?);
            }
        }
        Ok(orphans)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn entry(&self) -> FunctionId {
        self.entry
    }

    pub fn ids(&self) -> impl Iterator<Item = FunctionId> + '_ {
        (0..self.names.len() as u32).map(FunctionId)
    }

    pub fn name(&self, id: FunctionId) -> &str {
        &self.names[id.index()]
    }

    pub fn id_of(&self, name: &str) -> Option<FunctionId> {
        self.index_of.get(name).copied()
    }

    pub fn stats(&self, id: FunctionId) -> &FunctionStats {
        &self.stats[id.index()]
    }

    pub fn stats_mut(&mut self, id: FunctionId) -> &mut FunctionStats {
        &mut self.stats[id.index()]
    }

    pub fn edges(&self) -> &[(FunctionId, FunctionId)] {
        &self.edges
    }

    pub fn has_edge(&self, u: FunctionId, v: FunctionId) -> bool {
        self.edge_set.contains(&(u, v))
    }

    pub fn callees(&self, id: FunctionId) -> &[FunctionId] {
        &self.out_adj[id.index()]
    }

    pub fn callers(&self, id: FunctionId) -> &[FunctionId] {
        &self.in_adj[id.index()]
    }

    /// Undirected neighbors in first-seen order, deduplicated. Call direction
    /// is irrelevant for co-location decisions, so the partitioners consume
    /// this view.
    pub fn neighbors(&self, id: FunctionId) -> Vec<FunctionId> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &n in self.out_adj[id.index()]
            .iter()
            .chain(&self.in_adj[id.index()])
        {
            if n != id && seen.insert(n) {
                out.push(n);
            }
        }
        out
    }

    /// Katz centrality under the incoming-influence convention: a function
    /// called from many important functions is important. Fixed point of
    /// `x = alpha * A^T x + beta`, then L2-normalized. Deterministic: fixed
    /// iteration order, no parallelism.
    pub fn katz_centrality(
        &self,
        alpha: f64,
        beta: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<Vec<f64>, GraphError> {
        let n = self.len();
        let mut x = vec![0.0f64; n];
        let mut next = vec![0.0f64; n];
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            for v in next.iter_mut() {
                *v = beta;
            }
            for &(u, v) in &self.edges {
                next[v.index()] += alpha * x[u.index()];
            }
            residual = x
                .iter()
                .zip(next.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut x, &mut next);
            if residual < tol {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in x.iter_mut() {
                        *v /= norm;
                    }
                }
                return Ok(x);
            }
        }
        Err(GraphError::KatzDiverged {
            iterations: max_iter,
            residual,
            tolerance: tol,
        })
    }

    /// Compute Katz centrality with [`KatzParams`] and store it on each
    /// function's stats.
    pub fn compute_katz(&mut self, params: &KatzParams) -> Result<(), GraphError> {
        let katz = self.katz_centrality(params.alpha, params.beta, params.tol, params.max_iter)?;
        for (stats, value) in self.stats.iter_mut().zip(katz) {
            stats.katz = Some(value);
        }
        Ok(())
    }

    /// Induced subgraph on `members`: those vertices plus every edge with
    /// both endpoints in the set. Stats are copied. The subgraph's entry is
    /// the global entry when it is a member, else the first member.
    pub fn partition_subgraph(&self, members: &[FunctionId]) -> Result<CallGraph, GraphError> {
        for &id in members {
            if id.index() >= self.len() {
                return Err(GraphError::UnknownId(id));
            }
        }
        let mut ordered: Vec<FunctionId> = members.to_vec();
        ordered.sort_unstable();
        ordered.dedup();
        if ordered.is_empty() {
            return Err(GraphError::EmptyName);
        }
        let entry = if ordered.contains(&self.entry) {
            self.entry
        } else {
            ordered[0]
        };
        let mut sub = CallGraph::new(self.name(entry))?;
        sub.stats[0] = self.stats(entry).clone();
        for &id in &ordered {
            if id == entry {
                continue;
            }
            let new_id = sub.insert_function(self.name(id), 0)?;
            sub.stats[new_id.index()] = self.stats(id).clone();
        }
        let member_set: HashSet<FunctionId> = ordered.iter().copied().collect();
        for &(u, v) in &self.edges {
            if member_set.contains(&u) && member_set.contains(&v) {
                let su = sub.index_of[self.name(u)];
                let sv = sub.index_of[self.name(v)];
                sub.insert_edge(su, sv);
            }
        }
        Ok(sub)
    }

    /// Canonical (name-sorted) vertex and edge lists, for equality checks in
    /// tests and tools.
    pub fn canonical_form(&self) -> (Vec<String>, Vec<(String, String)>) {
        let mut names = self.names.clone();
        names.sort();
        let mut edges: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(u, v)| (self.name(u).to_string(), self.name(v).to_string()))
            .collect();
        edges.sort();
        (names, edges)
    }
}

/// Katz centrality parameters. `alpha` must stay below the reciprocal of the
/// adjacency spectral radius for the fixed point to exist; the default is
/// small enough for realistic call graphs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KatzParams {
    pub alpha: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KatzParams {
    fn default() -> Self {
        KatzParams {
            alpha: 0.005,
            beta: 1.0,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

/// Parse a profile trace file: one `caller<TAB>callee` pair per line, `#`
/// comments and blank lines ignored.
pub fn parse_call_pairs(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(caller), Some(callee), None) if !caller.is_empty() && !callee.is_empty() => {
                pairs.push((caller.to_string(), callee.to_string()));
            }
            _ => {
                return Err(format!(
                    "line {}: expected `caller<TAB>callee`, got `{line}`",
                    lineno + 1
                ))
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_doc() -> &'static str {
        r#"{
            "entry": "main",
            "functions": [
                {"name": "main", "lines": 10},
                {"name": "a", "lines": 20},
                {"name": "b", "lines": 30}
            ],
            "edges": [["main", "a"], ["a", "b"]]
        }"#
    }

    #[test]
    fn load_basic_graph() {
        let loaded = CallGraph::parse(graph_doc()).unwrap();
        let g = &loaded.graph;
        assert!(loaded.warnings.is_empty());
        assert_eq!(g.len(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.name(g.entry()), "main");
        assert_eq!(g.stats(g.id_of("b").unwrap()).lines_total, 30);
    }

    #[test]
    fn load_auto_inserts_unknown_edge_endpoint() {
        let doc = r#"{
            "entry": "main",
            "functions": [{"name": "main", "lines": 10}],
            "edges": [["main", "ghost"]]
        }"#;
        let loaded = CallGraph::parse(doc).unwrap();
        assert_eq!(loaded.graph.len(), 2);
        let ghost = loaded.graph.id_of("ghost").unwrap();
        assert_eq!(loaded.graph.stats(ghost).lines_total, 0);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("ghost"));
    }

    #[test]
    fn load_single_function_no_edges() {
        let doc = r#"{"entry": "main", "functions": [{"name": "main", "lines": 5}], "edges": []}"#;
        let loaded = CallGraph::parse(doc).unwrap();
        assert_eq!(loaded.graph.len(), 1);
        assert_eq!(loaded.graph.edge_count(), 0);
    }

    #[test]
    fn load_rejects_duplicate_function() {
        let doc = r#"{
            "entry": "main",
            "functions": [{"name": "main", "lines": 1}, {"name": "main", "lines": 2}],
            "edges": []
        }"#;
        assert!(matches!(
            CallGraph::parse(doc),
            Err(GraphError::DuplicateFunction(_))
        ));
    }

    #[test]
    fn load_reports_parse_position() {
        let err = CallGraph::parse("{\n  \"entry\": }").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "missing position info: {msg}");
    }

    #[test]
    fn load_undeclared_entry_warns() {
        let doc = r#"{"entry": "main", "functions": [{"name": "a", "lines": 1}], "edges": []}"#;
        let loaded = CallGraph::parse(doc).unwrap();
        assert_eq!(loaded.graph.name(loaded.graph.entry()), "main");
        assert!(!loaded.warnings.is_empty());
    }

    #[test]
    fn merge_inserts_unknown_endpoints() {
        let mut g = CallGraph::parse(graph_doc()).unwrap().graph;
        let added = g.merge_dynamic_edges(&[("a", "c")]).unwrap();
        assert_eq!(added, 1);
        assert_eq!(g.len(), 4);
        assert!(g.has_edge(g.id_of("a").unwrap(), g.id_of("c").unwrap()));
    }

    #[test]
    fn merge_is_idempotent() {
        let mut g = CallGraph::parse(graph_doc()).unwrap().graph;
        g.merge_dynamic_edges(&[("a", "c"), ("c", "main")]).unwrap();
        let before = g.canonical_form();
        let added = g.merge_dynamic_edges(&[("a", "c"), ("c", "main")]).unwrap();
        assert_eq!(added, 0);
        assert_eq!(g.canonical_form(), before);
    }

    #[test]
    fn merge_uses_set_semantics() {
        let mut g = CallGraph::new("a").unwrap();
        g.intern("b").unwrap();
        let added = g
            .merge_dynamic_edges(&[("a", "b"), ("a", "b"), ("b", "a")])
            .unwrap();
        assert_eq!(added, 2);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn orphans_inserted_once() {
        let mut g = CallGraph::parse(graph_doc()).unwrap().graph;
        let orphans = g.append_orphans(&["main", "a", "x"]).unwrap();
        assert_eq!(orphans.len(), 1);
        assert_eq!(g.name(orphans[0]), "x");
        assert_eq!(g.append_orphans(&["main", "a", "x"]).unwrap().len(), 0);
        assert_eq!(g.append_orphans::<&str>(&[]).unwrap().len(), 0);
    }

    #[test]
    fn katz_no_edges_all_equal() {
        let mut g = CallGraph::new("main").unwrap();
        g.intern("a").unwrap();
        g.intern("b").unwrap();
        let katz = g.katz_centrality(0.005, 1.0, 1e-8, 1000).unwrap();
        assert!((katz[0] - katz[1]).abs() < 1e-12);
        assert!((katz[1] - katz[2]).abs() < 1e-12);
    }

    #[test]
    fn katz_two_cycle_symmetric() {
        let mut g = CallGraph::new("a").unwrap();
        g.merge_dynamic_edges(&[("a", "b"), ("b", "a")]).unwrap();
        let katz = g.katz_centrality(0.005, 1.0, 1e-8, 1000).unwrap();
        assert!((katz[0] - katz[1]).abs() < 1e-12);
    }

    #[test]
    fn katz_star_prefers_callees() {
        let mut g = CallGraph::new("a").unwrap();
        g.merge_dynamic_edges(&[("a", "b"), ("a", "c"), ("a", "d")])
            .unwrap();
        let katz = g.katz_centrality(0.005, 1.0, 1e-8, 1000).unwrap();
        assert!((katz[1] - katz[2]).abs() < 1e-12);
        assert!((katz[2] - katz[3]).abs() < 1e-12);
        assert!(katz[1] > katz[0]);
    }

    #[test]
    fn katz_is_deterministic() {
        let mut g = CallGraph::new("m").unwrap();
        g.merge_dynamic_edges(&[("m", "a"), ("a", "b"), ("b", "m"), ("a", "c")])
            .unwrap();
        let a = g.katz_centrality(0.005, 1.0, 1e-8, 1000).unwrap();
        let b = g.katz_centrality(0.005, 1.0, 1e-8, 1000).unwrap();
        assert_eq!(a, b, "two runs must be bit-identical");
    }

    #[test]
    fn katz_divergence_is_reported() {
        let mut g = CallGraph::new("a").unwrap();
        g.merge_dynamic_edges(&[("a", "b"), ("b", "a")]).unwrap();
        // Spectral radius 1, alpha 1.5: the iteration cannot settle.
        let err = g.katz_centrality(1.5, 1.0, 1e-8, 50).unwrap_err();
        assert!(matches!(err, GraphError::KatzDiverged { .. }));
    }

    #[test]
    fn subgraph_identity() {
        let g = CallGraph::parse(graph_doc()).unwrap().graph;
        let members: Vec<FunctionId> = g.ids().collect();
        let sub = g.partition_subgraph(&members).unwrap();
        assert_eq!(sub.canonical_form(), g.canonical_form());
    }

    #[test]
    fn subgraph_single_vertex() {
        let g = CallGraph::parse(graph_doc()).unwrap().graph;
        let sub = g.partition_subgraph(&[g.id_of("a").unwrap()]).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.edge_count(), 0);
    }

    #[test]
    fn subgraph_induced_edge_rule() {
        // Path a -> b -> c restricted to {a, c} keeps no edges.
        let mut g = CallGraph::new("a").unwrap();
        g.merge_dynamic_edges(&[("a", "b"), ("b", "c")]).unwrap();
        let sub = g
            .partition_subgraph(&[g.id_of("a").unwrap(), g.id_of("c").unwrap()])
            .unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.edge_count(), 0);
    }

    #[test]
    fn subgraph_rejects_foreign_id() {
        let g = CallGraph::parse(graph_doc()).unwrap().graph;
        assert!(g.partition_subgraph(&[FunctionId(99)]).is_err());
    }

    #[test]
    fn call_pair_parsing() {
        let pairs = parse_call_pairs("# comment\nmain\ta\na\tb\n\n").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("main".to_string(), "a".to_string()),
                ("a".to_string(), "b".to_string())
            ]
        );
        assert!(parse_call_pairs("main a b").is_err());
    }
}

//! The campaign loop: warmup, periodic stop-the-world repartitioning,
//! seed-queue bookkeeping, allowlist emission, and relaunch.
//!
//! One monitor coordinates `k_total - 1` workers. After a warmup on fully
//! instrumented binaries, the loop repeats on every interval expiry:
//!
//! 1. terminate all workers;
//! 2. pull newly discovered seeds into the global queue and diff against the
//!    done queue;
//! 3. update the call graph from profiling traces and coverage replays of
//!    the new seeds, then rescore every function;
//! 4. partition the graph into `k_total - 1` tasks;
//! 5. emit one instrumentation allowlist per partition — every file also
//!    carries the entry function and any orphan functions discovered only
//!    via the function-list safeguard, so nothing is prematurely excluded;
//! 6. relaunch the workers on the full global queue (their partition-aware
//!    retention does the filtering).
//!
//! The loop is strictly sequential; workers only run concurrently between
//! cycle boundaries. Time spent in steps 3-5 is metered separately so the
//! cost of repartitioning is visible in the report.

mod backend;
pub mod exec;

pub use backend::{BackendError, CoverageSnapshot, FuzzBackend, Seed, WorkerSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::{CallGraph, FunctionId, GraphError, KatzParams};
use crate::coverage::compute_context_depth;
use crate::partition::{
    fennel_partition, hdrf_partition, plan_metrics, random_partition, FennelParams, HdrfParams,
    PartitionError, PartitionPlan, PlanMetrics,
};
use crate::scoring::{self, ScoreError};
use crate::util::fmt_sig9;

/// Which partitioner drives task assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fennel,
    Hdrf,
    Random,
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fennel" => Ok(Algorithm::Fennel),
            "hdrf" => Ok(Algorithm::Hdrf),
            "random" => Ok(Algorithm::Random),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Fennel => write!(f, "fennel"),
            Algorithm::Hdrf => write!(f, "hdrf"),
            Algorithm::Random => write!(f, "random"),
        }
    }
}

/// Task assignment mode: partitioned per an algorithm, or the shared
/// baseline where every worker sees the whole program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Partitioned(Algorithm),
    Shared,
}

/// Campaign configuration. Durations are in backend time units (ticks for
/// the simulated backend, seconds for the exec backend).
#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// Total instances including the monitor; at least 2.
    pub k_total: usize,
    /// Units between repartitioning rounds.
    pub interval: u64,
    /// Units of fully-instrumented fuzzing before the first round.
    pub warmup: u64,
    /// Total campaign budget in units.
    pub duration: u64,
    /// Coverage sampling period; 0 samples only at phase boundaries.
    pub sample_every: u64,
    pub mode: TaskMode,
    pub fennel: FennelParams,
    pub hdrf: HdrfParams,
    pub katz: KatzParams,
    pub epsilon: f64,
    pub rng_seed: u64,
    /// Where allowlists and reports land; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn workers(&self) -> usize {
        self.k_total - 1
    }
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            k_total: 2,
            interval: 1000,
            warmup: 500,
            duration: 4000,
            sample_every: 0,
            mode: TaskMode::Partitioned(Algorithm::Fennel),
            fennel: FennelParams::default(),
            hdrf: HdrfParams::default(),
            katz: KatzParams::default(),
            epsilon: scoring::DEFAULT_EPSILON,
            rng_seed: 0,
            out_dir: None,
        }
    }
}

/// Mutable campaign state: the global seed queue, the done queue, the graph,
/// and the current plan.
#[derive(Debug)]
pub struct CampaignState {
    pub graph: CallGraph,
    /// Seeds keyed by `(timestamp, content_hash)`.
    pub global_queue: BTreeMap<(u64, u64), Seed>,
    seen_hashes: std::collections::HashSet<u64>,
    /// Keys of seeds that already went through a graph update.
    pub done_queue: BTreeSet<(u64, u64)>,
    pub cycle: u64,
    pub current_plan: Option<PartitionPlan>,
    /// Orphans found by the latest function-list comparison; injected into
    /// every allowlist of the next emission.
    pub pending_orphans: Vec<FunctionId>,
    pub warnings: Vec<String>,
}

impl CampaignState {
    pub fn new(graph: CallGraph) -> Self {
        CampaignState {
            graph,
            global_queue: BTreeMap::new(),
            seen_hashes: Default::default(),
            done_queue: BTreeSet::new(),
            cycle: 0,
            current_plan: None,
            pending_orphans: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Seeds in the global queue that have not been processed yet, in
    /// deterministic `(timestamp, content_hash)` order.
    pub fn new_seeds(&self) -> Vec<Seed> {
        self.global_queue
            .iter()
            .filter(|(key, _)| !self.done_queue.contains(*key))
            .map(|(_, seed)| seed.clone())
            .collect()
    }

    pub fn queue_seeds(&self) -> Vec<Seed> {
        self.global_queue.values().cloned().collect()
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One coverage sample: a worker's covered units and the union at `time`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageRow {
    pub time: u64,
    pub instance: usize,
    pub covered: u64,
    pub union: u64,
}

/// Per-cycle record of plan quality and repartitioning cost.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub cycle: u64,
    pub new_seeds: usize,
    pub orphans: usize,
    pub metrics: Option<PlanMetrics>,
    pub depths: Vec<usize>,
    /// Wall time ingesting profiles/coverage of new seeds.
    pub ingest_micros: u64,
    /// Wall time in partitioning proper: scoring + partition + emission.
    pub repart_micros: u64,
}

/// Everything a campaign produced.
#[derive(Debug, Clone, Default)]
pub struct CampaignReport {
    pub coverage: Vec<CoverageRow>,
    pub cycles: Vec<CycleRecord>,
    pub warnings: Vec<String>,
    pub total_wall_micros: u64,
    pub ingest_wall_micros: u64,
    pub repart_wall_micros: u64,
}

impl CampaignReport {
    /// Fraction of campaign wall time spent in partitioning proper.
    pub fn repartition_fraction(&self) -> f64 {
        if self.total_wall_micros == 0 {
            return 0.0;
        }
        self.repart_wall_micros as f64 / self.total_wall_micros as f64
    }

    /// `time,instance,branches_or_lines_covered,union_covered` rows.
    /// Fully deterministic for a fixed seed.
    pub fn coverage_csv(&self) -> String {
        let mut out = String::from("time,instance,branches_or_lines_covered,union_covered\n");
        for row in &self.coverage {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.time, row.instance, row.covered, row.union
            );
        }
        out
    }

    /// Per-cycle plan metrics and repartition durations. The two `*_micros`
    /// columns are wall-clock measurements and therefore the only
    /// non-deterministic content of a report; pass `include_timing = false`
    /// for byte-stable comparisons.
    pub fn cycles_csv(&self, include_timing: bool) -> String {
        let mut out = String::from(
            "cycle,new_seeds,orphans,cut_edges,replication_factor,load_imbalance,depths",
        );
        if include_timing {
            out.push_str(",ingest_micros,repart_micros");
        }
        out.push('\n');
        for c in &self.cycles {
            let cut = c
                .metrics
                .and_then(|m| m.cut_edges)
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into());
            let repl = c
                .metrics
                .and_then(|m| m.replication_factor)
                .map(fmt_sig9)
                .unwrap_or_else(|| "-".into());
            let imb = c
                .metrics
                .map(|m| fmt_sig9(m.load_imbalance))
                .unwrap_or_else(|| "-".into());
            let depths = c
                .depths
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("|");
            let _ = write!(
                out,
                "{},{},{},{cut},{repl},{imb},{depths}",
                c.cycle, c.new_seeds, c.orphans
            );
            if include_timing {
                let _ = write!(out, ",{},{}", c.ingest_micros, c.repart_micros);
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of one graph update.
pub struct UpdateOutcome {
    /// Functions inserted by the function-list safeguard this cycle.
    pub orphans: Vec<FunctionId>,
    pub warnings: Vec<String>,
    pub ingest_micros: u64,
    pub score_micros: u64,
}

/// Refresh the graph from a batch of new seeds.
///
/// For each seed, the profiling trace contributes call edges and the
/// coverage replay contributes per-function covered-line counts (folded as
/// per-function maxima; totals refine zero-line placeholders). The previous
/// cycle's coverage is snapshotted into `lines_covered_pre`, stagnation
/// counters advance, the function-list safeguard inserts any functions the
/// graph has never seen, and centrality and scores are recomputed.
///
/// A seed whose profile or coverage replay fails is skipped with a warning;
/// one bad seed never aborts a cycle.
pub fn update_graph<B: FuzzBackend + ?Sized>(
    state: &mut CampaignState,
    backend: &mut B,
    new_seeds: &[Seed],
    katz: &KatzParams,
    epsilon: f64,
) -> Result<UpdateOutcome, CampaignError> {
    let ingest_start = Instant::now();
    let mut warnings = Vec::new();
    let mut folded: HashMap<String, scoring::CoverageCounts> = HashMap::new();
    for seed in new_seeds {
        let trace = match backend.profile_seed(seed) {
            Ok(trace) => trace,
            Err(err) => {
                warnings.push(format!("skipping seed `{}`: {err}", seed.handle));
                continue;
            }
        };
        let pairs = trace.call_pairs();
        state.graph.merge_dynamic_edges(&pairs)?;
        match backend.coverage_of_seed(seed) {
            Ok(cov) => {
                for (name, counts) in cov {
                    let slot = folded.entry(name).or_insert(counts);
                    slot.covered = slot.covered.max(counts.covered);
                    slot.total = slot.total.max(counts.total);
                }
            }
            Err(err) => {
                warnings.push(format!(
                    "coverage replay failed for `{}`: {err}",
                    seed.handle
                ));
            }
        }
    }
    // Make sure every reported function exists before folding counters.
    let names: Vec<String> = folded.keys().cloned().collect();
    for name in &names {
        state.graph.intern(name)?;
    }
    // Snapshot, fold, and advance stagnation for every function.
    for id in state.graph.ids().collect::<Vec<_>>() {
        let reported = folded.get(state.graph.name(id)).copied();
        let stats = state.graph.stats_mut(id);
        let previous_cur = stats.lines_covered_cur;
        stats.lines_covered_pre = previous_cur;
        if let Some(counts) = reported {
            stats.lines_covered_cur = previous_cur.max(counts.covered);
            stats.lines_total = stats.lines_total.max(counts.total);
        }
        if stats.lines_covered_cur > stats.lines_covered_pre {
            stats.stagnation_cycles = 0;
        } else {
            stats.stagnation_cycles += 1;
        }
    }
    let function_list = backend.function_list()?;
    let orphans = state.graph.append_orphans(&function_list)?;
    let ingest_micros = ingest_start.elapsed().as_micros() as u64;

    let score_start = Instant::now();
    state.graph.compute_katz(katz)?;
    scoring::score(&mut state.graph, epsilon)?;
    let score_micros = score_start.elapsed().as_micros() as u64;

    state.pending_orphans = orphans.clone();
    Ok(UpdateOutcome {
        orphans,
        warnings,
        ingest_micros,
        score_micros,
    })
}

/// Merge newly collected seeds into the global queue, deduplicating by
/// content hash. Returns how many were new.
pub fn sync_seeds<B: FuzzBackend + ?Sized>(
    state: &mut CampaignState,
    backend: &mut B,
) -> Result<usize, CampaignError> {
    let mut added = 0;
    for seed in backend.collect_new_seeds()? {
        if state.seen_hashes.insert(seed.content_hash) {
            state.global_queue.insert(seed.key(), seed);
            added += 1;
        }
    }
    Ok(added)
}

/// Add externally known seeds (the initial corpus) to the queue.
fn seed_queue(state: &mut CampaignState, seeds: Vec<Seed>) {
    for seed in seeds {
        if state.seen_hashes.insert(seed.content_hash) {
            state.global_queue.insert(seed.key(), seed);
        }
    }
}

/// Render one allowlist in the AFL++ `AFL_LLVM_ALLOWLIST` function format:
/// `fun: <name>` lines sorted ascending by name, no trailing whitespace
/// beyond the final newline.
pub fn render_allowlist(names: &BTreeSet<String>) -> String {
    let mut out = String::new();
    for name in names {
        let _ = writeln!(out, "fun: {name}");
    }
    out
}

/// Parse an allowlist file back into a function set.
pub fn parse_allowlist(text: &str) -> Result<BTreeSet<String>, String> {
    let mut names = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.strip_prefix("fun:") {
            Some(name) if !name.trim().is_empty() => {
                names.insert(name.trim().to_string());
            }
            _ => return Err(format!("line {}: expected `fun: <name>`", lineno + 1)),
        }
    }
    Ok(names)
}

/// The function set worker `p` instruments: its partition members plus every
/// pending orphan plus the entry function.
pub fn allowlist_names(
    graph: &CallGraph,
    members: &BTreeSet<FunctionId>,
    orphans: &[FunctionId],
    entry: FunctionId,
) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = members
        .iter()
        .map(|&id| graph.name(id).to_string())
        .collect();
    for &id in orphans {
        names.insert(graph.name(id).to_string());
    }
    names.insert(graph.name(entry).to_string());
    names
}

/// Write one allowlist file per partition into `out_dir`. Files are
/// byte-deterministic. Returns the paths in partition order.
pub fn emit_allowlists(
    plan_members: &[BTreeSet<FunctionId>],
    orphans: &[FunctionId],
    entry: FunctionId,
    graph: &CallGraph,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CampaignError> {
    std::fs::create_dir_all(out_dir).map_err(|source| CampaignError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::with_capacity(plan_members.len());
    for (p, members) in plan_members.iter().enumerate() {
        let names = allowlist_names(graph, members, orphans, entry);
        let path = out_dir.join(format!("allowlist_{p:03}.txt"));
        std::fs::write(&path, render_allowlist(&names)).map_err(|source| CampaignError::Io {
            path: path.clone(),
            source,
        })?;
        paths.push(path);
    }
    Ok(paths)
}

fn partition_graph(
    config: &CampaignConfig,
    state: &CampaignState,
    k: usize,
    algo: Algorithm,
) -> Result<PartitionPlan, CampaignError> {
    let scores: Vec<f64> = state
        .graph
        .ids()
        .map(|id| state.graph.stats(id).score.unwrap_or(0.0))
        .collect();
    let plan = match algo {
        Algorithm::Fennel => fennel_partition(&state.graph, &scores, k, &config.fennel)?,
        Algorithm::Hdrf => hdrf_partition(&state.graph, &scores, k, &config.hdrf)?,
        Algorithm::Random => random_partition(&state.graph, k, config.rng_seed ^ state.cycle)?,
    };
    Ok(plan)
}

fn full_member_sets(graph: &CallGraph, k: usize) -> Vec<BTreeSet<FunctionId>> {
    let all: BTreeSet<FunctionId> = graph.ids().collect();
    vec![all; k]
}

fn worker_specs(
    graph: &CallGraph,
    member_sets: &[BTreeSet<FunctionId>],
    orphans: &[FunctionId],
    paths: Option<&[PathBuf]>,
) -> Vec<WorkerSpec> {
    member_sets
        .iter()
        .enumerate()
        .map(|(index, members)| {
            let member_vec: Vec<FunctionId> = members.iter().copied().collect();
            let depth = match graph.partition_subgraph(&member_vec) {
                Ok(sub) => compute_context_depth(&sub),
                Err(_) => 1,
            };
            WorkerSpec {
                index,
                allowlist: allowlist_names(graph, members, orphans, graph.entry()),
                allowlist_path: paths.map(|p| p[index].clone()),
                context_depth: depth,
            }
        })
        .collect()
}

/// Advance the backend in `sample_every`-sized steps, recording coverage
/// rows along the way and one final row at the phase boundary.
fn advance_sampling<B: FuzzBackend + ?Sized>(
    backend: &mut B,
    report: &mut CampaignReport,
    start_time: u64,
    units: u64,
    sample_every: u64,
) -> Result<(), CampaignError> {
    let mut advanced = 0;
    while advanced < units {
        let step = if sample_every == 0 {
            units - advanced
        } else {
            sample_every.min(units - advanced)
        };
        backend.advance(step)?;
        advanced += step;
        let snapshot = backend.coverage_snapshot();
        for (instance, &covered) in snapshot.per_instance.iter().enumerate() {
            report.coverage.push(CoverageRow {
                time: start_time + advanced,
                instance,
                covered,
                union: snapshot.union,
            });
        }
    }
    Ok(())
}

/// Run a full campaign against a backend. See the module docs for the loop
/// structure.
pub fn run_campaign<B: FuzzBackend + ?Sized>(
    config: &CampaignConfig,
    graph: CallGraph,
    backend: &mut B,
) -> Result<(CampaignReport, CampaignState), CampaignError> {
    if config.k_total < 2 {
        return Err(CampaignError::Config(
            "k must be at least 2 (one monitor plus one worker)".into(),
        ));
    }
    if config.interval == 0 {
        return Err(CampaignError::Config("interval must be positive".into()));
    }
    let wall_start = Instant::now();
    let mut report = CampaignReport::default();
    let mut state = CampaignState::new(graph);

    let corpus = backend.initial_corpus()?;
    if corpus.is_empty() {
        return Err(CampaignError::Config("initial corpus is empty".into()));
    }
    seed_queue(&mut state, corpus);

    // Warmup: every worker fully instrumented.
    let workers = config.workers();
    let full_sets = full_member_sets(&state.graph, workers);
    let warmup_paths = match &config.out_dir {
        Some(dir) => Some(emit_allowlists(
            &full_sets,
            &[],
            state.graph.entry(),
            &state.graph,
            &dir.join("cycle_000"),
        )?),
        None => None,
    };
    let specs = worker_specs(&state.graph, &full_sets, &[], warmup_paths.as_deref());
    backend.launch_workers(&specs, &state.queue_seeds())?;

    let mut now = 0u64;
    let warmup = config.warmup.min(config.duration);
    advance_sampling(backend, &mut report, now, warmup, config.sample_every)?;
    now += warmup;

    while now + config.interval <= config.duration {
        advance_sampling(
            backend,
            &mut report,
            now,
            config.interval,
            config.sample_every,
        )?;
        now += config.interval;
        state.cycle += 1;

        backend.terminate_workers()?;
        sync_seeds(&mut state, backend)?;
        let new_seeds = state.new_seeds();

        let outcome = update_graph(
            &mut state,
            backend,
            &new_seeds,
            &config.katz,
            config.epsilon,
        )?;
        report.warnings.extend(outcome.warnings);
        for seed in &new_seeds {
            state.done_queue.insert(seed.key());
        }

        let repart_start = Instant::now();
        let mut k = workers;
        if k > state.graph.len() {
            report.warnings.push(format!(
                "cycle {}: {k} partitions requested but the graph has {} functions; clamping",
                state.cycle,
                state.graph.len()
            ));
            k = state.graph.len();
        }
        let cycle_dir = config
            .out_dir
            .as_ref()
            .map(|dir| dir.join(format!("cycle_{:03}", state.cycle)));
        let (member_sets, metrics) = match config.mode {
            TaskMode::Partitioned(algo) => {
                let plan = partition_graph(config, &state, k, algo)?;
                let metrics = plan_metrics(&plan, &state.graph)?;
                let members = plan.members.clone();
                state.current_plan = Some(plan);
                (members, Some(metrics))
            }
            TaskMode::Shared => (full_member_sets(&state.graph, k), None),
        };
        let paths = match &cycle_dir {
            Some(dir) => Some(emit_allowlists(
                &member_sets,
                &state.pending_orphans,
                state.graph.entry(),
                &state.graph,
                dir,
            )?),
            None => None,
        };
        let orphans = state.pending_orphans.clone();
        let specs = worker_specs(&state.graph, &member_sets, &orphans, paths.as_deref());
        let repart_micros = repart_start.elapsed().as_micros() as u64 + outcome.score_micros;

        backend.launch_workers(&specs, &state.queue_seeds())?;

        report.cycles.push(CycleRecord {
            cycle: state.cycle,
            new_seeds: new_seeds.len(),
            orphans: orphans.len(),
            metrics,
            depths: specs.iter().map(|s| s.context_depth).collect(),
            ingest_micros: outcome.ingest_micros,
            repart_micros,
        });
        report.ingest_wall_micros += outcome.ingest_micros;
        report.repart_wall_micros += repart_micros;
    }

    // Trailing partial interval: workers keep fuzzing, no repartition.
    if now < config.duration {
        advance_sampling(
            backend,
            &mut report,
            now,
            config.duration - now,
            config.sample_every,
        )?;
    }
    backend.terminate_workers()?;
    report.warnings.extend(state.warnings.iter().cloned());
    report.total_wall_micros = wall_start.elapsed().as_micros() as u64;
    Ok((report, state))
}

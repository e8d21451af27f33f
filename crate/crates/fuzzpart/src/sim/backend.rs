//! The simulated fuzzing backend.
//!
//! Workers execute as interleaved deterministic steps: one tick gives every
//! live worker one mutation. A mutation picks a retained seed, extends its
//! walk along call edges (each edge traversed with its own probability),
//! discovers not-yet-covered lines in allowlisted functions, and keeps the
//! result only when its trace sets new bits in the worker's
//! partition-restricted coverage map — exactly the retention rule real
//! instances apply.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::callgraph::FunctionId;
use crate::coverage::CoverageMap;
use crate::orchestrator::{BackendError, CoverageSnapshot, FuzzBackend, Seed, WorkerSpec};
use crate::rng::SplitRng;
use crate::scoring::CoverageCounts;

use super::{SimModelParams, SimProgram, SimSeed};

/// One simulated fuzzing instance.
pub struct WorkerSim {
    pub index: usize,
    pub allowlist: HashSet<FunctionId>,
    pub map: CoverageMap,
    /// Indices into the backend's seed store.
    pub retained: Vec<usize>,
    pub rng: SplitRng,
    /// Lines this instance has not yet covered, per function. Only
    /// allowlisted functions are ever consumed.
    uncovered: Vec<Vec<u16>>,
    pub covered_count: u64,
    pub covered_functions: BTreeSet<FunctionId>,
}

impl WorkerSim {
    fn new(program: &SimProgram, spec: &WorkerSpec, rng: SplitRng) -> Self {
        let allowlist: HashSet<FunctionId> = spec
            .allowlist
            .iter()
            .filter_map(|name| program.graph.id_of(name))
            .collect();
        let uncovered = program
            .graph
            .ids()
            .map(|id| (0..program.lines_total(id) as u16).collect())
            .collect();
        WorkerSim {
            index: spec.index,
            allowlist,
            map: CoverageMap::new(spec.allowlist.iter().cloned(), spec.context_depth),
            retained: Vec::new(),
            rng,
            uncovered,
            covered_count: 0,
            covered_functions: BTreeSet::new(),
        }
    }

    /// Credit already-known coverage of a retained seed, the simulated
    /// equivalent of replaying the corpus on a freshly instrumented binary.
    fn credit_seed(&mut self, seed: &SimSeed) {
        for (&f, lines) in &seed.covered {
            if !self.allowlist.contains(&f) {
                continue;
            }
            let pool = &mut self.uncovered[f.index()];
            let before = pool.len();
            pool.retain(|l| !lines.contains(l));
            let removed = (before - pool.len()) as u64;
            if removed > 0 {
                self.covered_count += removed;
                self.covered_functions.insert(f);
            }
        }
    }

    fn covered_fraction(&self, program: &SimProgram, f: FunctionId) -> f64 {
        let total = program.lines_total(f);
        if total == 0 {
            return 1.0;
        }
        1.0 - self.uncovered[f.index()].len() as f64 / total as f64
    }
}

/// One mutation of one instance. Returns the new seed when its trace sets
/// new bits in the instance's coverage map; `None` otherwise. Coverage
/// state is only committed on retention.
pub fn sim_fuzz_step(
    program: &SimProgram,
    worker: &mut WorkerSim,
    store: &[SimSeed],
    params: &SimModelParams,
) -> Option<SimSeed> {
    if worker.retained.is_empty() {
        return None;
    }
    let parent = &store[worker.retained[worker.rng.index(worker.retained.len())]];

    // Mutate: extend the walk along out-edges, each gated by its traversal
    // probability.
    let mut walk = parent.walk.clone();
    let mut cur = *walk.last().expect("walks are never empty");
    for _ in 0..params.max_extension {
        let outs = program.out_edges(cur);
        if outs.is_empty() {
            break;
        }
        let (next, prob) = outs[worker.rng.index(outs.len())];
        if !worker.rng.chance(prob) {
            break;
        }
        walk.push(next);
        cur = next;
    }

    // Discover lines in allowlisted walk functions, hardest first seen:
    // each uncovered line falls independently with probability
    // difficulty * exp(-decay * covered_fraction). Selection is staged and
    // only committed if the seed is retained.
    let mut new_lines: BTreeMap<FunctionId, Vec<u16>> = BTreeMap::new();
    let mut walk_seen: HashSet<FunctionId> = HashSet::with_capacity(walk.len());
    for &f in &walk {
        if !walk_seen.insert(f) || !worker.allowlist.contains(&f) {
            continue;
        }
        let pool = &worker.uncovered[f.index()];
        if pool.is_empty() {
            continue;
        }
        let p = program.difficulty[f.index()]
            * (-params.decay * worker.covered_fraction(program, f)).exp();
        let picks = bernoulli_positions(&mut worker.rng, pool.len(), p);
        if !picks.is_empty() {
            new_lines.insert(f, picks.iter().map(|&i| pool[i]).collect());
        }
    }

    let covered = {
        let mut covered = parent.covered.clone();
        for (&f, lines) in &new_lines {
            covered.entry(f).or_default().extend(lines.iter().copied());
        }
        covered
    };
    let trace = SimSeed::build_trace(&program.graph, &walk, &new_lines);
    let outcome = worker
        .map
        .replay(&trace)
        .expect("synthesized traces are always balanced");
    if outcome.new_bits == 0 {
        return None;
    }

    // Commit the instance-side coverage.
    for (&f, lines) in &new_lines {
        let set: HashSet<u16> = lines.iter().copied().collect();
        worker.uncovered[f.index()].retain(|l| !set.contains(l));
        worker.covered_count += lines.len() as u64;
        worker.covered_functions.insert(f);
    }
    Some(SimSeed {
        walk,
        covered,
        new_lines,
        trace,
    })
}

/// Positions (over a frozen pool of `len` items) selected by independent
/// Bernoulli(p) draws, sampled with geometric gap-jumps so the cost is
/// proportional to the number of successes, not the pool size.
fn bernoulli_positions(rng: &mut SplitRng, len: usize, p: f64) -> Vec<usize> {
    if p <= 0.0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..len).collect();
    }
    let mut picks = Vec::new();
    let log_q = (1.0 - p).ln();
    let mut idx = 0usize;
    loop {
        let u = rng.next_f64();
        let skip = ((1.0 - u).ln() / log_q).floor() as usize;
        idx += skip;
        if idx >= len {
            break;
        }
        picks.push(idx);
        idx += 1;
    }
    picks
}

/// Simulated campaign backend over one program.
pub struct SimBackend {
    program: SimProgram,
    params: SimModelParams,
    base_rng: SplitRng,
    epoch: u64,
    tick: u64,
    store: Vec<SimSeed>,
    workers: Vec<WorkerSim>,
    live: bool,
    pending: Vec<Seed>,
    union_lines: Vec<Vec<bool>>,
    union_count: u64,
    /// Mean pairwise Jaccard of per-instance covered-function sets, sampled
    /// at every stop-the-world boundary.
    pub overlap_series: Vec<f64>,
    /// Call-order log for discipline checks: `launch`, `terminate`,
    /// `profile`, `coverage`.
    pub call_log: Vec<&'static str>,
}

impl SimBackend {
    pub fn new(program: SimProgram, campaign_seed: u64, params: SimModelParams) -> Self {
        let union_lines = program
            .graph
            .ids()
            .map(|id| vec![false; program.lines_total(id) as usize])
            .collect();
        SimBackend {
            base_rng: SplitRng::new(campaign_seed).split(0xC0DE),
            program,
            params,
            epoch: 0,
            tick: 0,
            store: Vec::new(),
            workers: Vec::new(),
            live: false,
            pending: Vec::new(),
            union_lines,
            union_count: 0,
            overlap_series: Vec::new(),
            call_log: Vec::new(),
        }
    }

    pub fn program(&self) -> &SimProgram {
        &self.program
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn union_covered(&self) -> u64 {
        self.union_count
    }

    pub fn workers(&self) -> &[WorkerSim] {
        &self.workers
    }

    fn seed_meta(&self, store_idx: usize, worker: usize) -> Seed {
        let seed = &self.store[store_idx];
        Seed {
            handle: store_idx.to_string(),
            timestamp: self.tick,
            worker,
            content_hash: seed.content_hash(),
        }
    }

    fn resolve(&self, seed: &Seed) -> Result<usize, BackendError> {
        seed.handle
            .parse::<usize>()
            .ok()
            .filter(|&idx| idx < self.store.len())
            .ok_or_else(|| BackendError::Profile {
                seed: seed.handle.clone(),
                message: "unknown simulated seed".into(),
            })
    }

    fn absorb_union(&mut self, seed: &SimSeed) {
        for (&f, lines) in &seed.new_lines {
            let slot = &mut self.union_lines[f.index()];
            for &line in lines {
                if !slot[line as usize] {
                    slot[line as usize] = true;
                    self.union_count += 1;
                }
            }
        }
    }

    fn mean_pairwise_jaccard(&self) -> f64 {
        let k = self.workers.len();
        if k < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..k {
            for j in (i + 1)..k {
                let a = &self.workers[i].covered_functions;
                let b = &self.workers[j].covered_functions;
                let inter = a.intersection(b).count();
                let union = a.union(b).count();
                total += if union == 0 {
                    0.0
                } else {
                    inter as f64 / union as f64
                };
                pairs += 1;
            }
        }
        total / pairs as f64
    }

    /// Isolation check: a worker's covered functions always lie inside its
    /// allowlist.
    fn debug_check_isolation(&self) {
        if cfg!(debug_assertions) {
            for w in &self.workers {
                debug_assert!(
                    w.covered_functions.iter().all(|f| w.allowlist.contains(f)),
                    "worker {} credited coverage outside its allowlist",
                    w.index
                );
            }
        }
    }
}

impl FuzzBackend for SimBackend {
    fn initial_corpus(&mut self) -> Result<Vec<Seed>, BackendError> {
        if self.store.is_empty() {
            let entry = self.program.graph.entry();
            let walk = vec![entry];
            let trace = SimSeed::build_trace(&self.program.graph, &walk, &BTreeMap::new());
            self.store.push(SimSeed {
                walk,
                covered: BTreeMap::new(),
                new_lines: BTreeMap::new(),
                trace,
            });
        }
        Ok(vec![self.seed_meta(0, 0)])
    }

    fn launch_workers(&mut self, specs: &[WorkerSpec], queue: &[Seed]) -> Result<(), BackendError> {
        if self.live {
            return Err(BackendError::Launch(
                "workers are already running; terminate first".into(),
            ));
        }
        self.call_log.push("launch");
        self.epoch += 1;
        self.workers.clear();
        for spec in specs {
            let label = (self.epoch << 16) | spec.index as u64;
            let mut worker = WorkerSim::new(&self.program, spec, self.base_rng.split(label));
            // Partition-aware retention over the full global queue.
            for meta in queue {
                let idx = self.resolve(meta)?;
                let seed = &self.store[idx];
                let outcome = worker
                    .map
                    .replay(&seed.trace)
                    .expect("stored traces are balanced");
                if outcome.new_bits > 0 {
                    worker.retained.push(idx);
                    worker.credit_seed(seed);
                }
            }
            self.workers.push(worker);
        }
        self.live = true;
        Ok(())
    }

    fn terminate_workers(&mut self) -> Result<(), BackendError> {
        self.call_log.push("terminate");
        if self.live {
            self.overlap_series.push(self.mean_pairwise_jaccard());
        }
        self.live = false;
        Ok(())
    }

    fn advance(&mut self, units: u64) -> Result<(), BackendError> {
        if !self.live {
            return Err(BackendError::Launch(
                "cannot advance while no workers are running".into(),
            ));
        }
        for _ in 0..units {
            self.tick += 1;
            for w in 0..self.workers.len() {
                let (program, params) = (&self.program, &self.params);
                let worker = &mut self.workers[w];
                if let Some(seed) = sim_fuzz_step(program, worker, &self.store, params) {
                    let worker_index = worker.index;
                    self.absorb_union(&seed);
                    let idx = self.store.len();
                    self.store.push(seed);
                    self.workers[w].retained.push(idx);
                    let meta = self.seed_meta(idx, worker_index);
                    self.pending.push(meta);
                }
            }
        }
        self.debug_check_isolation();
        Ok(())
    }

    fn collect_new_seeds(&mut self) -> Result<Vec<Seed>, BackendError> {
        Ok(std::mem::take(&mut self.pending))
    }

    fn profile_seed(
        &mut self,
        seed: &Seed,
    ) -> Result<crate::coverage::ExecutionTrace, BackendError> {
        self.call_log.push("profile");
        let idx = self.resolve(seed)?;
        Ok(self.store[idx].trace.clone())
    }

    fn coverage_of_seed(
        &mut self,
        seed: &Seed,
    ) -> Result<HashMap<String, CoverageCounts>, BackendError> {
        self.call_log.push("coverage");
        let idx = self.resolve(seed)?;
        let sim_seed = &self.store[idx];
        Ok(sim_seed
            .covered
            .iter()
            .map(|(&f, lines)| {
                (
                    self.program.graph.name(f).to_string(),
                    CoverageCounts {
                        covered: lines.len() as u64,
                        total: self.program.lines_total(f),
                    },
                )
            })
            .collect())
    }

    fn function_list(&mut self) -> Result<Vec<String>, BackendError> {
        Ok(self
            .program
            .graph
            .ids()
            .map(|id| self.program.graph.name(id).to_string())
            .collect())
    }

    fn coverage_snapshot(&mut self) -> CoverageSnapshot {
        CoverageSnapshot {
            per_instance: self.workers.iter().map(|w| w.covered_count).collect(),
            union: self.union_count,
        }
    }
}

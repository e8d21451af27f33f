//! The pluggable fuzzing backend interface.
//!
//! The campaign loop is backend-agnostic: it launches workers, lets them run
//! for an interval of time units, stops the world, and interrogates the
//! backend about what was found. Time units are abstract — simulated ticks
//! for the simulation backend, seconds for the external-process backend.

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::coverage::ExecutionTrace;
use crate::scoring::CoverageCounts;

/// A test case known to the orchestrator. Seeds are deduplicated by content
/// hash and ordered by `(timestamp, content_hash)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    /// Backend-specific locator (store index, file path, ...).
    pub handle: String,
    /// Discovery time in campaign time units.
    pub timestamp: u64,
    /// Worker that found it (0 for the initial corpus).
    pub worker: usize,
    /// FNV-1a-64 of the seed content.
    pub content_hash: u64,
}

impl Seed {
    pub fn key(&self) -> (u64, u64) {
        (self.timestamp, self.content_hash)
    }
}

/// Instrumentation view for one worker: its allowlisted functions and the
/// call-chain context depth its coverage map uses.
#[derive(Debug, Clone)]
pub struct WorkerSpec {
    pub index: usize,
    pub allowlist: std::collections::BTreeSet<String>,
    /// Emitted allowlist file, when the campaign writes one.
    pub allowlist_path: Option<PathBuf>,
    pub context_depth: usize,
}

/// Point-in-time coverage as the backend sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageSnapshot {
    /// Covered units per live worker (line counts for the simulated
    /// backend).
    pub per_instance: Vec<u64>,
    /// Units covered by any instance since campaign start.
    pub union: u64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("failed to launch workers: {0}")]
    Launch(String),
    #[error("profiling `{seed}` failed: {message}")]
    Profile { seed: String, message: String },
    #[error("coverage replay of `{seed}` failed: {message}")]
    Coverage { seed: String, message: String },
    #[error("backend i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Contract every fuzzing backend implements.
///
/// `collect_new_seeds` is append-only: a seed, once reported, is never
/// retracted. `profile_seed` and `coverage_of_seed` must be deterministic
/// for a given seed.
pub trait FuzzBackend {
    /// The initial corpus. Must be non-empty for a campaign to start.
    fn initial_corpus(&mut self) -> Result<Vec<Seed>, BackendError>;

    /// Start one worker per spec, each seeded from the full queue (workers
    /// apply their own partition-restricted retention).
    fn launch_workers(&mut self, specs: &[WorkerSpec], queue: &[Seed]) -> Result<(), BackendError>;

    /// Stop all running workers.
    fn terminate_workers(&mut self) -> Result<(), BackendError>;

    /// Let launched workers fuzz for `units` time units.
    fn advance(&mut self, units: u64) -> Result<(), BackendError>;

    /// Seeds discovered since the last call.
    fn collect_new_seeds(&mut self) -> Result<Vec<Seed>, BackendError>;

    /// Replay a seed on the profiling side: the full execution trace.
    fn profile_seed(&mut self, seed: &Seed) -> Result<ExecutionTrace, BackendError>;

    /// Replay a seed on the coverage side: covered/total line counts per
    /// function.
    fn coverage_of_seed(
        &mut self,
        seed: &Seed,
    ) -> Result<HashMap<String, CoverageCounts>, BackendError>;

    /// Every function known to contain at least one basic block, regardless
    /// of whether any call edge to it was ever observed.
    fn function_list(&mut self) -> Result<Vec<String>, BackendError>;

    /// Current coverage standing for reporting.
    fn coverage_snapshot(&mut self) -> CoverageSnapshot;
}

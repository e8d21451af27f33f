//! Backend driving real external fuzzers through command templates.
//!
//! Three templates wire the campaign to the outside world, each expanded
//! per invocation:
//!
//! * fuzz command — launched once per worker with `{allowlist}` (the
//!   worker's emitted allowlist file), `{dir}` (the worker's output
//!   directory, which must gain a `queue/` subdirectory), and `{seeds}`
//!   (the directory holding the current global queue);
//! * profile command — run per new seed with `{seed}`; must print an
//!   execution trace (`E`/`X`/`B` lines) on stdout;
//! * coverage command — run per new seed with `{seed}`; must print
//!   `function<TAB>covered<TAB>total` lines on stdout.
//!
//! Workers drop discovered inputs into `<dir>/queue/` named
//! `id:<6-digit>,time:<unix_ms>`, the AFL sync-dir convention. The monitor
//! mirrors every new file into its own `monitor/queue/`; the mirrored copy
//! is what profiling and coverage replays read, so a worker may garbage-
//! collect its own queue without corrupting the campaign.
//!
//! Time units are seconds. Coverage snapshots update at cycle boundaries
//! (when replays happen), not continuously.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use crate::coverage::ExecutionTrace;
use crate::scoring::{parse_coverage_report, CoverageCounts};

use super::{BackendError, CoverageSnapshot, FuzzBackend, Seed, WorkerSpec};

use crate::util::fnv1a_64 as content_hash;

/// Parse `id:<n>,time:<ms>` queue file names; falls back to `None` when the
/// name does not follow the convention.
fn parse_queue_name(name: &str) -> Option<u64> {
    let time_field = name.split(',').find_map(|f| f.strip_prefix("time:"))?;
    time_field.parse().ok()
}

pub struct ExecBackendConfig {
    pub fuzz_cmd: String,
    pub profile_cmd: String,
    pub coverage_cmd: String,
    /// File listing one function per line: everything the build found to
    /// contain at least one basic block. Optional; without it the orphan
    /// safeguard has nothing to add.
    pub function_list: Option<PathBuf>,
    /// Directory of initial seeds.
    pub corpus_dir: PathBuf,
    /// Campaign working directory: worker dirs and the monitor queue live
    /// here.
    pub work_dir: PathBuf,
}

struct WorkerProc {
    child: Child,
    queue_dir: PathBuf,
    index: usize,
}

pub struct ExecBackend {
    config: ExecBackendConfig,
    monitor_queue: PathBuf,
    workers: Vec<WorkerProc>,
    seen: std::collections::HashSet<PathBuf>,
    pending: Vec<Seed>,
    next_id: u64,
    /// Per-worker folded coverage from replays, for snapshots.
    worker_cov: HashMap<usize, HashMap<String, CoverageCounts>>,
    union_cov: HashMap<String, CoverageCounts>,
}

impl ExecBackend {
    pub fn new(config: ExecBackendConfig) -> Result<Self, BackendError> {
        let monitor_queue = config.work_dir.join("monitor").join("queue");
        std::fs::create_dir_all(&monitor_queue).map_err(|source| BackendError::Io {
            path: monitor_queue.clone(),
            source,
        })?;
        Ok(ExecBackend {
            config,
            monitor_queue,
            workers: Vec::new(),
            seen: Default::default(),
            pending: Vec::new(),
            next_id: 0,
            worker_cov: HashMap::new(),
            union_cov: HashMap::new(),
        })
    }

    fn expand(template: &str, substitutions: &[(&str, &str)]) -> String {
        let mut cmd = template.to_string();
        for (key, value) in substitutions {
            cmd = cmd.replace(key, value);
        }
        cmd
    }

    fn run_capture(cmd: &str) -> Result<String, String> {
        let output = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| format!("spawn failed: {e}"))?;
        if !output.status.success() {
            return Err(format!(
                "command exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr)
            ));
        }
        String::from_utf8(output.stdout).map_err(|e| format!("non-UTF8 output: {e}"))
    }

    /// Mirror one discovered file into the monitor queue and register it.
    /// Collection is best-effort: a seed that disappears or cannot be read
    /// is logged and skipped, never fatal.
    fn ingest_file(&mut self, path: &Path, worker: usize) -> Result<(), BackendError> {
        if !self.seen.insert(path.to_path_buf()) {
            return Ok(());
        }
        let bytes = match std::fs::read(path) {
            Ok(bytes) => bytes,
            Err(err) => {
                eprintln!(
                    "warning: skipping unreadable seed {}: {err}",
                    path.display()
                );
                return Ok(());
            }
        };
        let timestamp = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(parse_queue_name)
            .unwrap_or(0);
        let hash = content_hash(&bytes);
        let mirrored = self
            .monitor_queue
            .join(format!("id:{:06},time:{timestamp}", self.next_id));
        self.next_id += 1;
        std::fs::write(&mirrored, &bytes).map_err(|source| BackendError::Io {
            path: mirrored.clone(),
            source,
        })?;
        self.pending.push(Seed {
            handle: mirrored.to_string_lossy().into_owned(),
            timestamp,
            worker,
            content_hash: hash,
        });
        Ok(())
    }

    fn scan_dir(&mut self, dir: &Path, worker: usize) -> Result<(), BackendError> {
        let entries = match std::fs::read_dir(dir) {
            Ok(entries) => entries,
            Err(_) => return Ok(()), // a worker that wrote nothing yet
        };
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            self.ingest_file(&file, worker)?;
        }
        Ok(())
    }
}

impl FuzzBackend for ExecBackend {
    fn initial_corpus(&mut self) -> Result<Vec<Seed>, BackendError> {
        let corpus = self.config.corpus_dir.clone();
        self.scan_dir(&corpus, 0)?;
        Ok(std::mem::take(&mut self.pending))
    }

    fn launch_workers(
        &mut self,
        specs: &[WorkerSpec],
        _queue: &[Seed],
    ) -> Result<(), BackendError> {
        for spec in specs {
            let dir = self.config.work_dir.join(format!("w{}", spec.index));
            let queue_dir = dir.join("queue");
            std::fs::create_dir_all(&queue_dir).map_err(|source| BackendError::Io {
                path: queue_dir.clone(),
                source,
            })?;
            let allowlist = spec
                .allowlist_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            let cmd = Self::expand(
                &self.config.fuzz_cmd,
                &[
                    ("{allowlist}", allowlist.as_str()),
                    ("{dir}", &dir.to_string_lossy()),
                    ("{seeds}", &self.monitor_queue.to_string_lossy()),
                ],
            );
            let child = Command::new("sh")
                .arg("-c")
                .arg(&cmd)
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| BackendError::Launch(format!("worker {}: {e}", spec.index)))?;
            self.workers.push(WorkerProc {
                child,
                queue_dir,
                index: spec.index,
            });
        }
        Ok(())
    }

    fn terminate_workers(&mut self) -> Result<(), BackendError> {
        for worker in &mut self.workers {
            let _ = worker.child.kill();
            let _ = worker.child.wait();
        }
        let dirs: Vec<(PathBuf, usize)> = self
            .workers
            .iter()
            .map(|w| (w.queue_dir.clone(), w.index))
            .collect();
        self.workers.clear();
        for (dir, index) in dirs {
            self.scan_dir(&dir, index)?;
        }
        Ok(())
    }

    fn advance(&mut self, units: u64) -> Result<(), BackendError> {
        std::thread::sleep(std::time::Duration::from_secs(units));
        Ok(())
    }

    fn collect_new_seeds(&mut self) -> Result<Vec<Seed>, BackendError> {
        let dirs: Vec<(PathBuf, usize)> = self
            .workers
            .iter()
            .map(|w| (w.queue_dir.clone(), w.index))
            .collect();
        for (dir, index) in dirs {
            self.scan_dir(&dir, index)?;
        }
        Ok(std::mem::take(&mut self.pending))
    }

    fn profile_seed(&mut self, seed: &Seed) -> Result<ExecutionTrace, BackendError> {
        let cmd = Self::expand(&self.config.profile_cmd, &[("{seed}", &seed.handle)]);
        let stdout = Self::run_capture(&cmd).map_err(|message| BackendError::Profile {
            seed: seed.handle.clone(),
            message,
        })?;
        // Profilers may emit full event traces or bare caller<TAB>callee
        // pairs; accept both.
        match ExecutionTrace::parse(&stdout) {
            Ok(trace) => Ok(trace),
            Err(trace_err) => match crate::callgraph::parse_call_pairs(&stdout) {
                Ok(pairs) => Ok(ExecutionTrace::from_call_pairs(&pairs)),
                Err(_) => Err(BackendError::Profile {
                    seed: seed.handle.clone(),
                    message: trace_err.to_string(),
                }),
            },
        }
    }

    fn coverage_of_seed(
        &mut self,
        seed: &Seed,
    ) -> Result<HashMap<String, CoverageCounts>, BackendError> {
        let cmd = Self::expand(&self.config.coverage_cmd, &[("{seed}", &seed.handle)]);
        let stdout = Self::run_capture(&cmd).map_err(|message| BackendError::Coverage {
            seed: seed.handle.clone(),
            message,
        })?;
        let cov = parse_coverage_report(&stdout).map_err(|e| BackendError::Coverage {
            seed: seed.handle.clone(),
            message: e.to_string(),
        })?;
        let worker_slot = self.worker_cov.entry(seed.worker).or_default();
        for (name, counts) in &cov {
            for slot in [
                worker_slot.entry(name.clone()),
                self.union_cov.entry(name.clone()),
            ] {
                let entry = slot.or_insert(*counts);
                entry.covered = entry.covered.max(counts.covered);
                entry.total = entry.total.max(counts.total);
            }
        }
        Ok(cov)
    }

    fn function_list(&mut self) -> Result<Vec<String>, BackendError> {
        let Some(path) = &self.config.function_list else {
            return Ok(Vec::new());
        };
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect())
    }

    fn coverage_snapshot(&mut self) -> CoverageSnapshot {
        let max_worker = self.worker_cov.keys().copied().max().unwrap_or(0);
        let per_instance = (0..=max_worker)
            .map(|w| {
                self.worker_cov
                    .get(&w)
                    .map(|m| m.values().map(|c| c.covered).sum())
                    .unwrap_or(0)
            })
            .collect();
        CoverageSnapshot {
            per_instance,
            union: self.union_cov.values().map(|c| c.covered).sum(),
        }
    }
}

impl Drop for ExecBackend {
    fn drop(&mut self) {
        for worker in &mut self.workers {
            let _ = worker.child.kill();
            let _ = worker.child.wait();
        }
    }
}

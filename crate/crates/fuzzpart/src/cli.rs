//! Command-line interface: one binary, five subcommands.
//!
//! * `score` — rank a graph's functions by fuzzing potential.
//! * `partition` — split a scored graph into k allowlists.
//! * `campaign` — run the full campaign loop against the simulated or the
//!   external-process backend.
//! * `simulate` — generate a synthetic target and compare task-assignment
//!   modes on it.
//! * `replay` — replay one trace against an allowlist and report the
//!   retention decision.
//!
//! Every subcommand is deterministic given identical inputs and `--seed`,
//! and all file outputs are byte-reproducible. Errors print a single
//! machine-greppable line `error: <code>: <message>` on stderr; exit code 1
//! means invalid input, 2 means an I/O failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Deserialize;

use crate::callgraph::{CallGraph, GraphError, KatzParams, LoadedGraph};
use crate::coverage::{bitmap_from_bytes, retain_decision, CoverageMap, ExecutionTrace};
use crate::orchestrator::{
    self, exec::ExecBackend, exec::ExecBackendConfig, run_campaign, Algorithm, CampaignConfig,
    CampaignError, TaskMode,
};
use crate::partition::{
    fennel_partition, hdrf_partition, metrics_line, plan_metrics, random_partition, FennelParams,
    HdrfParams, PartitionError,
};
use crate::scoring::{self, parse_coverage_report, score_tsv, ScoreError};
use crate::sim::{
    generate_program, run_comparison, ComparisonMode, SimBackend, SimModelParams, SimProgram,
};

/// Optional TOML configuration shared by all subcommands; flags override it.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub epsilon: Option<f64>,
    pub katz: KatzParams,
    pub fennel: FennelParams,
    pub hdrf: HdrfParams,
    pub sim: SimModelParams,
}

#[derive(Parser, Debug)]
#[command(
    name = "fuzzpart",
    about = "Dynamic task allocation for parallel fuzzing",
    version
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOptions,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalOptions {
    /// TOML config file with algorithm parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory all outputs land under.
    #[arg(long, global = true, default_value = "fuzzpart-out")]
    pub out: PathBuf,
    /// Increase stderr chatter (-v, -vv).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score every function of a call graph and print a TSV ranking.
    Score {
        /// Graph file (JSON).
        #[arg(long)]
        graph: PathBuf,
        /// Coverage report applied as current coverage.
        #[arg(long)]
        coverage: Option<PathBuf>,
        /// Coverage report applied as the previous cycle's snapshot.
        #[arg(long)]
        prev_coverage: Option<PathBuf>,
    },
    /// Partition a scored graph and emit one allowlist file per partition.
    Partition {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        coverage: Option<PathBuf>,
        /// fennel, hdrf, or random.
        #[arg(long)]
        algo: String,
        /// Number of partitions (worker instances).
        #[arg(long)]
        k: usize,
        /// Fennel load exponent.
        #[arg(long)]
        gamma: Option<f64>,
        /// HDRF balance weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// Fennel balance slack.
        #[arg(long)]
        slack: Option<f64>,
    },
    /// Run the campaign loop against a fuzzing backend.
    Campaign {
        #[arg(long)]
        graph: PathBuf,
        /// Initial corpus directory (exec backend).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Total instances including the monitor.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Units between repartitioning rounds.
        #[arg(long, default_value_t = 1000)]
        interval: u64,
        /// Units of fully-instrumented warmup.
        #[arg(long, default_value_t = 500)]
        warmup: u64,
        /// Total campaign budget in units.
        #[arg(long, default_value_t = 4000)]
        duration: u64,
        /// Coverage sampling period (0 = phase boundaries only).
        #[arg(long, default_value_t = 0)]
        sample_every: u64,
        #[arg(long, default_value = "fennel")]
        algo: String,
        /// sim or exec.
        #[arg(long, default_value = "sim")]
        backend: String,
        /// Exec backend: worker command; {allowlist}, {dir}, {seeds}
        /// placeholders.
        #[arg(long)]
        fuzz_cmd: Option<String>,
        /// Exec backend: profiling command; {seed} placeholder, prints an
        /// execution trace.
        #[arg(long)]
        profile_cmd: Option<String>,
        /// Exec backend: coverage command; {seed} placeholder, prints a
        /// coverage report.
        #[arg(long)]
        coverage_cmd: Option<String>,
        /// Exec backend: file listing every function with at least one
        /// basic block.
        #[arg(long)]
        function_list: Option<PathBuf>,
    },
    /// Generate a synthetic target and compare task-assignment modes.
    Simulate {
        /// Number of functions to generate.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Power-law exponent of the generator, in [2, 3.5].
        #[arg(long, default_value_t = 2.5)]
        exponent: f64,
        /// Load an existing program file instead of generating.
        #[arg(long)]
        program: Option<PathBuf>,
        /// Number of workers.
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Total simulated ticks.
        #[arg(long, default_value_t = 20000)]
        ticks: u64,
        /// Ticks between repartitioning rounds.
        #[arg(long, default_value_t = 4000)]
        interval_ticks: u64,
        /// Warmup ticks (default: half an interval).
        #[arg(long)]
        warmup_ticks: Option<u64>,
        #[arg(long, default_value = "fennel")]
        algo: String,
        /// partitioned, shared, or both.
        #[arg(long, default_value = "both")]
        mode: String,
    },
    /// Replay a trace against an allowlist and print the retention decision.
    Replay {
        /// Trace file (E/X/B lines).
        #[arg(long)]
        trace: PathBuf,
        /// Allowlist file naming the instrumented functions.
        #[arg(long)]
        allowlist: PathBuf,
        /// Call-chain context depth.
        #[arg(long, default_value_t = 0)]
        depth: usize,
        /// Accumulate into an existing 8192-byte bitmap dump.
        #[arg(long)]
        map_in: Option<PathBuf>,
        /// Write the resulting bitmap dump.
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
}

/// CLI-level error with its exit code semantics.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad input or configuration.
    Validation { code: &'static str, message: String },
    /// Exit 2: I/O failure.
    Io { message: String },
}

impl CliError {
    fn validation(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Validation {
            code,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Io { .. } => 2,
        }
    }

    pub fn render(&self) -> String {
        match self {
            CliError::Validation { code, message } => format!("error: {code}: {message}"),
            CliError::Io { message } => format!("error: io: {message}"),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(err: GraphError) -> Self {
        CliError::validation("graph", err.to_string())
    }
}

impl From<ScoreError> for CliError {
    fn from(err: ScoreError) -> Self {
        CliError::validation("score", err.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(err: PartitionError) -> Self {
        let code = match err {
            PartitionError::InvalidK | PartitionError::KExceedsVertices { .. } => "invalid-k",
            _ => "partition",
        };
        CliError::validation(code, err.to_string())
    }
}

impl From<CampaignError> for CliError {
    fn from(err: CampaignError) -> Self {
        match err {
            CampaignError::Io { path, source } => CliError::Io {
                message: format!("{}: {source}", path.display()),
            },
            CampaignError::Backend(orchestrator::BackendError::Io { path, source }) => {
                CliError::Io {
                    message: format!("{}: {source}", path.display()),
                }
            }
            other => CliError::validation("campaign", other.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        message: format!("{}: {e}", path.display()),
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io {
            message: format!("{}: {e}", parent.display()),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        message: format!("{}: {e}", path.display()),
    })
}

fn load_config(global: &GlobalOptions) -> Result<AppConfig, CliError> {
    match &global.config {
        None => Ok(AppConfig::default()),
        Some(path) => {
            let text = read_file(path)?;
            toml::from_str(&text)
                .map_err(|e| CliError::validation("config", format!("{}: {e}", path.display())))
        }
    }
}

fn load_graph(path: &Path, verbose: u8) -> Result<CallGraph, CliError> {
    let text = read_file(path)?;
    let LoadedGraph { graph, warnings } = CallGraph::parse(&text)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if verbose > 0 {
        eprintln!(
            "info: loaded {} functions, {} edges from {}",
            graph.len(),
            graph.edge_count(),
            path.display()
        );
    }
    Ok(graph)
}

fn apply_coverage(graph: &mut CallGraph, path: &Path, previous: bool) -> Result<(), CliError> {
    let text = read_file(path)?;
    let report = parse_coverage_report(&text)?;
    for (name, counts) in report {
        let id = graph.intern(&name)?;
        let stats = graph.stats_mut(id);
        if previous {
            stats.lines_covered_pre = counts.covered;
        } else {
            stats.lines_covered_cur = counts.covered;
        }
        stats.lines_total = stats.lines_total.max(counts.total);
    }
    Ok(())
}

fn scored_graph(
    graph_path: &Path,
    coverage: Option<&PathBuf>,
    prev_coverage: Option<&PathBuf>,
    config: &AppConfig,
    verbose: u8,
) -> Result<(CallGraph, scoring::ScoreTable), CliError> {
    let mut graph = load_graph(graph_path, verbose)?;
    if let Some(path) = coverage {
        apply_coverage(&mut graph, path, false)?;
    }
    if let Some(path) = prev_coverage {
        apply_coverage(&mut graph, path, true)?;
    }
    graph.compute_katz(&config.katz)?;
    let epsilon = config.epsilon.unwrap_or(scoring::DEFAULT_EPSILON);
    let table = scoring::score(&mut graph, epsilon)?;
    Ok((graph, table))
}

fn parse_algo(name: &str) -> Result<Algorithm, CliError> {
    name.parse::<Algorithm>()
        .map_err(|m| CliError::validation("invalid-algo", m))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.global)?;
    match cli.command {
        Command::Score {
            graph,
            coverage,
            prev_coverage,
        } => {
            let (graph, table) = scored_graph(
                &graph,
                coverage.as_ref(),
                prev_coverage.as_ref(),
                &config,
                cli.global.verbose,
            )?;
            print!("{}", score_tsv(&graph, &table));
            Ok(())
        }
        Command::Partition {
            graph,
            coverage,
            algo,
            k,
            gamma,
            lambda,
            slack,
        } => {
            if k == 0 {
                return Err(CliError::validation("invalid-k", "k must be at least 1"));
            }
            let algo = parse_algo(&algo)?;
            let (graph, table) =
                scored_graph(&graph, coverage.as_ref(), None, &config, cli.global.verbose)?;
            let mut fennel = config.fennel;
            if let Some(g) = gamma {
                fennel.gamma = g;
            }
            if let Some(s) = slack {
                fennel.slack = s;
            }
            let mut hdrf = config.hdrf;
            if let Some(l) = lambda {
                hdrf.lambda = l;
            }
            let plan = match algo {
                Algorithm::Fennel => fennel_partition(&graph, &table.scores, k, &fennel)?,
                Algorithm::Hdrf => hdrf_partition(&graph, &table.scores, k, &hdrf)?,
                Algorithm::Random => random_partition(&graph, k, cli.global.seed)?,
            };
            let metrics = plan_metrics(&plan, &graph)?;
            orchestrator::emit_allowlists(
                &plan.members,
                &[],
                graph.entry(),
                &graph,
                &cli.global.out,
            )?;
            println!("{}", metrics_line(&algo.to_string(), k, &metrics));
            Ok(())
        }
        Command::Campaign {
            graph,
            corpus,
            k,
            interval,
            warmup,
            duration,
            sample_every,
            algo,
            backend,
            fuzz_cmd,
            profile_cmd,
            coverage_cmd,
            function_list,
        } => {
            if k < 2 {
                return Err(CliError::validation(
                    "invalid-k",
                    "campaign needs k >= 2 (one monitor plus at least one worker)",
                ));
            }
            if interval == 0 {
                return Err(CliError::validation(
                    "invalid-interval",
                    "interval must be positive",
                ));
            }
            let algo = parse_algo(&algo)?;
            let campaign_config = CampaignConfig {
                k_total: k,
                interval,
                warmup,
                duration,
                sample_every,
                mode: TaskMode::Partitioned(algo),
                fennel: config.fennel,
                hdrf: config.hdrf,
                katz: config.katz.clone(),
                epsilon: config.epsilon.unwrap_or(scoring::DEFAULT_EPSILON),
                rng_seed: cli.global.seed,
                out_dir: Some(cli.global.out.clone()),
            };
            let graph_text = read_file(&graph)?;
            let report = match backend.as_str() {
                "sim" => {
                    let program = SimProgram::parse(&graph_text, cli.global.seed)
                        .map_err(|e| CliError::validation("graph", e.to_string()))?;
                    let mut backend = SimBackend::new(program.clone(), cli.global.seed, config.sim);
                    let (report, _) =
                        run_campaign(&campaign_config, program.graph.clone(), &mut backend)?;
                    report
                }
                "exec" => {
                    let missing = |flag: &str| {
                        CliError::validation(
                            "missing-flag",
                            format!("exec backend requires {flag}"),
                        )
                    };
                    let corpus = corpus.ok_or_else(|| missing("--corpus"))?;
                    let exec_config = ExecBackendConfig {
                        fuzz_cmd: fuzz_cmd.ok_or_else(|| missing("--fuzz-cmd"))?,
                        profile_cmd: profile_cmd.ok_or_else(|| missing("--profile-cmd"))?,
                        coverage_cmd: coverage_cmd.ok_or_else(|| missing("--coverage-cmd"))?,
                        function_list,
                        corpus_dir: corpus,
                        work_dir: cli.global.out.join("work"),
                    };
                    let loaded = CallGraph::parse(&graph_text)?;
                    for w in &loaded.warnings {
                        eprintln!("warning: {w}");
                    }
                    let mut backend =
                        ExecBackend::new(exec_config).map_err(CampaignError::Backend)?;
                    let (report, _) = run_campaign(&campaign_config, loaded.graph, &mut backend)?;
                    report
                }
                other => {
                    return Err(CliError::validation(
                        "invalid-backend",
                        format!("unknown backend `{other}` (expected sim or exec)"),
                    ))
                }
            };
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_file(&cli.global.out.join("coverage.csv"), report.coverage_csv())?;
            write_file(&cli.global.out.join("cycles.csv"), report.cycles_csv(true))?;
            println!(
                "cycles={} repartition_fraction={}",
                report.cycles.len(),
                crate::util::fmt_sig9(report.repartition_fraction())
            );
            Ok(())
        }
        Command::Simulate {
            n,
            exponent,
            program,
            k,
            ticks,
            interval_ticks,
            warmup_ticks,
            algo,
            mode,
        } => {
            if k == 0 {
                return Err(CliError::validation("invalid-k", "k must be at least 1"));
            }
            let algo = parse_algo(&algo)?;
            let program = match program {
                Some(path) => SimProgram::parse(&read_file(&path)?, cli.global.seed)
                    .map_err(|e| CliError::validation("program", e.to_string()))?,
                None => generate_program(n, exponent, cli.global.seed, &config.sim)
                    .map_err(|e| CliError::validation("generate", e.to_string()))?,
            };
            let modes: Vec<ComparisonMode> = match mode.as_str() {
                "partitioned" => vec![ComparisonMode::Partitioned(algo)],
                "shared" => vec![ComparisonMode::Shared],
                "both" => vec![ComparisonMode::Partitioned(algo), ComparisonMode::Shared],
                other => {
                    return Err(CliError::validation(
                        "invalid-mode",
                        format!("unknown mode `{other}` (expected partitioned, shared, or both)"),
                    ))
                }
            };
            let campaign_config = CampaignConfig {
                k_total: k + 1,
                interval: interval_ticks,
                warmup: warmup_ticks.unwrap_or(interval_ticks / 2),
                duration: ticks,
                sample_every: interval_ticks,
                mode: TaskMode::Partitioned(algo),
                fennel: config.fennel,
                hdrf: config.hdrf,
                katz: config.katz.clone(),
                epsilon: config.epsilon.unwrap_or(scoring::DEFAULT_EPSILON),
                rng_seed: cli.global.seed,
                out_dir: Some(cli.global.out.clone()),
            };
            write_file(&cli.global.out.join("program.json"), program.to_json())?;
            let report = run_comparison(&program, &campaign_config, &config.sim, &modes)?;
            write_file(&cli.global.out.join("coverage.csv"), report.coverage_csv())?;
            write_file(&cli.global.out.join("overlap.csv"), report.overlap_csv())?;
            for run in &report.runs {
                println!(
                    "mode={} union_covered={} mean_overlap={}",
                    run.label,
                    run.final_union,
                    crate::util::fmt_sig9(run.mean_overlap())
                );
            }
            Ok(())
        }
        Command::Replay {
            trace,
            allowlist,
            depth,
            map_in,
            map_out,
        } => {
            let trace = ExecutionTrace::parse(&read_file(&trace)?)
                .map_err(|e| CliError::validation("trace", e.to_string()))?;
            let names: BTreeSet<String> = orchestrator::parse_allowlist(&read_file(&allowlist)?)
                .map_err(|e| CliError::validation("allowlist", e))?;
            let mut map = CoverageMap::new(names, depth);
            if let Some(path) = map_in {
                let bytes = std::fs::read(&path).map_err(|e| CliError::Io {
                    message: format!("{}: {e}", path.display()),
                })?;
                let loaded =
                    bitmap_from_bytes(&bytes).map_err(|e| CliError::validation("bitmap", e))?;
                map.load_bytes(&loaded);
            }
            let outcome = map
                .replay(&trace)
                .map_err(|e| CliError::validation("trace", e.to_string()))?;
            if let Some(path) = map_out {
                write_file(&path, &map.to_bytes()[..])?;
            }
            println!(
                "new_bits={} retained={}",
                outcome.new_bits,
                retain_decision(&outcome)
            );
            Ok(())
        }
    }
}

/// Parse and execute; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let requested = matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            // clap renders help to stdout and errors (with usage) to stderr.
            let _ = err.print();
            return if requested { 0 } else { 1 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.render());
            err.exit_code()
        }
    }
}

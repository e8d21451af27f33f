//! End-to-end campaign against the external-process backend, with tiny
//! shell stubs standing in for the fuzzer, profiler, and coverage runner.

mod common;

use std::fs;

use fuzzpart::callgraph::CallGraph;
use fuzzpart::orchestrator::{
    exec::{ExecBackend, ExecBackendConfig},
    run_campaign, Algorithm, CampaignConfig, TaskMode,
};

const GRAPH: &str = r#"{
    "entry": "main",
    "functions": [
        {"name": "main", "lines": 10},
        {"name": "parse", "lines": 40},
        {"name": "emit", "lines": 25}
    ],
    "edges": [["main", "parse"], ["parse", "emit"]]
}"#;

#[test]
fn exec_campaign_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let corpus = root.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    fs::write(corpus.join("id:000000,time:0"), b"seed-zero").unwrap();

    // Every seed profiles to the same linear trace and coverage report;
    // enough to drive the loop.
    let trace = root.join("trace.txt");
    fs::write(
        &trace,
        "E main\nB main 1\nE parse\nB parse 2\nE emit\nB emit 3\nX emit\nX parse\nX main\n",
    )
    .unwrap();
    let cov = root.join("cov.tsv");
    fs::write(&cov, "main\t4\t10\nparse\t12\t40\nemit\t5\t25\n").unwrap();
    let funcs = root.join("functions.txt");
    fs::write(&funcs, "main\nparse\nemit\nhidden_handler\n").unwrap();

    // The stub "fuzzer" drops one new queue entry and exits.
    let config = ExecBackendConfig {
        fuzz_cmd:
            "mkdir -p {dir}/queue && printf 'found-by-worker' > '{dir}/queue/id:000001,time:70'"
                .to_string(),
        profile_cmd: format!("cat {}", trace.display()),
        coverage_cmd: format!("cat {}", cov.display()),
        function_list: Some(funcs.clone()),
        corpus_dir: corpus,
        work_dir: root.join("work"),
    };
    let mut backend = ExecBackend::new(config).unwrap();

    let campaign = CampaignConfig {
        k_total: 2,
        interval: 1,
        warmup: 0,
        duration: 1,
        mode: TaskMode::Partitioned(Algorithm::Fennel),
        out_dir: Some(root.join("out")),
        ..CampaignConfig::default()
    };
    let graph = CallGraph::parse(GRAPH).unwrap().graph;
    let (report, state) = run_campaign(&campaign, graph, &mut backend).unwrap();

    assert_eq!(report.cycles.len(), 1);
    // Corpus seed plus the worker's discovery, deduplicated by content.
    assert_eq!(report.cycles[0].new_seeds, 2);
    // The function list introduced an orphan the static graph never saw.
    assert_eq!(report.cycles[0].orphans, 1);
    assert!(state.graph.id_of("hidden_handler").is_some());
    // Coverage folded from the replays.
    let parse_fn = state.graph.id_of("parse").unwrap();
    assert_eq!(state.graph.stats(parse_fn).lines_covered_cur, 12);

    // The worker discovery was mirrored into the monitor queue.
    let monitor_queue = root.join("work").join("monitor").join("queue");
    let mirrored: Vec<String> = fs::read_dir(&monitor_queue)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(mirrored.len(), 2, "mirror: {mirrored:?}");

    // Allowlists for the repartitioned cycle exist and include the orphan.
    let cycle_dir = root.join("out").join("cycle_001");
    let allowlist = fs::read_to_string(cycle_dir.join("allowlist_000.txt")).unwrap();
    assert!(allowlist.contains("fun: hidden_handler"));
    assert!(allowlist.contains("fun: main"));
}

/// Profilers that emit bare `caller<TAB>callee` pairs drive graph updates
/// just as well as full event traces.
#[test]
fn pair_format_profiler_output_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    fs::write(corpus.join("id:000000,time:0"), b"seed").unwrap();

    let pairs = root.join("pairs.txt");
    fs::write(&pairs, "# dynamic calls\nmain\tparse\nparse\tnew_fn\n").unwrap();
    let cov = root.join("cov.tsv");
    fs::write(&cov, "main\t2\t10\n").unwrap();

    let config = ExecBackendConfig {
        fuzz_cmd: "true".to_string(),
        profile_cmd: format!("cat {}", pairs.display()),
        coverage_cmd: format!("cat {}", cov.display()),
        function_list: None,
        corpus_dir: corpus,
        work_dir: root.join("work"),
    };
    let mut backend = ExecBackend::new(config).unwrap();
    let campaign = CampaignConfig {
        k_total: 2,
        interval: 1,
        warmup: 0,
        duration: 1,
        mode: TaskMode::Partitioned(Algorithm::Fennel),
        out_dir: None,
        ..CampaignConfig::default()
    };
    let graph = CallGraph::parse(GRAPH).unwrap().graph;
    let (_, state) = run_campaign(&campaign, graph, &mut backend).unwrap();
    // The pair file revealed a callee the static graph never declared.
    assert!(state.graph.id_of("new_fn").is_some());
    assert!(state.graph.has_edge(
        state.graph.id_of("parse").unwrap(),
        state.graph.id_of("new_fn").unwrap()
    ));
}

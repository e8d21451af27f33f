//! Paired campaign comparisons: partitioned against shared, or algorithm
//! against algorithm, on the same program with the same random streams.

use std::fmt::Write as _;

use crate::orchestrator::{
    run_campaign, Algorithm, CampaignConfig, CampaignError, CampaignReport, TaskMode,
};

use super::{SimBackend, SimModelParams, SimProgram};

/// A mode of the comparison harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonMode {
    Partitioned(Algorithm),
    /// Every worker sees the whole function set.
    Shared,
}

impl ComparisonMode {
    pub fn label(&self) -> String {
        match self {
            ComparisonMode::Partitioned(algo) => algo.to_string(),
            ComparisonMode::Shared => "shared".to_string(),
        }
    }

    fn task_mode(&self) -> TaskMode {
        match self {
            ComparisonMode::Partitioned(algo) => TaskMode::Partitioned(*algo),
            ComparisonMode::Shared => TaskMode::Shared,
        }
    }
}

/// Result of one mode's campaign.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub label: String,
    pub report: CampaignReport,
    /// Mean pairwise Jaccard of per-instance covered-function sets, one
    /// sample per stop-the-world boundary.
    pub overlap: Vec<f64>,
    pub final_union: u64,
}

impl ModeRun {
    pub fn mean_overlap(&self) -> f64 {
        if self.overlap.is_empty() {
            return 0.0;
        }
        self.overlap.iter().sum::<f64>() / self.overlap.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub runs: Vec<ModeRun>,
}

impl ComparisonReport {
    pub fn run(&self, label: &str) -> Option<&ModeRun> {
        self.runs.iter().find(|r| r.label == label)
    }

    /// `mode,time,instance,branches_or_lines_covered,union_covered` rows.
    pub fn coverage_csv(&self) -> String {
        let mut out = String::from("mode,time,instance,branches_or_lines_covered,union_covered\n");
        for run in &self.runs {
            for row in &run.report.coverage {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    run.label, row.time, row.instance, row.covered, row.union
                );
            }
        }
        out
    }

    /// `mode,sample,mean_jaccard` rows, one sample per cycle boundary.
    pub fn overlap_csv(&self) -> String {
        let mut out = String::from("mode,sample,mean_jaccard\n");
        for run in &self.runs {
            for (i, j) in run.overlap.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", run.label, i, crate::util::fmt_sig9(*j));
            }
        }
        out
    }
}

/// Run the same campaign configuration under several task-assignment modes,
/// pairing the random streams so the only difference between runs is the
/// allowlists the workers receive.
pub fn run_comparison(
    program: &SimProgram,
    config: &CampaignConfig,
    model: &SimModelParams,
    modes: &[ComparisonMode],
) -> Result<ComparisonReport, CampaignError> {
    let mut runs = Vec::with_capacity(modes.len());
    for mode in modes {
        let mut mode_config = config.clone();
        mode_config.mode = mode.task_mode();
        if let Some(dir) = &mode_config.out_dir {
            mode_config.out_dir = Some(dir.join(mode.label()));
        }
        let mut backend = SimBackend::new(program.clone(), mode_config.rng_seed, *model);
        let (report, _state) = run_campaign(&mode_config, program.graph.clone(), &mut backend)?;
        runs.push(ModeRun {
            label: mode.label(),
            final_union: backend.union_covered(),
            overlap: backend.overlap_series.clone(),
            report,
        });
    }
    Ok(ComparisonReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate_program;

    fn small_config(k_workers: usize) -> CampaignConfig {
        CampaignConfig {
            k_total: k_workers + 1,
            interval: 300,
            warmup: 150,
            duration: 1200,
            sample_every: 0,
            rng_seed: 4242,
            ..CampaignConfig::default()
        }
    }

    #[test]
    fn single_worker_modes_coincide() {
        // With one worker the fennel allowlist is the whole vertex set, so
        // partitioned and shared campaigns are the same process.
        let program = generate_program(30, 2.5, 9, &SimModelParams::default()).unwrap();
        let report = run_comparison(
            &program,
            &small_config(1),
            &SimModelParams::default(),
            &[
                ComparisonMode::Partitioned(Algorithm::Fennel),
                ComparisonMode::Shared,
            ],
        )
        .unwrap();
        let fennel = report.run("fennel").unwrap();
        let shared = report.run("shared").unwrap();
        assert_eq!(fennel.final_union, shared.final_union);
        assert_eq!(fennel.report.coverage, shared.report.coverage);
    }

    #[test]
    fn comparison_is_deterministic() {
        let program = generate_program(40, 2.5, 10, &SimModelParams::default()).unwrap();
        let once = run_comparison(
            &program,
            &small_config(2),
            &SimModelParams::default(),
            &[ComparisonMode::Partitioned(Algorithm::Fennel)],
        )
        .unwrap();
        let twice = run_comparison(
            &program,
            &small_config(2),
            &SimModelParams::default(),
            &[ComparisonMode::Partitioned(Algorithm::Fennel)],
        )
        .unwrap();
        assert_eq!(once.coverage_csv(), twice.coverage_csv());
        assert_eq!(once.overlap_csv(), twice.overlap_csv());
    }

    #[test]
    fn union_coverage_is_monotone() {
        let program = generate_program(40, 2.5, 12, &SimModelParams::default()).unwrap();
        let report = run_comparison(
            &program,
            &small_config(2),
            &SimModelParams::default(),
            &[ComparisonMode::Shared],
        )
        .unwrap();
        let rows = &report.runs[0].report.coverage;
        let mut last_union = 0;
        for row in rows {
            assert!(row.union >= last_union, "union series must not decrease");
            last_union = row.union;
        }
    }

    #[test]
    fn union_coverage_is_conserved_and_reachable() {
        // Two functions, difficulty 1: every line falls quickly, and the
        // union can never exceed the program's total line count.
        let mut g = crate::callgraph::CallGraph::new("main").unwrap();
        g.merge_dynamic_edges(&[("main", "leaf")]).unwrap();
        g.stats_mut(crate::callgraph::FunctionId(0)).lines_total = 3;
        g.stats_mut(crate::callgraph::FunctionId(1)).lines_total = 2;
        let program = SimProgram::from_parts_for_tests(g, vec![1.0, 1.0], 1.0);
        let report = run_comparison(
            &program,
            &small_config(1),
            &SimModelParams::default(),
            &[ComparisonMode::Shared],
        )
        .unwrap();
        let run = &report.runs[0];
        assert!(run.final_union <= program.total_lines());
        assert_eq!(
            run.final_union,
            program.total_lines(),
            "difficulty-1 program must saturate"
        );
    }
}

//! Dynamic task allocation for parallel fuzzing.
//!
//! `fuzzpart` splits a program's function call graph into per-instance
//! fuzzing tasks and keeps those tasks fresh while a campaign runs. The
//! pipeline is:
//!
//! 1. [`callgraph`] — build and refine the call graph from graph files,
//!    dynamic call traces, and function lists; compute Katz centrality.
//! 2. [`scoring`] — turn per-function coverage counters into an
//!    entropy-weighted score that ranks functions by fuzzing potential.
//! 3. [`partition`] — split the scored graph into `k` tasks with Fennel
//!    (vertex), HDRF (edge), or a random baseline.
//! 4. [`coverage`] — the per-instance coverage bitmap with bounded
//!    call-chain context, used to decide which test cases an instance keeps.
//! 5. [`orchestrator`] — the campaign loop: warmup, periodic stop-the-world
//!    repartitioning, allowlist emission, and seed-queue bookkeeping over a
//!    pluggable fuzzing backend.
//! 6. [`sim`] — a deterministic simulated backend and comparison harness
//!    for desk-scale experiments.
//!
//! The `fuzzpart` binary exposes all of this as subcommands; see [`cli`].

pub mod callgraph;
pub mod cli;
pub mod coverage;
pub mod orchestrator;
pub mod partition;
pub mod rng;
pub mod scoring;
pub mod sim;
pub mod util;

// The guide's code listings double as doc-tests so `cargo test --doc`
// keeps the book in sync with the crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/callgraph.md")]
    mod callgraph {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    mod partitioning {}
    #[doc = include_str!("../../../book/src/coverage.md")]
    mod coverage {}
    #[doc = include_str!("../../../book/src/campaign.md")]
    mod campaign {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

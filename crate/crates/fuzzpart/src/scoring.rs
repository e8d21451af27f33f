//! Entropy-weighted function scoring.
//!
//! Each function gets a four-signal feature vector:
//!
//! * residual coverage — lines not yet covered, `L_total - L_cov_cur`;
//! * recent gain — lines newly covered since the last cycle,
//!   `L_cov_cur - L_cov_pre`;
//! * exploration penalty — `exp(-0.3 * stagnation_cycles)`, decaying the
//!   appeal of functions that have stopped yielding coverage;
//! * structural importance — Katz centrality.
//!
//! Features are min-max normalized per column, weighted by information gain
//! (one minus normalized Shannon entropy of the column's value
//! distribution), and summed. Columns that do not discriminate between
//! functions contribute nothing; columns that single out a few functions
//! dominate. No hand-tuned weights anywhere.
//!
//! All functions here are pure over graph snapshots and safe to call
//! concurrently.

use std::collections::HashMap;

use thiserror::Error;

use crate::callgraph::{CallGraph, FunctionId};
use crate::util::fmt_sig9;

/// Number of feature columns.
pub const FEATURES: usize = 4;

/// Decay rate of the stagnation penalty.
pub const PENALTY_DECAY: f64 = 0.3;

/// Default numerical-stability constant used in every place the weighting
/// formulas need one: the share denominator, the log argument, and the
/// weight denominator.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// If every column's information gain falls at or below this threshold, the
/// weighting falls back to uniform weights instead of dividing a vector of
/// near-zeros by its own near-zero sum.
pub const UNIFORM_FALLBACK_GAIN: f64 = 1e-9;

/// Raw per-function feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub residual: f64,
    pub recent_gain: f64,
    pub penalty: f64,
    pub katz: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; FEATURES] {
        [self.residual, self.recent_gain, self.penalty, self.katz]
    }
}

/// Everything the scoring pass produced, kept around for reporting and
/// debugging: raw and normalized features, per-column entropies, the weight
/// vector, and the final scores (indexed by function).
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub raw: Vec<FeatureVector>,
    pub normalized: Vec<[f64; FEATURES]>,
    pub entropies: [f64; FEATURES],
    pub weights: [f64; FEATURES],
    pub scores: Vec<f64>,
    pub epsilon: f64,
}

impl ScoreTable {
    pub fn score(&self, id: FunctionId) -> f64 {
        self.scores[id.index()]
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("function `{0}` has no katz centrality; compute centrality before scoring")]
    MissingKatz(String),
    #[error("entropy weighting needs at least 2 functions, got {0}")]
    TooFewFunctions(usize),
    #[error("coverage report line {line}: {message}")]
    BadCoverageReport { line: usize, message: String },
}

/// Extract the raw feature vector for every function. Fails if centrality
/// has not been computed for the current graph shape.
pub fn extract_features(g: &CallGraph) -> Result<Vec<FeatureVector>, ScoreError> {
    g.ids()
        .map(|id| {
            let s = g.stats(id);
            let katz = s
                .katz
                .ok_or_else(|| ScoreError::MissingKatz(g.name(id).to_string()))?;
            Ok(FeatureVector {
                residual: s.lines_total.saturating_sub(s.lines_covered_cur) as f64,
                recent_gain: s.lines_covered_cur.saturating_sub(s.lines_covered_pre) as f64,
                penalty: (-PENALTY_DECAY * s.stagnation_cycles as f64).exp(),
                katz,
            })
        })
        .collect()
}

/// Min-max normalize each column into `[0, 1]`. A constant column maps to
/// all zeros, so a feature that does not discriminate between functions
/// provably contributes nothing to any score.
pub fn normalize(features: &[FeatureVector]) -> Vec<[f64; FEATURES]> {
    let mut lo = [f64::INFINITY; FEATURES];
    let mut hi = [f64::NEG_INFINITY; FEATURES];
    for f in features {
        for (j, x) in f.as_array().into_iter().enumerate() {
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    features
        .iter()
        .map(|f| {
            let mut row = [0.0; FEATURES];
            for (j, x) in f.as_array().into_iter().enumerate() {
                let span = hi[j] - lo[j];
                row[j] = if span > 0.0 { (x - lo[j]) / span } else { 0.0 };
            }
            row
        })
        .collect()
}

/// Entropy-based column weights over a normalized matrix.
///
/// For column `j`: shares `p_vj = x_vj / (sum_v x_vj + eps)`, normalized
/// entropy `H_j = -(1/ln|V|) * sum_v p_vj * ln(p_vj + eps)`, information
/// gain `1 - H_j` clamped at zero (the epsilon inside the log can push `H_j`
/// marginally above one), and `w_j = gain_j / (sum_k gain_k + eps)`.
/// If no column carries information, weights fall back to uniform.
pub fn entropy_weights(
    normalized: &[[f64; FEATURES]],
    epsilon: f64,
) -> Result<([f64; FEATURES], [f64; FEATURES]), ScoreError> {
    let n = normalized.len();
    if n < 2 {
        return Err(ScoreError::TooFewFunctions(n));
    }
    let ln_n = (n as f64).ln();
    let mut entropies = [0.0; FEATURES];
    let mut gains = [0.0; FEATURES];
    for j in 0..FEATURES {
        let total: f64 = normalized.iter().map(|row| row[j]).sum();
        let mut h = 0.0;
        for row in normalized {
            let p = row[j] / (total + epsilon);
            if p > 0.0 {
                h += p * (p + epsilon).ln();
            }
        }
        entropies[j] = -h / ln_n;
        gains[j] = (1.0 - entropies[j]).max(0.0);
    }
    let weights = if gains.iter().all(|&g| g <= UNIFORM_FALLBACK_GAIN) {
        [1.0 / FEATURES as f64; FEATURES]
    } else {
        let total: f64 = gains.iter().sum();
        gains.map(|g| g / (total + epsilon))
    };
    Ok((entropies, weights))
}

/// Score every function: extract features, normalize, weight, and take the
/// weighted sum. Writes `s(v)` back into the graph's stats and returns the
/// full table. A single-function graph short-circuits to score 1.0.
pub fn score(g: &mut CallGraph, epsilon: f64) -> Result<ScoreTable, ScoreError> {
    let raw = extract_features(g)?;
    if raw.len() == 1 {
        g.stats_mut(FunctionId(0)).score = Some(1.0);
        return Ok(ScoreTable {
            normalized: vec![[0.0; FEATURES]],
            raw,
            entropies: [0.0; FEATURES],
            weights: [1.0 / FEATURES as f64; FEATURES],
            scores: vec![1.0],
            epsilon,
        });
    }
    let normalized = normalize(&raw);
    let (entropies, weights) = entropy_weights(&normalized, epsilon)?;
    let scores: Vec<f64> = normalized
        .iter()
        .map(|row| row.iter().zip(weights.iter()).map(|(x, w)| x * w).sum())
        .collect();
    for (idx, &s) in scores.iter().enumerate() {
        g.stats_mut(FunctionId(idx as u32)).score = Some(s);
    }
    Ok(ScoreTable {
        raw,
        normalized,
        entropies,
        weights,
        scores,
        epsilon,
    })
}

/// One entry of a coverage report: covered and total line counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageCounts {
    pub covered: u64,
    pub total: u64,
}

/// Parse a coverage report: `function<TAB>covered<TAB>total` per line, `#`
/// comments and blank lines ignored. Later lines for the same function win.
pub fn parse_coverage_report(text: &str) -> Result<HashMap<String, CoverageCounts>, ScoreError> {
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| ScoreError::BadCoverageReport {
            line: lineno + 1,
            message,
        };
        let mut fields = line.split('\t');
        let name = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("missing function name".into()))?;
        let covered: u64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing or invalid covered count".into()))?;
        let total: u64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing or invalid total count".into()))?;
        if covered > total {
            return Err(bad(format!("covered {covered} exceeds total {total}")));
        }
        out.insert(name.to_string(), CoverageCounts { covered, total });
    }
    Ok(out)
}

/// Render the score table as TSV, one function per line:
/// `function<TAB>residual<TAB>gain<TAB>penalty<TAB>katz<TAB>score`,
/// sorted by score descending with ties broken by name.
pub fn score_tsv(g: &CallGraph, table: &ScoreTable) -> String {
    let mut rows: Vec<(String, FeatureVector, f64)> = g
        .ids()
        .map(|id| {
            (
                g.name(id).to_string(),
                table.raw[id.index()],
                table.scores[id.index()],
            )
        })
        .collect();
    rows.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let mut out = String::new();
    for (name, f, s) in rows {
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\t{}\n",
            fmt_sig9(f.residual),
            fmt_sig9(f.recent_gain),
            fmt_sig9(f.penalty),
            fmt_sig9(f.katz),
            fmt_sig9(s)
        ));
    }
    out
}

//! Shared test oracles, written as independent straight-line code so they
//! can check the library without sharing its implementation paths.

#![allow(dead_code)]
// Index loops mirror the matrix math they implement.
#![allow(clippy::needless_range_loop)]

use fuzzpart::callgraph::CallGraph;
use fuzzpart::rng::SplitRng;

/// Direct Katz oracle: solve `(I - alpha * A^T) x = beta * 1` by Gaussian
/// elimination with partial pivoting, then L2-normalize.
pub fn katz_by_linear_solve(g: &CallGraph, alpha: f64, beta: f64) -> Vec<f64> {
    let n = g.len();
    // Dense system matrix and right-hand side.
    let mut m = vec![vec![0.0f64; n + 1]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
        row[n] = beta;
    }
    // x_v - alpha * sum_{(u,v) in E} x_u = beta  => coefficient -alpha at
    // column u of row v.
    for &(u, v) in g.edges() {
        m[v.index()][u.index()] -= alpha;
    }
    // Forward elimination.
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        assert!(m[col][col].abs() > 1e-12, "singular Katz system");
        for row in (col + 1)..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    // Back substitution.
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for col in (row + 1)..n {
            acc -= m[row][col] * x[col];
        }
        x[row] = acc / m[row][row];
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    x
}

/// Raw inputs to the scoring oracle, one row per function.
#[derive(Debug, Clone, Copy)]
pub struct RawStats {
    pub lines_total: u64,
    pub lines_covered_cur: u64,
    pub lines_covered_pre: u64,
    pub stagnation: u64,
    pub katz: f64,
}

/// Straight-line evaluation of the scoring formulas, independent of the
/// library: features, min-max normalization, share entropies (natural log),
/// clamped information gains with the uniform fallback, weighted sum.
pub fn scores_by_hand(rows: &[RawStats], epsilon: f64) -> Vec<f64> {
    let n = rows.len();
    assert!(n >= 2, "oracle covers the multi-function path");
    let features: Vec<[f64; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.lines_total.saturating_sub(r.lines_covered_cur) as f64,
                r.lines_covered_cur.saturating_sub(r.lines_covered_pre) as f64,
                (-0.3 * r.stagnation as f64).exp(),
                r.katz,
            ]
        })
        .collect();
    let mut normalized = vec![[0.0f64; 4]; n];
    for j in 0..4 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in &features {
            lo = lo.min(f[j]);
            hi = hi.max(f[j]);
        }
        for (v, f) in features.iter().enumerate() {
            normalized[v][j] = if hi > lo {
                (f[j] - lo) / (hi - lo)
            } else {
                0.0
            };
        }
    }
    let mut gains = [0.0f64; 4];
    for j in 0..4 {
        let mut column_sum = 0.0;
        for row in &normalized {
            column_sum += row[j];
        }
        let mut h = 0.0;
        for row in &normalized {
            let p = row[j] / (column_sum + epsilon);
            if p > 0.0 {
                h += p * (p + epsilon).ln();
            }
        }
        let entropy = -h / (n as f64).ln();
        gains[j] = (1.0 - entropy).max(0.0);
    }
    let weights = if gains.iter().all(|&g| g <= 1e-9) {
        [0.25f64; 4]
    } else {
        let total: f64 = gains.iter().sum();
        [
            gains[0] / (total + epsilon),
            gains[1] / (total + epsilon),
            gains[2] / (total + epsilon),
            gains[3] / (total + epsilon),
        ]
    };
    normalized
        .iter()
        .map(|row| row.iter().zip(weights.iter()).map(|(x, w)| x * w).sum())
        .collect()
}

/// Floyd-Warshall context-depth oracle: mean finite off-diagonal distance,
/// rounded half-up, clamped to [1, 16].
pub fn context_depth_by_floyd_warshall(g: &CallGraph) -> usize {
    let n = g.len();
    const INF: u64 = u64::MAX / 4;
    let mut dist = vec![vec![INF; n]; n];
    for i in 0..n {
        dist[i][i] = 0;
    }
    for &(u, v) in g.edges() {
        dist[u.index()][v.index()] = dist[u.index()][v.index()].min(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let through = dist[i][k] + dist[k][j];
                if through < dist[i][j] {
                    dist[i][j] = through;
                }
            }
        }
    }
    let mut total = 0u64;
    let mut pairs = 0u64;
    for (i, row) in dist.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            if i != j && d < INF {
                total += d;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return 1;
    }
    let mean = total as f64 / pairs as f64;
    ((mean + 0.5).floor() as usize).clamp(1, 16)
}

/// Seeded random digraph on `n` vertices ("f0" is the entry) with roughly
/// `edge_factor * n` random edges.
pub fn random_graph(n: usize, edge_factor: f64, seed: u64) -> CallGraph {
    let mut rng = SplitRng::new(seed);
    let mut g = CallGraph::new("f0").expect("entry");
    for i in 1..n {
        g.intern(&format!("f{i}")).unwrap();
    }
    let edges = (edge_factor * n as f64) as usize;
    let mut pairs = Vec::with_capacity(edges);
    for _ in 0..edges {
        let u = rng.index(n);
        let v = rng.index(n);
        pairs.push((format!("f{u}"), format!("f{v}")));
    }
    g.merge_dynamic_edges(&pairs).unwrap();
    g
}

/// Seeded random scores in `(0, 1]`, indexed by function.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitRng::new(seed ^ 0x5C0E);
    (0..n).map(|_| rng.range_f64(0.01, 1.0)).collect()
}

//! Matrix-reordering metrics. The ordering permutes rows and columns together.

use crate::error::{Result, VonError};
use crate::points::Ordering;

use super::MetricContext;

/// Moran's I of the reordered matrix with rook (4-neighbour) contiguity on cells.
fn morans_i_of(m: &[f64], n: usize, o: &Ordering, metric: &'static str) -> Result<f64> {
    if n < 2 {
        return Err(VonError::Domain(format!("Moran's I needs a matrix with n >= 2, got {n}")));
    }
    let first = m[0];
    if m.iter().all(|&v| v == first) {
        return Err(VonError::DegenerateMetric { metric, reason: "matrix cells have zero variance".into() });
    }
    let perm = o.as_slice();
    let cells = (n * n) as f64;
    let mean = m.iter().sum::<f64>() / cells;
    let z = |i: usize, j: usize| m[perm[i] * n + perm[j]] - mean;

    let mut denom = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = z(i, j);
            denom += c * c;
            if j + 1 < n {
                cross += c * z(i, j + 1);
            }
            if i + 1 < n {
                cross += c * z(i + 1, j);
            }
        }
    }
    // each undirected neighbour pair appears twice among directed pairs
    let cross = 2.0 * cross;
    let weight_total = (4 * n * (n - 1)) as f64;
    Ok(cells / weight_total * cross / denom)
}

pub fn morans_i_matrix(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let g = ctx.graphs_for("morans_i")?;
    if g.len() != 1 {
        return Err(VonError::Domain(format!("morans_i scores a single matrix, got {}", g.len())));
    }
    morans_i_of(g.matrix(0), g.n(), o, "morans_i")
}

/// Mean Moran's I over every matrix in the collection under one shared ordering.
pub fn morans_i_collection(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let g = ctx.graphs_for("morans_i_avg")?;
    let mut total = 0.0;
    for (t, m) in g.matrices().enumerate() {
        total += morans_i_of(m, g.n(), o, "morans_i_avg").map_err(|e| match e {
            VonError::DegenerateMetric { metric, reason } => {
                VonError::DegenerateMetric { metric, reason: format!("time step {t}: {reason}") }
            }
            other => other,
        })?;
    }
    Ok(total / g.len() as f64)
}

/// Undirected edges `u < v` where either `M[u][v]` or `M[v][u]` is nonzero.
fn edges(ctx: &MetricContext, metric: &'static str) -> Result<(usize, Vec<(usize, usize)>)> {
    let g = ctx.graphs_for(metric)?;
    if g.len() != 1 {
        return Err(VonError::Domain(format!("{metric} scores a single matrix, got {}", g.len())));
    }
    let n = g.n();
    let m = g.matrix(0);
    let mut out = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if m[u * n + v] != 0.0 || m[v * n + u] != 0.0 {
                out.push((u, v));
            }
        }
    }
    Ok((n, out))
}

pub fn linear_arrangement(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let (_, e) = edges(ctx, "la")?;
    let pos = o.positions();
    Ok(e.iter().map(|&(u, v)| pos[u].abs_diff(pos[v]) as f64).sum())
}

/// Sum over vertices of how far back (in position) their neighbourhood reaches.
pub fn profile(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let (n, e) = edges(ctx, "profile")?;
    let pos = o.positions();
    let mut reach: Vec<usize> = pos.clone();
    for &(u, v) in &e {
        reach[u] = reach[u].min(pos[v]);
        reach[v] = reach[v].min(pos[u]);
    }
    Ok((0..n).map(|v| (pos[v] - reach[v]) as f64).sum())
}

pub fn bandwidth(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let (_, e) = edges(ctx, "bandwidth")?;
    if e.is_empty() {
        return Err(VonError::DegenerateMetric { metric: "bandwidth", reason: "graph has no edges".into() });
    }
    let pos = o.positions();
    Ok(e.iter().map(|&(u, v)| pos[u].abs_diff(pos[v])).max().unwrap_or(0) as f64)
}

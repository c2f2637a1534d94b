use crate::error::{Result, VonError};
use crate::points::Ordering;

use super::{MetricContext, WeightMode};

/// Open path length: no closing edge back to the first point.
pub fn tsp_path_length(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let d = ctx.distances_for("tsp")?;
    Ok(o.as_slice().windows(2).map(|w| d.get(w[0], w[1])).sum())
}

/// 1D stress with items placed on integer slots `0..n` in the given order.
pub fn stress_1d(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let d = ctx.distances_for("stress")?;
    let n = d.n();
    if n < 2 {
        return Err(VonError::Domain(format!("stress needs at least 2 points, got {n}")));
    }
    let pos = o.positions();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = d.get(i, j);
            let w = match ctx.params.weight_mode {
                WeightMode::Unit => 1.0,
                WeightMode::InverseSquare if dij == 0.0 => continue,
                WeightMode::InverseSquare => 1.0 / (dij * dij),
            };
            let gap = (pos[i] as f64 - pos[j] as f64).abs() - dij;
            total += w * gap * gap;
        }
    }
    Ok(total)
}

/// `tr(K P^T L P)` with double-centered linear kernels on the points and on the grid.
///
/// With linear kernels the trace collapses to `|| sum_i g~(pos_i) x~_i ||^2`, where
/// `x~` are the centered points and `g~` the centered grid coordinates.
pub fn ks_objective(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let ps = ctx.points_for("ks")?;
    let n = ps.n();
    if n < 2 {
        return Err(VonError::Domain(format!("ks objective needs at least 2 points, got {n}")));
    }
    let grid: Vec<f64> = match &ctx.params.grid_positions {
        Some(g) if g.len() != n => {
            return Err(VonError::DimensionMismatch { what: "ks grid_positions".into(), expected: n, got: g.len() })
        }
        Some(g) => g.clone(),
        None => (0..n).map(|t| t as f64).collect(),
    };
    let gmean = grid.iter().sum::<f64>() / n as f64;
    let dim = ps.dim();
    let mut mean = vec![0.0; dim];
    for r in ps.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let pos = o.positions();
    let mut acc = vec![0.0; dim];
    for (i, r) in ps.rows().enumerate() {
        let g = grid[pos[i]] - gmean;
        for k in 0..dim {
            acc[k] += g * (r[k] - mean[k]);
        }
    }
    Ok(acc.iter().map(|a| a * a).sum())
}

/// Mean of `1 - |pearson|` over adjacent axis pairs; the ordering permutes columns.
pub fn adjacent_correlation(ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    let ps = ctx.points_for("adj_corr")?;
    let m = ps.dim();
    let records = ps.n();
    if m < 2 || records < 2 {
        return Err(VonError::Domain(format!(
            "adjacent correlation needs >= 2 axes and >= 2 records, got {m} axes, {records} records"
        )));
    }
    let mut centered = Vec::with_capacity(m);
    for j in 0..m {
        let col = ps.column(j);
        let mu = col.iter().sum::<f64>() / records as f64;
        let c: Vec<f64> = col.iter().map(|v| v - mu).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || col.iter().all(|&v| v == col[0]) {
            return Err(VonError::DegenerateMetric { metric: "adj_corr", reason: format!("axis {j} has zero variance") });
        }
        centered.push((c, norm));
    }
    let total: f64 = o
        .as_slice()
        .windows(2)
        .map(|w| {
            let (a, na) = &centered[w[0]];
            let (b, nb) = &centered[w[1]];
            let r = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            1.0 - r.abs().min(1.0)
        })
        .sum();
    Ok(total / (m - 1) as f64)
}

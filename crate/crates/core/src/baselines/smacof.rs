use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, VonError};
use crate::metrics::MetricContext;
use crate::points::{DistanceMatrix, Ordering};

pub const SMACOF_ITERS: usize = 300;
pub const SMACOF_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SmacofResult {
    pub ordering: Ordering,
    pub coords: Vec<f64>,
    /// Stress of the initial layout followed by one entry per iteration.
    pub stress_history: Vec<f64>,
}

fn weight(dij: f64) -> f64 {
    if dij == 0.0 {
        0.0
    } else {
        1.0 / (dij * dij)
    }
}

fn stress(d: &DistanceMatrix, x: &[f64]) -> f64 {
    let n = d.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = d.get(i, j);
            let gap = (x[i] - x[j]).abs() - dij;
            s += weight(dij) * gap * gap;
        }
    }
    s
}

/// First classical-MDS coordinate, sign fixed so the first nonzero entry is positive.
fn classical_init(d: &DistanceMatrix) -> Vec<f64> {
    let n = d.n();
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j) * d.get(i, j));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let total = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + total));
    let eig = SymmetricEigen::new(b);
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    let scale = lambda.max(0.0).sqrt();
    let mut x: Vec<f64> = eig.eigenvectors.column(k).iter().map(|v| v * scale).collect();
    if x.iter().find(|v| v.abs() > 1e-12).is_some_and(|v| *v < 0.0) {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    x
}

/// Weighted SMACOF in one dimension; the order is the argsort of the final coordinates.
pub fn stress_majorization_1d(ctx: &MetricContext, iters: usize, tol: f64) -> Result<SmacofResult> {
    let d = ctx.distances.as_ref().ok_or(VonError::MissingContext { metric: "sm", field: "distances" })?;
    let n = d.n();
    if n < 2 {
        return Err(VonError::Domain(format!("stress majorization needs n >= 2, got {n}")));
    }
    if d.as_slice().iter().all(|&v| v == 0.0) {
        return Err(VonError::DegenerateMetric { metric: "stress", reason: "all pairwise distances are zero".into() });
    }

    let mut v = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = weight(d.get(i, j));
                v[(i, j)] = -w;
                v[(i, i)] += w;
            }
        }
    }
    let v_pinv = v.pseudo_inverse(1e-10).map_err(|e| VonError::Domain(format!("weight Laplacian pseudo-inverse: {e}")))?;

    let mut x = classical_init(d);
    let mut history = vec![stress(d, &x)];
    for _ in 0..iters {
        let prev = *history.last().unwrap();
        if prev == 0.0 {
            break;
        }
        let mut bx = DVector::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let diff = x[i] - x[j];
                if i != j && diff != 0.0 {
                    let dij = d.get(i, j);
                    bx[i] += weight(dij) * dij * diff.signum();
                }
            }
        }
        let next = &v_pinv * bx;
        x = next.iter().copied().collect();
        let cur = stress(d, &x);
        history.push(cur);
        if (prev - cur) / prev < tol {
            break;
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    Ok(SmacofResult { ordering: Ordering::new(idx)?, coords: x, stress_history: history })
}

//! Classical ordering solvers: exhaustive search, annealing, greedy nearest
//! neighbour, 1D stress majorization and random swapping.

mod anneal;
mod smacof;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VonError};
use crate::metrics::{MetricContext, QualityMetric};
use crate::points::Ordering;

pub use anneal::{acceptance_probability, simulated_annealing, simulated_annealing_until, SAConfig};
pub use smacof::{stress_majorization_1d, SmacofResult, SMACOF_ITERS, SMACOF_TOL};

pub const BRUTE_FORCE_LIMIT: usize = 10;
pub const RANDOM_SWAP_ITERS: usize = 5000;

/// Loss of a raw permutation that is known to be valid.
pub(crate) fn loss_of(metric: &dyn QualityMetric, ctx: &MetricContext, perm: &[usize]) -> Result<f64> {
    metric.loss(ctx, &Ordering::new(perm.to_vec())?)
}

fn check_len(metric: &dyn QualityMetric, ctx: &MetricContext, n: usize) -> Result<()> {
    let expected = metric.ordering_len(ctx)?;
    if expected != n {
        return Err(VonError::DimensionMismatch { what: format!("{} ordering length", metric.name()), expected, got: n });
    }
    Ok(())
}

/// Rearranges `p` into the next permutation in lexicographic order; false once exhausted.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else { return false };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Exact minimizer over all `n!` orders; ties go to the lexicographically smallest.
pub fn brute_force(ctx: &MetricContext, metric: &dyn QualityMetric, n: usize) -> Result<(Ordering, f64)> {
    if n > BRUTE_FORCE_LIMIT {
        return Err(VonError::BruteForceGuard { n, limit: BRUTE_FORCE_LIMIT });
    }
    check_len(metric, ctx, n)?;
    let mut p: Vec<usize> = (0..n).collect();
    let mut best = (p.clone(), loss_of(metric, ctx, &p)?);
    while next_permutation(&mut p) {
        let l = loss_of(metric, ctx, &p)?;
        if l < best.1 {
            best = (p.clone(), l);
        }
    }
    Ok((Ordering::new(best.0)?, best.1))
}

/// Greedy open path from item 0, always stepping to the nearest unvisited item.
pub fn nearest_neighbor(ctx: &MetricContext) -> Result<Ordering> {
    let d = ctx.distances.as_ref().ok_or(VonError::MissingContext { metric: "nn", field: "distances" })?;
    let n = d.n();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    order.push(0);
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if !visited[j] && (next == usize::MAX || d.get(cur, j) < d.get(cur, next)) {
                next = j;
            }
        }
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    Ordering::new(order)
}

/// Hill climbing over random pair swaps, keeping only strict improvements.
///
/// Returns the final order, its loss, and the loss after every proposal.
pub fn random_swapping<R: Rng>(
    ctx: &MetricContext,
    metric: &dyn QualityMetric,
    iters: usize,
    rng: &mut R,
) -> Result<(Ordering, f64, Vec<f64>)> {
    let n = metric.ordering_len(ctx)?;
    if n < 2 {
        return Err(VonError::Domain(format!("random swapping needs n >= 2, got {n}")));
    }
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    let mut cur = loss_of(metric, ctx, &p)?;
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (i, j) = random_pair(n, rng);
        p.swap(i, j);
        let l = loss_of(metric, ctx, &p)?;
        if l < cur {
            cur = l;
        } else {
            p.swap(i, j);
        }
        trace.push(cur);
    }
    Ok((Ordering::new(p)?, cur, trace))
}

/// Two distinct positions, uniformly.
pub(crate) fn random_pair<R: Rng>(n: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Solver names accepted by the CLI and the service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Sa,
    SaTuned,
    Nn,
    Sm,
    Rs,
    Brute,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Sa, Method::SaTuned, Method::Nn, Method::Sm, Method::Rs, Method::Brute];

    pub fn key(self) -> &'static str {
        match self {
            Method::Sa => "sa",
            Method::SaTuned => "sa-tuned",
            Method::Nn => "nn",
            Method::Sm => "sm",
            Method::Rs => "rs",
            Method::Brute => "brute",
        }
    }

    /// Runs the solver and returns the order with its loss under `metric`.
    pub fn solve<R: Rng>(self, ctx: &MetricContext, metric: &dyn QualityMetric, rng: &mut R) -> Result<(Ordering, f64)> {
        self.solve_until(ctx, metric, rng, None)
    }

    /// [`Method::solve`] with a wall-clock budget for the annealing methods.
    pub fn solve_until<R: Rng>(
        self,
        ctx: &MetricContext,
        metric: &dyn QualityMetric,
        rng: &mut R,
        deadline: Option<Instant>,
    ) -> Result<(Ordering, f64)> {
        let n = metric.ordering_len(ctx)?;
        if n == 1 {
            let o = Ordering::identity(1);
            let l = metric.loss(ctx, &o)?;
            return Ok((o, l));
        }
        match self {
            Method::Sa => simulated_annealing_until(ctx, metric, &SAConfig::default(), rng, deadline),
            Method::SaTuned => simulated_annealing_until(ctx, metric, &SAConfig::tuned(), rng, deadline),
            Method::Brute => brute_force(ctx, metric, n),
            Method::Rs => random_swapping(ctx, metric, RANDOM_SWAP_ITERS, rng).map(|(o, l, _)| (o, l)),
            Method::Nn => {
                let o = nearest_neighbor(ctx)?;
                check_len(metric, ctx, o.len())?;
                let l = metric.loss(ctx, &o)?;
                Ok((o, l))
            }
            Method::Sm => {
                let o = stress_majorization_1d(ctx, SMACOF_ITERS, SMACOF_TOL)?.ordering;
                check_len(metric, ctx, o.len())?;
                let l = metric.loss(ctx, &o)?;
                Ok((o, l))
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = VonError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| VonError::Config(format!("unknown method `{s}` (expected one of sa, sa-tuned, nn, sm, rs, brute)")))
    }
}

impl TryFrom<String> for Method {
    type Error = VonError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.key().to_string()
    }
}

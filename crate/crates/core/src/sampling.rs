//! Subset sampling: global, k-nearest, radius and label strategies, and the
//! schedules that mix them over a training run.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VonError};
use crate::points::PointSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    #[default]
    Global,
    Knn,
    Radius,
    Label,
    Mix,
    GlobalThenLocal,
    LocalThenGlobal,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Global,
        Strategy::Knn,
        Strategy::Radius,
        Strategy::Label,
        Strategy::Mix,
        Strategy::GlobalThenLocal,
        Strategy::LocalThenGlobal,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Strategy::Global => "g",
            Strategy::Knn => "n",
            Strategy::Radius => "r",
            Strategy::Label => "l",
            Strategy::Mix => "mix",
            Strategy::GlobalThenLocal => "gl",
            Strategy::LocalThenGlobal => "lg",
        }
    }

    /// True for the four strategies that draw a subset directly.
    pub fn is_basic(self) -> bool {
        matches!(self, Strategy::Global | Strategy::Knn | Strategy::Radius | Strategy::Label)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Strategy {
    type Err = VonError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| VonError::Config(format!("unknown sampling strategy `{s}` (expected g, n, r, l, mix, gl or lg)")))
    }
}

impl TryFrom<String> for Strategy {
    type Error = VonError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.key().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub strategy: Strategy,
    pub size: usize,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(strategy: Strategy, size: usize) -> Self {
        Self { strategy, size, radius: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(VonError::Config("sampling size must be >= 1".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(VonError::Config(format!("sampling radius must be positive, got {r}")));
            }
        } else if self.strategy == Strategy::Radius {
            return Err(VonError::Config("radius strategy needs a radius".into()));
        }
        Ok(())
    }

    /// Local strategies usable on `universe`: label needs labels, radius needs a radius.
    pub fn local_strategies(&self, universe: &PointSet) -> Vec<Strategy> {
        let mut out = vec![Strategy::Knn];
        if self.radius.is_some() {
            out.push(Strategy::Radius);
        }
        if universe.labels().is_some() {
            out.push(Strategy::Label);
        }
        out
    }
}

/// What an epoch draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Basic(Strategy),
    /// Rotate over the local strategies batch by batch.
    Local,
    /// Per batch: global or a local strategy with equal probability.
    Mix,
}

pub fn schedule(strategy: Strategy, epochs: usize) -> Result<Vec<Phase>> {
    if epochs == 0 {
        return Err(VonError::Config("a schedule needs at least one epoch".into()));
    }
    let first = epochs.div_ceil(2);
    Ok((0..epochs)
        .map(|e| match strategy {
            Strategy::Mix => Phase::Mix,
            Strategy::GlobalThenLocal if e < first => Phase::Basic(Strategy::Global),
            Strategy::GlobalThenLocal => Phase::Local,
            Strategy::LocalThenGlobal if e < first => Phase::Local,
            Strategy::LocalThenGlobal => Phase::Basic(Strategy::Global),
            basic => Phase::Basic(basic),
        })
        .collect())
}

/// The basic strategy used for batch `batch` of an epoch in `phase`.
pub fn phase_strategy<R: Rng>(phase: Phase, locals: &[Strategy], batch: usize, rng: &mut R) -> Strategy {
    match phase {
        Phase::Basic(s) => s,
        Phase::Local => locals[batch % locals.len()],
        Phase::Mix => {
            if rng.gen_bool(0.5) {
                Strategy::Global
            } else {
                locals[rng.gen_range(0..locals.len())]
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Universe indices of one subset drawn with a basic strategy.
pub fn sample_indices<R: Rng>(
    strategy: Strategy,
    size: usize,
    radius: Option<f64>,
    universe: &PointSet,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = universe.n();
    let pool_check = |pool: usize| if pool < size { Err(VonError::InsufficientPool { pool, needed: size }) } else { Ok(()) };
    match strategy {
        Strategy::Global => {
            pool_check(n)?;
            Ok(index::sample(rng, n, size).into_vec())
        }
        Strategy::Knn => {
            pool_check(n)?;
            let anchor = rng.gen_range(0..n);
            let a = universe.row(anchor);
            let mut others: Vec<(f64, usize)> =
                (0..n).filter(|&i| i != anchor).map(|i| (squared_distance(a, universe.row(i)), i)).collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            Ok(std::iter::once(anchor).chain(others.into_iter().take(size - 1).map(|(_, i)| i)).collect())
        }
        Strategy::Radius => {
            let r = radius.ok_or_else(|| VonError::Config("radius strategy needs a radius".into()))?;
            let anchor = rng.gen_range(0..n);
            let a = universe.row(anchor);
            let pool: Vec<usize> =
                (0..n).filter(|&i| i != anchor && squared_distance(a, universe.row(i)) <= r * r).collect();
            pool_check(pool.len() + 1)?;
            let picked = index::sample(rng, pool.len(), size - 1);
            Ok(std::iter::once(anchor).chain(picked.iter().map(|k| pool[k])).collect())
        }
        Strategy::Label => {
            let labels = universe
                .labels()
                .ok_or_else(|| VonError::Config("label strategy needs a labelled universe".into()))?;
            let mut classes = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            let class = classes[rng.gen_range(0..classes.len())];
            let pool: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            pool_check(pool.len())?;
            Ok(index::sample(rng, pool.len(), size).iter().map(|k| pool[k]).collect())
        }
        composite => Err(VonError::Config(format!("`{composite}` is a schedule, not a subset strategy"))),
    }
}

/// Like [`sample_indices`], drawing a fresh anchor when a local pool is too small.
pub fn sample_with_retries<R: Rng>(
    strategy: Strategy,
    size: usize,
    radius: Option<f64>,
    universe: &PointSet,
    attempts: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match sample_indices(strategy, size, radius, universe, rng) {
            Err(e @ VonError::InsufficientPool { .. }) => last = Some(e),
            other => return other,
        }
    }
    Err(last.unwrap())
}

/// One subset for a plan with a basic strategy.
pub fn sample<R: Rng>(plan: &SamplingPlan, universe: &PointSet, rng: &mut R) -> Result<PointSet> {
    plan.validate()?;
    let idx = sample_indices(plan.strategy, plan.size, plan.radius, universe, rng)?;
    universe.subset(&idx)
}

//! Quality metrics for orderings behind one loss interface.
//!
//! Trainers and solvers only ever call [`as_loss`] (or [`QualityMetric::loss`]),
//! so any metric registered here can drive any of them.

mod matrix;
mod sequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VonError};
use crate::points::{DistanceMatrix, GraphCollection, Ordering, PointSet};

pub use matrix::{bandwidth, linear_arrangement, morans_i_collection, morans_i_matrix, profile};
pub use sequence::{adjacent_correlation, ks_objective, stress_1d, tsp_path_length};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Unit,
    #[default]
    InverseSquare,
}

/// Metric-specific parameters, read from a flat key-value record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    /// Stress weights.
    pub weight_mode: WeightMode,
    /// Target grid for the kernelized-sorting objective; `0..n` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_positions: Option<Vec<f64>>,
}

/// Everything a metric may look at besides the ordering itself.
#[derive(Debug, Clone, Default)]
pub struct MetricContext {
    pub points: Option<PointSet>,
    pub distances: Option<DistanceMatrix>,
    pub graphs: Option<GraphCollection>,
    pub params: MetricParams,
}

impl MetricContext {
    pub fn from_points(ps: PointSet) -> Self {
        let d = crate::points::pairwise_distances(&ps);
        Self { points: Some(ps), distances: Some(d), ..Default::default() }
    }

    pub fn from_distances(d: DistanceMatrix) -> Self {
        Self { distances: Some(d), ..Default::default() }
    }

    pub fn from_graphs(g: GraphCollection) -> Self {
        Self { graphs: Some(g), ..Default::default() }
    }

    pub fn with_params(mut self, params: MetricParams) -> Self {
        self.params = params;
        self
    }

    pub(crate) fn distances_for(&self, metric: &'static str) -> Result<&DistanceMatrix> {
        self.distances.as_ref().ok_or(VonError::MissingContext { metric, field: "distances" })
    }

    pub(crate) fn points_for(&self, metric: &'static str) -> Result<&PointSet> {
        self.points.as_ref().ok_or(VonError::MissingContext { metric, field: "points" })
    }

    pub(crate) fn graphs_for(&self, metric: &'static str) -> Result<&GraphCollection> {
        self.graphs.as_ref().ok_or(VonError::MissingContext { metric, field: "graphs" })
    }
}

/// A named, direction-tagged scoring function over orderings.
pub trait QualityMetric: Send + Sync {
    fn name(&self) -> &str;

    fn direction(&self) -> Direction;

    fn score(&self, ctx: &MetricContext, o: &Ordering) -> Result<f64>;

    /// The score folded into a quantity to minimize.
    fn loss(&self, ctx: &MetricContext, o: &Ordering) -> Result<f64> {
        let s = self.score(ctx, o)?;
        Ok(match self.direction() {
            Direction::Minimize => s,
            Direction::Maximize => -s,
        })
    }

    /// Number of items an ordering over this context permutes.
    fn ordering_len(&self, ctx: &MetricContext) -> Result<usize>;
}

pub fn as_loss(m: &dyn QualityMetric, ctx: &MetricContext, o: &Ordering) -> Result<f64> {
    m.loss(ctx, o)
}

/// Maps a loss back to the metric's native score.
pub fn score_from_loss(direction: Direction, loss: f64) -> f64 {
    match direction {
        Direction::Minimize => loss,
        Direction::Maximize => -loss,
    }
}

/// The built-in metric registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Tsp,
    Stress,
    MoransI,
    MoransIAvg,
    LinearArrangement,
    Profile,
    Bandwidth,
    Ks,
    AdjCorr,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Tsp,
        Metric::Stress,
        Metric::MoransI,
        Metric::MoransIAvg,
        Metric::LinearArrangement,
        Metric::Profile,
        Metric::Bandwidth,
        Metric::Ks,
        Metric::AdjCorr,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Tsp => "tsp",
            Metric::Stress => "stress",
            Metric::MoransI => "morans_i",
            Metric::MoransIAvg => "morans_i_avg",
            Metric::LinearArrangement => "la",
            Metric::Profile => "profile",
            Metric::Bandwidth => "bandwidth",
            Metric::Ks => "ks",
            Metric::AdjCorr => "adj_corr",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.key() == key)
            .ok_or_else(|| VonError::UnknownMetric(key.to_string()))
    }

    /// Graph metrics read `ctx.graphs`; the rest read points or distances.
    pub fn needs_graphs(self) -> bool {
        matches!(
            self,
            Metric::MoransI | Metric::MoransIAvg | Metric::LinearArrangement | Metric::Profile | Metric::Bandwidth
        )
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Metric {
    type Err = VonError;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_key(s)
    }
}

impl TryFrom<String> for Metric {
    type Error = VonError;

    fn try_from(s: String) -> Result<Self> {
        Self::from_key(&s)
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> Self {
        m.key().to_string()
    }
}

impl QualityMetric for Metric {
    fn name(&self) -> &str {
        self.key()
    }

    fn direction(&self) -> Direction {
        match self {
            Metric::MoransI | Metric::MoransIAvg | Metric::Ks => Direction::Maximize,
            _ => Direction::Minimize,
        }
    }

    fn score(&self, ctx: &MetricContext, o: &Ordering) -> Result<f64> {
        let expected = self.ordering_len(ctx)?;
        if o.len() != expected {
            return Err(VonError::DimensionMismatch {
                what: format!("ordering for metric `{}`", self.key()),
                expected,
                got: o.len(),
            });
        }
        match self {
            Metric::Tsp => tsp_path_length(ctx, o),
            Metric::Stress => stress_1d(ctx, o),
            Metric::MoransI => morans_i_matrix(ctx, o),
            Metric::MoransIAvg => morans_i_collection(ctx, o),
            Metric::LinearArrangement => linear_arrangement(ctx, o),
            Metric::Profile => profile(ctx, o),
            Metric::Bandwidth => bandwidth(ctx, o),
            Metric::Ks => ks_objective(ctx, o),
            Metric::AdjCorr => adjacent_correlation(ctx, o),
        }
    }

    fn ordering_len(&self, ctx: &MetricContext) -> Result<usize> {
        let key = self.key();
        Ok(match self {
            Metric::Tsp | Metric::Stress => {
                ctx.distances.as_ref().map(DistanceMatrix::n).or(ctx.points.as_ref().map(PointSet::n)).ok_or(
                    VonError::MissingContext { metric: key, field: "distances" },
                )?
            }
            Metric::Ks => ctx.points_for(key)?.n(),
            Metric::AdjCorr => ctx.points_for(key)?.dim(),
            _ => ctx.graphs_for(key)?.n(),
        })
    }
}

//! Problem instances: the model's input coordinates paired with the context
//! the metric scores against, plus synthetic generators.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataprep::{average_adjacency_coords, Dataset, DatasetData};
use crate::error::{Result, VonError};
use crate::metrics::{Metric, MetricContext, MetricParams};
use crate::points::{pairwise_distances, GraphCollection, PointSet};

#[derive(Debug, Clone)]
pub struct Instance {
    /// One row per item being ordered.
    pub input: PointSet,
    pub ctx: MetricContext,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.input.n()
    }

    /// An instance over point data.
    ///
    /// `adj_corr` orders the columns of `ps`, so each column becomes one input
    /// row. Matrix metrics reorder the pairwise distance matrix; graph-edge
    /// metrics need graph data.
    pub fn from_points(metric: Metric, params: &MetricParams, ps: PointSet) -> Result<Self> {
        let input = match metric {
            Metric::AdjCorr => transpose(&ps)?,
            _ => ps.clone(),
        };
        let ctx = match metric {
            Metric::MoransI | Metric::MoransIAvg => {
                let d = pairwise_distances(&ps);
                let g = GraphCollection::single(d.as_slice().to_vec(), d.n())?;
                MetricContext { points: Some(ps), distances: Some(d), graphs: Some(g), params: MetricParams::default() }
            }
            Metric::LinearArrangement | Metric::Profile | Metric::Bandwidth => {
                return Err(VonError::Config(format!("metric `{metric}` orders graph vertices and needs a graph dataset")));
            }
            _ => MetricContext::from_points(ps),
        };
        Ok(Self { input, ctx: ctx.with_params(params.clone()) })
    }

    /// An instance over graph data, with `coords` as the vertices' input rows.
    pub fn from_graphs(metric: Metric, params: &MetricParams, coords: PointSet, g: GraphCollection) -> Result<Self> {
        if coords.n() != g.n() {
            return Err(VonError::DimensionMismatch { what: "graph vertices".into(), expected: coords.n(), got: g.n() });
        }
        if !metric.needs_graphs() {
            let mut inst = Self::from_points(metric, params, coords.clone())?;
            inst.input = coords;
            return Ok(inst);
        }
        // single-matrix metrics score the averaged adjacency of a multi-step collection
        let g = if metric != Metric::MoransIAvg && g.len() > 1 {
            GraphCollection::single(average_adjacency_coords(&g).coords().to_vec(), g.n())?
        } else {
            g
        };
        Ok(Self { input: coords, ctx: MetricContext::from_graphs(g).with_params(params.clone()) })
    }

    /// The whole graph collection, with averaged adjacency rows as input.
    pub fn from_graph_collection(metric: Metric, params: &MetricParams, g: GraphCollection) -> Result<Self> {
        Self::from_graphs(metric, params, average_adjacency_coords(&g), g)
    }
}

/// Standardized columns as rows; constant columns stay all zero.
fn transpose(ps: &PointSet) -> Result<PointSet> {
    let (n, d) = (ps.n(), ps.dim());
    let mut out = Vec::with_capacity(n * d);
    for j in 0..d {
        let col = ps.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        out.extend(col.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }));
    }
    PointSet::new(out, d, n)
}

impl Dataset {
    /// The instance induced by universe rows `indices`.
    pub fn instance(&self, metric: Metric, params: &MetricParams, coords: &PointSet, indices: &[usize]) -> Result<Instance> {
        match &self.data {
            DatasetData::Points(ps) => Instance::from_points(metric, params, ps.subset(indices)?),
            DatasetData::Graphs(g) => Instance::from_graphs(metric, params, coords.subset(indices)?, g.subset(indices)?),
        }
    }
}

/// `n` points uniform in the unit cube.
pub fn uniform_points<R: Rng>(n: usize, dim: usize, rng: &mut R) -> PointSet {
    PointSet::new((0..n * dim).map(|_| rng.gen::<f64>()).collect(), n, dim).expect("n, dim >= 1")
}

/// Dynamic graphs with planted communities: `steps` independent 0/1 snapshots
/// over `n` vertices split into `blocks` balanced groups, edge probability
/// `p_in` within and `p_out` across groups. Vertex ids are shuffled.
pub fn block_graphs<R: Rng>(n: usize, steps: usize, blocks: usize, p_in: f64, p_out: f64, rng: &mut R) -> Result<GraphCollection> {
    if blocks == 0 || steps == 0 || n < 2 {
        return Err(VonError::Config("block graphs need n >= 2, steps >= 1 and blocks >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_in + p_out == 0.0 {
        return Err(VonError::Config(format!("edge probabilities {p_in}, {p_out} out of range")));
    }
    let mut group: Vec<usize> = (0..n).map(|i| i % blocks).collect();
    group.shuffle(rng);
    let mut mats = Vec::with_capacity(steps);
    while mats.len() < steps {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let p = if group[i] == group[j] { p_in } else { p_out };
                if rng.gen_bool(p) {
                    m[i * n + j] = 1.0;
                    m[j * n + i] = 1.0;
                }
            }
        }
        // an edgeless snapshot has no cell variance; draw it again
        if m.iter().any(|&v| v > 0.0) {
            mats.push(m);
        }
    }
    GraphCollection::new(mats, n)
}

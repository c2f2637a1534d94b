//! Policy-gradient training against a frozen greedy-rollout baseline.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::{load_dataset, Dataset};
use crate::decoder::{Choice, DecoderVariant};
use crate::encoder::EncoderConfig;
use crate::error::{Result, VonError};
use crate::instance::{block_graphs, uniform_points, Instance};
use crate::metrics::{Metric, MetricParams, QualityMetric};
use crate::model::{hex_digest, CheckpointInfo, Model, ModelConfig};
use crate::nn::{Adam, Graph, Var};
use crate::points::{Ordering, PointSet};
use crate::sampling::{phase_strategy, sample_with_retries, schedule, SamplingPlan, Strategy};

/// Anchor redraws before a local sampling failure is reported.
const SAMPLE_ATTEMPTS: usize = 100;
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "model.json";

mod defaults {
    pub fn epochs() -> usize {
        20
    }
    pub fn batches_per_epoch() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        100
    }
    pub fn n_points() -> usize {
        20
    }
    pub fn learning_rate() -> f64 {
        1e-4
    }
    pub fn baseline_eval_size() -> usize {
        512
    }
    pub fn dim() -> usize {
        2
    }
    pub fn steps() -> usize {
        3
    }
    pub fn blocks() -> usize {
        4
    }
    pub fn p_in() -> f64 {
        0.7
    }
    pub fn p_out() -> f64 {
        0.05
    }
}

/// Network shape; the input dimension comes from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub variant: DecoderVariant,
    pub no_encoder: bool,
    /// Ablation: forces the `none` reposition variant.
    pub no_reposition: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let e = EncoderConfig::new(1);
        Self {
            hidden_dim: e.hidden_dim,
            num_layers: e.num_layers,
            num_heads: e.num_heads,
            ff_dim: e.ff_dim,
            variant: DecoderVariant::Mlp,
            no_encoder: false,
            no_reposition: false,
        }
    }
}

impl ModelSpec {
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_dim,
                hidden_dim: self.hidden_dim,
                num_layers: self.num_layers,
                num_heads: self.num_heads,
                ff_dim: self.ff_dim,
                no_encoder: self.no_encoder,
            },
            variant: if self.no_reposition { DecoderVariant::None } else { self.variant },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Fresh uniform points in the unit cube for every instance.
    Uniform {
        #[serde(default = "defaults::dim")]
        dim: usize,
    },
    /// Fresh planted-community graph sequences for every instance.
    BlockGraphs {
        #[serde(default = "defaults::steps")]
        steps: usize,
        #[serde(default = "defaults::blocks")]
        blocks: usize,
        #[serde(default = "defaults::p_in")]
        p_in: f64,
        #[serde(default = "defaults::p_out")]
        p_out: f64,
    },
    /// Subsets of a loaded dataset; relative paths resolve against the data root.
    Dataset { manifest: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Uniform { dim: defaults::dim() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub metric: Metric,
    #[serde(default)]
    pub metric_params: MetricParams,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batches_per_epoch")]
    pub batches_per_epoch: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::n_points")]
    pub n_points: usize,
    #[serde(default)]
    pub sampling: Strategy,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::baseline_eval_size")]
    pub baseline_eval_size: usize,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub data: DataSource,
}

impl TrainConfig {
    pub fn new(metric: Metric) -> Self {
        serde_json::from_value(serde_json::json!({ "metric": metric })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| VonError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
            ("n_points", self.n_points),
            ("baseline_eval_size", self.baseline_eval_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(VonError::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VonError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        let plan = SamplingPlan { strategy: self.sampling, size: self.n_points, radius: self.radius, seed: self.seed };
        if self.sampling != Strategy::Mix && self.sampling.is_basic() || self.radius.is_some() {
            plan.validate()?;
        }
        if self.sampling != Strategy::Global && !matches!(self.data, DataSource::Dataset { .. }) {
            return Err(VonError::Config(format!(
                "sampling strategy `{}` needs a dataset source; synthetic sources draw fresh instances",
                self.sampling
            )));
        }
        self.model.model_config(1).validate()
    }

    /// Content hash recorded in checkpoints.
    pub fn hash(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Where training instances come from.
pub struct InstanceSource {
    metric: Metric,
    params: MetricParams,
    n: usize,
    radius: Option<f64>,
    kind: SourceKind,
}

enum SourceKind {
    Uniform { dim: usize },
    Blocks { steps: usize, blocks: usize, p_in: f64, p_out: f64 },
    Dataset { ds: Box<Dataset>, coords: PointSet, locals: Vec<Strategy> },
}

impl InstanceSource {
    pub fn new(cfg: &TrainConfig, data_root: Option<&Path>) -> Result<Self> {
        let plan = SamplingPlan { strategy: cfg.sampling, size: cfg.n_points, radius: cfg.radius, seed: cfg.seed };
        Self::build(cfg.metric, &cfg.metric_params, &plan, &cfg.data, data_root)
    }

    /// Instances of `plan.size` items for `metric` drawn from `data`.
    pub fn build(metric: Metric, params: &MetricParams, plan: &SamplingPlan, data: &DataSource, data_root: Option<&Path>) -> Result<Self> {
        let kind = match data {
            &DataSource::Uniform { dim } => {
                if dim == 0 {
                    return Err(VonError::Config("uniform data needs dim >= 1".into()));
                }
                SourceKind::Uniform { dim }
            }
            &DataSource::BlockGraphs { steps, blocks, p_in, p_out } => SourceKind::Blocks { steps, blocks, p_in, p_out },
            DataSource::Dataset { manifest } => {
                let path = match data_root {
                    Some(root) if manifest.is_relative() && !manifest.exists() => root.join(manifest),
                    _ => manifest.clone(),
                };
                let ds = load_dataset(&path)?;
                let coords = ds.coordinates();
                if coords.n() < plan.size {
                    return Err(VonError::Config(format!("dataset has {} items, subsets need {}", coords.n(), plan.size)));
                }
                let locals = plan.local_strategies(&coords);
                SourceKind::Dataset { ds: Box::new(ds), coords, locals }
            }
        };
        Ok(Self { metric, params: params.clone(), n: plan.size, radius: plan.radius, kind })
    }

    pub fn local_strategies(&self) -> &[Strategy] {
        match &self.kind {
            SourceKind::Dataset { locals, .. } => locals,
            _ => &[Strategy::Knn],
        }
    }

    pub fn draw<R: Rng>(&self, strategy: Strategy, rng: &mut R) -> Result<Instance> {
        match &self.kind {
            &SourceKind::Uniform { dim } => {
                // adj_corr orders columns: `n` axes over `dim` records
                let ps = if self.metric == Metric::AdjCorr { uniform_points(dim, self.n, rng) } else { uniform_points(self.n, dim, rng) };
                Instance::from_points(self.metric, &self.params, ps)
            }
            &SourceKind::Blocks { steps, blocks, p_in, p_out } => {
                Instance::from_graph_collection(self.metric, &self.params, block_graphs(self.n, steps, blocks, p_in, p_out, rng)?)
            }
            SourceKind::Dataset { ds, coords, .. } => {
                let idx = sample_with_retries(strategy, self.n, self.radius, coords, SAMPLE_ATTEMPTS, rng)?;
                ds.instance(self.metric, &self.params, coords, &idx)
            }
        }
    }

    pub fn draw_many<R: Rng>(&self, strategy: Strategy, count: usize, rng: &mut R) -> Result<Vec<Instance>> {
        (0..count).map(|_| self.draw(strategy, rng)).collect()
    }
}

/// Per-instance results of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    pub trajectories: Vec<Vec<usize>>,
    pub sampled_loss: Vec<f64>,
    pub baseline_loss: Vec<f64>,
    pub log_prob: Vec<f64>,
}

impl Rollouts {
    pub fn advantages(&self) -> Vec<f64> {
        self.sampled_loss.iter().zip(&self.baseline_loss).map(|(s, b)| s - b).collect()
    }
}

fn inputs(batch: &[Instance]) -> Vec<&PointSet> {
    batch.iter().map(|i| &i.input).collect()
}

fn losses(metric: Metric, batch: &[Instance], orders: impl IntoIterator<Item = Ordering>) -> Result<Vec<f64>> {
    batch
        .iter()
        .zip(orders)
        .enumerate()
        .map(|(b, (inst, o))| metric.loss(&inst.ctx, &o).map_err(|e| VonError::Instance { instance: b, source: Box::new(e) }))
        .collect()
}

fn greedy_losses(model: &Model, batch: &[Instance], metric: Metric) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    for (k, chunk) in batch.chunks(128).enumerate() {
        let orders = model.rollout(&inputs(chunk), &mut Choice::<ChaCha8Rng>::Greedy)?.into_iter().map(|(o, _)| o);
        out.extend(losses(metric, chunk, orders).map_err(|e| match e {
            VonError::Instance { instance, source } => VonError::Instance { instance: instance + 128 * k, source },
            other => other,
        })?);
    }
    Ok(out)
}

/// Mean greedy loss of `model` over `instances`.
pub fn evaluate(model: &Model, instances: &[Instance], metric: Metric) -> Result<f64> {
    let l = greedy_losses(model, instances, metric)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Samples with `model` and greedy-decodes with `baseline`, without keeping gradients.
pub fn rollout_batch<R: Rng>(model: &Model, baseline: &Model, batch: &[Instance], metric: Metric, rng: &mut R) -> Result<Rollouts> {
    let sampled = model.rollout(&inputs(batch), &mut Choice::Sample(rng))?;
    let log_prob = sampled.iter().map(|(_, l)| *l).collect();
    let trajectories = sampled.iter().map(|(o, _)| o.as_slice().to_vec()).collect();
    let sampled_loss = losses(metric, batch, sampled.into_iter().map(|(o, _)| o))?;
    let baseline_loss = greedy_losses(baseline, batch, metric)?;
    Ok(Rollouts { trajectories, sampled_loss, baseline_loss, log_prob })
}

/// Gradient of `mean(advantage * total_log_prob)` from the tape behind `total`.
fn surrogate_gradient(model: &Model, g: &mut Graph, pv: &crate::nn::Bound, total: Var, advantages: &[f64]) -> Result<Vec<Vec<f64>>> {
    let b = advantages.len() as f64;
    let loss = g.weighted_sum(total, advantages.iter().map(|a| a / b).collect());
    let grads = pv.grads(model.params(), &g.backward(loss));
    for (name, gr) in model.params().names().iter().zip(&grads) {
        if gr.iter().any(|v| !v.is_finite()) {
            return Err(VonError::NonFiniteGradient { param: name.clone() });
        }
    }
    Ok(grads)
}

/// The raw policy-gradient estimate for given trajectories and advantages.
pub fn policy_gradient(model: &Model, batch: &[Instance], trajectories: &[Vec<usize>], advantages: &[f64]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(VonError::Config("empty rollout batch".into()));
    }
    let mut g = Graph::new();
    let pv = model.params().bind(&mut g);
    let (_, total) = model.rollout_graph(&mut g, &pv, &inputs(batch), &mut Choice::<ChaCha8Rng>::Forced(trajectories))?;
    surrogate_gradient(model, &mut g, &pv, total, advantages)
}

/// One Adam update from recorded rollouts.
pub fn reinforce_step(model: &mut Model, adam: &mut Adam, batch: &[Instance], rollouts: &Rollouts) -> Result<()> {
    let grads = policy_gradient(model, batch, &rollouts.trajectories, &rollouts.advantages())?;
    adam.step(model.params_mut(), &grads);
    Ok(())
}

/// Sampling, baseline rollout and update in one pass, reusing the sampling tape.
fn train_batch<R: Rng>(model: &mut Model, adam: &mut Adam, baseline: &Model, batch: &[Instance], metric: Metric, rng: &mut R) -> Result<Rollouts> {
    let mut g = Graph::new();
    let pv = model.params().bind(&mut g);
    let (trajectories, total) = model.rollout_graph(&mut g, &pv, &inputs(batch), &mut Choice::Sample(rng))?;
    let orders = trajectories.iter().map(|t| Ordering::new(t.clone())).collect::<Result<Vec<_>>>()?;
    let sampled_loss = losses(metric, batch, orders)?;
    let baseline_loss = greedy_losses(baseline, batch, metric)?;
    let log_prob = g.value(total).data().to_vec();
    let r = Rollouts { trajectories, sampled_loss, baseline_loss, log_prob };
    let grads = surrogate_gradient(model, &mut g, &pv, total, &r.advantages())?;
    adam.step(model.params_mut(), &grads);
    Ok(r)
}

/// The frozen reference policy.
#[derive(Debug, Clone)]
pub struct BaselineState {
    pub model: Model,
    pub frozen_since_epoch: usize,
    /// Mean greedy loss of `model` on the fixed evaluation set.
    pub eval_loss: f64,
}

impl BaselineState {
    pub fn new(model: &Model, eval_set: &[Instance], metric: Metric) -> Result<Self> {
        Ok(Self { model: model.clone(), frozen_since_epoch: 0, eval_loss: evaluate(model, eval_set, metric)? })
    }
}

/// Replaces the baseline when the candidate's mean eval loss is strictly lower.
///
/// Returns the candidate's eval loss and whether it replaced the baseline.
pub fn maybe_update_baseline(model: &Model, baseline: &mut BaselineState, eval_set: &[Instance], metric: Metric, epoch: usize) -> Result<(f64, bool)> {
    let candidate = evaluate(model, eval_set, metric)?;
    if candidate < baseline.eval_loss {
        *baseline = BaselineState { model: model.clone(), frozen_since_epoch: epoch, eval_loss: candidate };
        return Ok((candidate, true));
    }
    Ok((candidate, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_sampled_loss: f64,
    /// Mean greedy loss of the frozen baseline over the epoch's training batches.
    pub mean_greedy_loss: f64,
    pub baseline_replaced: bool,
    /// Seconds since training started.
    pub wall_time_s: f64,
    /// Mean greedy loss of the current model on the fixed evaluation set.
    pub eval_loss: f64,
    /// Baseline eval loss after this epoch's replacement check.
    pub baseline_eval_loss: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub baseline: BaselineState,
    pub log: Vec<EpochLog>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Runs training; with `output_dir`, writes the CSV log and a checkpoint after every epoch.
pub fn train(
    cfg: &TrainConfig,
    data_root: Option<&Path>,
    output_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog, &Model),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let source = InstanceSource::new(cfg, data_root)?;
    let mut data_rng = stream(cfg.seed, 1);
    let mut decode_rng = stream(cfg.seed, 2);
    let mut mix_rng = stream(cfg.seed, 4);
    let eval_set = source.draw_many(Strategy::Global, cfg.baseline_eval_size, &mut stream(cfg.seed, 3))?;
    let input_dim = eval_set[0].input.dim();
    let mut model = Model::new(cfg.model.model_config(input_dim), cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, model.params());
    let mut baseline = BaselineState::new(&model, &eval_set, cfg.metric)?;
    let mut writer = match output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| VonError::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let file = File::create(&path).map_err(|e| VonError::io(&path, e))?;
            Some((csv::Writer::from_writer(file), path))
        }
        None => None,
    };
    let save = |model: &Model, epochs_completed: usize| -> Result<()> {
        if let Some(dir) = output_dir {
            let info = CheckpointInfo {
                metric: cfg.metric,
                metric_params: cfg.metric_params.clone(),
                train_config_hash: Some(cfg.hash()),
                epochs_completed,
            };
            model.save(&dir.join(CHECKPOINT_FILE), &info)?;
        }
        Ok(())
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        save(&model, 0)?;
        return Ok(TrainOutcome { model, baseline, log });
    }
    for (e, phase) in schedule(cfg.sampling, cfg.epochs)?.into_iter().enumerate() {
        let (mut sampled, mut greedy) = (0.0, 0.0);
        for b in 0..cfg.batches_per_epoch {
            let strategy = phase_strategy(phase, source.local_strategies(), b, &mut mix_rng);
            let batch = source.draw_many(strategy, cfg.batch_size, &mut data_rng)?;
            let r = train_batch(&mut model, &mut adam, &baseline.model, &batch, cfg.metric, &mut decode_rng)?;
            sampled += r.sampled_loss.iter().sum::<f64>();
            greedy += r.baseline_loss.iter().sum::<f64>();
        }
        let epoch = e + 1;
        let (eval_loss, replaced) = maybe_update_baseline(&model, &mut baseline, &eval_set, cfg.metric, epoch)?;
        let count = (cfg.batches_per_epoch * cfg.batch_size) as f64;
        let row = EpochLog {
            epoch,
            mean_sampled_loss: sampled / count,
            mean_greedy_loss: greedy / count,
            baseline_replaced: replaced,
            wall_time_s: start.elapsed().as_secs_f64(),
            eval_loss,
            baseline_eval_loss: baseline.eval_loss,
        };
        if let Some((w, path)) = writer.as_mut() {
            w.serialize(&row).and_then(|_| w.flush().map_err(Into::into)).map_err(|e| VonError::Checkpoint(format!("{}: {e}", path.display())))?;
        }
        save(&model, epoch)?;
        on_epoch(&row, &model);
        log.push(row);
    }
    Ok(TrainOutcome { model, baseline, log })
}

/// Reads a training log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| VonError::Checkpoint(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| VonError::Parse { file: path.to_path_buf(), line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() }))
        .collect()
}

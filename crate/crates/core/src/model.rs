//! The ordering network: encoder + decoder parameters and the decode loops.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{Choice, DecoderLayout, DecoderState, DecoderVariant, PreparedValues};
use crate::encoder::{AttentionParams, EncoderConfig, EncoderLayout};
use crate::error::{Result, VonError};
use crate::metrics::{Metric, MetricParams};
use crate::nn::{Bound, Graph, ParamStore, Tensor, Var};
use crate::points::{Ordering, PointSet};

/// Instances per inference batch; bounds the memory of one step graph.
const INFER_CHUNK: usize = 128;
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub variant: DecoderVariant,
}

impl ModelConfig {
    pub fn new(input_dim: usize, variant: DecoderVariant) -> Self {
        Self { encoder: EncoderConfig::new(input_dim), variant }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.variant == DecoderVariant::Conv && 2 * self.encoder.hidden_dim < crate::decoder::CONV_WIDTH {
            return Err(VonError::Config("von-c needs hidden_dim >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Encoder output for one point set plus the step-invariant decoder inputs.
#[derive(Clone)]
pub struct Encoding {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d` latents.
    pub h: Vec<f64>,
    pub h_bar: Vec<f64>,
    prepared: PreparedValues,
}

impl Encoding {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.h[i * self.d..(i + 1) * self.d]
    }
}

/// Everything one decoding step computes for a single instance.
#[derive(Debug, Clone)]
pub struct StepOutputs {
    pub context: Vec<f64>,
    /// Context attention weights over all points (averaged over heads).
    pub context_weights: Vec<f64>,
    /// Row-major `n x d` repositioned latents.
    pub repositioned: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    encoder: EncoderLayout,
    decoder: DecoderLayout,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("cfg", &self.cfg).field("params", &self.params.numel()).finish()
    }
}

/// Stacks equal-shaped point sets into a `[B, n, d]` tensor.
pub(crate) fn batch_tensor(sets: &[&PointSet], input_dim: usize) -> Result<Tensor> {
    let n = sets[0].n();
    let mut data = Vec::with_capacity(sets.len() * n * input_dim);
    for ps in sets {
        if ps.dim() != input_dim {
            return Err(VonError::DimensionMismatch { what: "point dimension".into(), expected: input_dim, got: ps.dim() });
        }
        if ps.n() != n {
            return Err(VonError::DimensionMismatch { what: "batch point count".into(), expected: n, got: ps.n() });
        }
        data.extend_from_slice(ps.coords());
    }
    Ok(Tensor::new(vec![sets.len(), n, input_dim], data))
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = EncoderLayout::new(&cfg.encoder, &mut params, &mut rng);
        let decoder = DecoderLayout::new(&cfg.encoder, cfg.variant, &mut params, &mut rng);
        Ok(Self { cfg, params, encoder, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.encoder.input_dim
    }

    /// Query/key maps of the first encoder head block, if the encoder has layers.
    pub fn first_attention_params(&self) -> Option<AttentionParams> {
        self.encoder.first_attention().map(|m| m.head_params(&self.params))
    }

    fn check_input(&self, ps: &PointSet) -> Result<()> {
        if ps.dim() != self.input_dim() {
            return Err(VonError::DimensionMismatch {
                what: "point dimension".into(),
                expected: self.input_dim(),
                got: ps.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, g: &mut Graph, pv: &Bound, x: Var) -> crate::decoder::Prepared {
        let (h, h_bar) = self.encoder.forward(g, pv, x);
        self.decoder.prepare(g, pv, h, h_bar)
    }

    fn prepared_values(&self, x: Tensor) -> PreparedValues {
        let mut g = Graph::new();
        let pv = self.params.bind(&mut g);
        let x = g.input(x);
        let pre = self.prepare(&mut g, &pv, x);
        pre.values(&g)
    }

    pub fn encode(&self, ps: &PointSet) -> Result<Encoding> {
        self.check_input(ps)?;
        let prepared = self.prepared_values(batch_tensor(&[ps], self.input_dim())?);
        let d = self.cfg.encoder.hidden_dim;
        Ok(Encoding {
            n: ps.n(),
            d,
            h: prepared.h().data().to_vec(),
            h_bar: prepared.h_bar().data().to_vec(),
            prepared,
        })
    }

    fn run_step(&self, prepared: &PreparedValues, states: &[DecoderState]) -> Result<(Graph, crate::decoder::StepVars)> {
        let mut g = Graph::new();
        let pv = self.params.bind(&mut g);
        let pre = prepared.insert(&mut g);
        let vars = self.decoder.step(&mut g, &pv, &pre, states)?;
        Ok((g, vars))
    }

    /// Context, repositioned latents and match probabilities at the current state.
    pub fn step_outputs(&self, enc: &Encoding, st: &DecoderState) -> Result<StepOutputs> {
        let (g, v) = self.run_step(&enc.prepared, std::slice::from_ref(st))?;
        Ok(StepOutputs {
            context: g.value(v.context).data().to_vec(),
            context_weights: g.value(v.context_weights).data().to_vec(),
            repositioned: g.value(v.repositioned).data().to_vec(),
            probabilities: g.value(v.log_probs).data().iter().map(|l| l.exp()).collect(),
        })
    }

    /// Chooses the next point, updates `st`, and returns the pick with its log-probability.
    pub fn decode_step<R: Rng>(&self, enc: &Encoding, st: &mut DecoderState, mode: DecodeMode, rng: &mut R) -> Result<(usize, f64)> {
        let (g, v) = self.run_step(&enc.prepared, std::slice::from_ref(st))?;
        let row = g.value(v.log_probs).data();
        let i = match mode {
            DecodeMode::Greedy => crate::decoder::argmax_feasible(row),
            DecodeMode::Sample => crate::decoder::sample_feasible(row, rng),
        };
        st.push(i);
        Ok((i, row[i]))
    }

    pub fn decode_sequence<R: Rng>(&self, ps: &PointSet, mode: DecodeMode, rng: &mut R) -> Result<(Ordering, f64)> {
        let mut out = match mode {
            DecodeMode::Greedy => self.rollout(&[ps], &mut Choice::<R>::Greedy)?,
            DecodeMode::Sample => self.rollout(&[ps], &mut Choice::Sample(rng))?,
        };
        Ok(out.pop().unwrap())
    }

    pub fn greedy(&self, ps: &PointSet) -> Result<Ordering> {
        Ok(self.rollout(&[ps], &mut Choice::<ChaCha8Rng>::Greedy)?.pop().unwrap().0)
    }

    /// Greedy orders for many equal-sized sets, batched.
    pub fn greedy_batch(&self, sets: &[PointSet]) -> Result<Vec<Ordering>> {
        let mut out = Vec::with_capacity(sets.len());
        for chunk in sets.chunks(INFER_CHUNK) {
            let refs: Vec<&PointSet> = chunk.iter().collect();
            out.extend(self.rollout(&refs, &mut Choice::<ChaCha8Rng>::Greedy)?.into_iter().map(|(o, _)| o));
        }
        Ok(out)
    }

    /// Decodes a batch without keeping gradients: one small graph per step.
    pub fn rollout<R: Rng>(&self, sets: &[&PointSet], choice: &mut Choice<R>) -> Result<Vec<(Ordering, f64)>> {
        if sets.is_empty() {
            return Ok(Vec::new());
        }
        let n = sets[0].n();
        let prepared = self.prepared_values(batch_tensor(sets, self.input_dim())?);
        let mut states: Vec<DecoderState> = sets.iter().map(|_| DecoderState::new(n)).collect();
        let mut totals = vec![0.0; sets.len()];
        for t in 0..n {
            let (g, v) = self.run_step(&prepared, &states)?;
            let lp = g.value(v.log_probs).data();
            for (b, st) in states.iter_mut().enumerate() {
                let row = &lp[b * n..(b + 1) * n];
                let i = choice.pick(b, t, row);
                if st.mask[i] {
                    return Err(VonError::InvalidOrdering(format!("index {i} chosen twice")));
                }
                totals[b] += row[i];
                st.push(i);
            }
        }
        states.into_iter().zip(totals).map(|(s, l)| Ok((Ordering::new(s.selected)?, l))).collect()
    }

    /// Decodes a batch inside `g`, keeping the tape for a backward pass.
    ///
    /// Returns the trajectories and their summed log-probabilities `[B]`.
    pub(crate) fn rollout_graph<R: Rng>(
        &self,
        g: &mut Graph,
        pv: &Bound,
        sets: &[&PointSet],
        choice: &mut Choice<R>,
    ) -> Result<(Vec<Vec<usize>>, Var)> {
        let n = sets[0].n();
        let x = g.input(batch_tensor(sets, self.input_dim())?);
        let pre = self.prepare(g, pv, x);
        let mut states: Vec<DecoderState> = sets.iter().map(|_| DecoderState::new(n)).collect();
        let mut total: Option<Var> = None;
        for t in 0..n {
            let v = self.decoder.step(g, pv, &pre, &states)?;
            let lp = g.value(v.log_probs).data();
            let picks: Vec<usize> = (0..states.len()).map(|b| choice.pick(b, t, &lp[b * n..(b + 1) * n])).collect();
            for (st, &i) in states.iter_mut().zip(&picks) {
                if st.mask[i] {
                    return Err(VonError::InvalidOrdering(format!("index {i} chosen twice")));
                }
                st.push(i);
            }
            let step_lp = g.gather_rows(v.log_probs, &picks);
            total = Some(match total {
                Some(acc) => g.add(acc, step_lp),
                None => step_lp,
            });
        }
        Ok((states.into_iter().map(|s| s.selected).collect(), total.unwrap()))
    }

    /// Writes `<path>` (JSON metadata) and the weight blob next to it.
    pub fn save(&self, path: &Path, meta: &CheckpointInfo) -> Result<()> {
        let blob: Vec<u8> = self.params.tensors().iter().flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes())).collect();
        let weights = weights_path(path);
        let doc = CheckpointMeta {
            format: CHECKPOINT_FORMAT,
            model: self.cfg.clone(),
            metric: meta.metric,
            metric_params: meta.metric_params.clone(),
            train_config_hash: meta.train_config_hash.clone(),
            epochs_completed: meta.epochs_completed,
            params: self.params.names().iter().zip(self.params.tensors()).map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
            weights_file: weights.file_name().unwrap().to_string_lossy().into_owned(),
            weights_sha256: hex_digest(&blob),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| VonError::io(dir, e))?;
        }
        fs::write(&weights, &blob).map_err(|e| VonError::io(&weights, e))?;
        fs::write(path, serde_json::to_vec_pretty(&doc)?).map_err(|e| VonError::io(path, e))?;
        Ok(())
    }

    /// Reads a checkpoint, validating the metadata before touching the weights.
    pub fn load(path: &Path) -> Result<(Self, CheckpointInfo)> {
        let text = fs::read(path).map_err(|e| VonError::io(path, e))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&text).map_err(|e| VonError::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(VonError::Checkpoint(format!("unsupported checkpoint format {}", meta.format)));
        }
        let mut model = Model::new(meta.model.clone(), 0).map_err(|e| VonError::Checkpoint(format!("invalid model config: {e}")))?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params.names().iter().zip(model.params.tensors()).map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if expected != meta.params {
            return Err(VonError::Checkpoint("parameter names or shapes do not match the model config".into()));
        }
        let weights = path.with_file_name(&meta.weights_file);
        let blob = fs::read(&weights).map_err(|e| VonError::io(&weights, e))?;
        let numel = model.params.numel();
        if blob.len() != numel * 8 {
            return Err(VonError::Checkpoint(format!("weight blob has {} bytes, expected {}", blob.len(), numel * 8)));
        }
        if hex_digest(&blob) != meta.weights_sha256 {
            return Err(VonError::Checkpoint("weight blob checksum mismatch".into()));
        }
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for t in model.params.tensors_mut() {
            for v in t.data_mut().iter_mut() {
                *v = values.next().unwrap();
            }
        }
        let info = CheckpointInfo {
            metric: meta.metric,
            metric_params: meta.metric_params,
            train_config_hash: meta.train_config_hash,
            epochs_completed: meta.epochs_completed,
        };
        Ok((model, info))
    }
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub metric: Metric,
    #[serde(default)]
    pub metric_params: MetricParams,
    pub train_config_hash: Option<String>,
    pub epochs_completed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    format: u32,
    model: ModelConfig,
    metric: Metric,
    #[serde(default)]
    metric_params: MetricParams,
    train_config_hash: Option<String>,
    epochs_completed: usize,
    params: Vec<(String, Vec<usize>)>,
    weights_file: String,
    weights_sha256: String,
}

pub fn weights_path(meta_path: &Path) -> PathBuf {
    meta_path.with_extension("bin")
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::validate_ordering;

    pub(crate) fn tiny(variant: DecoderVariant) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig { input_dim: 2, hidden_dim: 8, num_layers: 1, num_heads: 2, ff_dim: 16, no_encoder: false },
            variant,
        }
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> PointSet {
        PointSet::new((0..2 * n).map(|_| rng.gen()).collect(), n, 2).unwrap()
    }

    const VARIANTS: [DecoderVariant; 4] = [DecoderVariant::Attention, DecoderVariant::Mlp, DecoderVariant::Conv, DecoderVariant::None];

    #[test]
    fn encoding_mean_and_singleton() {
        let m = Model::new(tiny(DecoderVariant::Mlp), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = m.encode(&random_set(&mut rng, 6)).unwrap();
        for k in 0..enc.d {
            let mean = (0..enc.n).map(|i| enc.row(i)[k]).sum::<f64>() / enc.n as f64;
            assert!((mean - enc.h_bar[k]).abs() <= 1e-6);
        }
        let one = m.encode(&random_set(&mut rng, 1)).unwrap();
        assert_eq!(one.h, one.h_bar);
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for no_encoder in [false, true] {
            let mut cfg = tiny(DecoderVariant::Mlp);
            cfg.encoder.no_encoder = no_encoder;
            let m = Model::new(cfg, 4).unwrap();
            let ps = random_set(&mut rng, 9);
            let sigma = [3, 8, 0, 1, 7, 2, 6, 5, 4];
            let a = m.encode(&ps).unwrap();
            let b = m.encode(&ps.subset(&sigma).unwrap()).unwrap();
            for (k, &s) in sigma.iter().enumerate() {
                for (x, y) in b.row(k).iter().zip(a.row(s)) {
                    assert!((x - y).abs() <= 1e-9);
                }
            }
            for (x, y) in a.h_bar.iter().zip(&b.h_bar) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn duplicate_points_get_identical_latents_and_context_weights() {
        let m = Model::new(tiny(DecoderVariant::Attention), 5).unwrap();
        let ps = PointSet::new(vec![0.1, 0.2, 0.7, 0.3, 0.1, 0.2], 3, 2).unwrap();
        let enc = m.encode(&ps).unwrap();
        assert_eq!(enc.row(0), enc.row(2));
        let out = m.step_outputs(&enc, &DecoderState::new(3)).unwrap();
        assert_eq!(out.context_weights[0], out.context_weights[2]);
        assert!((out.context_weights.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn probabilities_are_normalized_and_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for v in VARIANTS {
            let m = Model::new(tiny(v), 7).unwrap();
            let ps = random_set(&mut rng, 6);
            let enc = m.encode(&ps).unwrap();
            let mut st = DecoderState::new(6);
            st.push(4);
            st.push(1);
            let p = m.step_outputs(&enc, &st).unwrap().probabilities;
            assert_eq!((p[4], p[1]), (0.0, 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            for i in [0, 2, 3] {
                st.push(i);
            }
            let p = m.step_outputs(&enc, &st).unwrap().probabilities;
            assert_eq!(p[5], 1.0);
            st.push(5);
            assert!(matches!(m.step_outputs(&enc, &st), Err(VonError::Exhausted)));
        }
    }

    #[test]
    fn decode_sequence_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in VARIANTS {
            let m = Model::new(tiny(v), 9).unwrap();
            let (o, lp) = m.decode_sequence(&random_set(&mut rng, 1), DecodeMode::Greedy, &mut rng).unwrap();
            assert_eq!((o.as_slice(), lp), (&[0][..], 0.0));
            let ps = random_set(&mut rng, 50);
            let (a, lpa) = m.decode_sequence(&ps, DecodeMode::Greedy, &mut rng).unwrap();
            let (b, _) = m.decode_sequence(&ps, DecodeMode::Greedy, &mut rng).unwrap();
            assert!(validate_ordering(a.as_slice(), 50));
            assert_eq!(a, b);
            assert!(lpa <= 0.0);
        }
    }

    #[test]
    fn seeded_sampling_repeats() {
        let m = Model::new(tiny(DecoderVariant::Mlp), 10).unwrap();
        let ps = random_set(&mut ChaCha8Rng::seed_from_u64(11), 12);
        let a = m.decode_sequence(&ps, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let b = m.decode_sequence(&ps, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stepwise_decode_matches_sequence_decode() {
        let m = Model::new(tiny(DecoderVariant::Conv), 13).unwrap();
        let ps = random_set(&mut ChaCha8Rng::seed_from_u64(14), 7);
        let (o, total) = m.decode_sequence(&ps, DecodeMode::Greedy, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let enc = m.encode(&ps).unwrap();
        let mut st = DecoderState::new(7);
        let mut sum = 0.0;
        for _ in 0..7 {
            sum += m.decode_step(&enc, &mut st, DecodeMode::Greedy, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().1;
        }
        assert_eq!(st.selected, o.as_slice());
        assert!((sum - total).abs() <= 1e-12);
    }

    #[test]
    fn graph_rollout_agrees_with_stepwise_rollout() {
        let m = Model::new(tiny(DecoderVariant::Attention), 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let sets: Vec<PointSet> = (0..3).map(|_| random_set(&mut rng, 5)).collect();
        let refs: Vec<&PointSet> = sets.iter().collect();
        let step = m.rollout(&refs, &mut Choice::<ChaCha8Rng>::Greedy).unwrap();
        let mut g = Graph::new();
        let pv = m.params().bind(&mut g);
        let (traj, total) = m.rollout_graph(&mut g, &pv, &refs, &mut Choice::<ChaCha8Rng>::Greedy).unwrap();
        for (b, (o, lp)) in step.iter().enumerate() {
            assert_eq!(o.as_slice(), &traj[b][..]);
            assert!((g.value(total).data()[b] - lp).abs() <= 1e-12);
        }
    }

    #[test]
    fn reposition_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ps = random_set(&mut rng, 4);
        let st = DecoderState::new(4);

        let none = Model::new(tiny(DecoderVariant::None), 1).unwrap();
        let enc = none.encode(&ps).unwrap();
        assert_eq!(none.step_outputs(&enc, &st).unwrap().repositioned, enc.h);

        let mut mlp = Model::new(tiny(DecoderVariant::Mlp), 1).unwrap();
        for (name, t) in mlp.params.names().to_vec().iter().zip(mlp.params.tensors_mut()) {
            if name.starts_with("dec.rep.") && name != "dec.rep.b1" {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let enc = mlp.encode(&ps).unwrap();
        assert!(mlp.step_outputs(&enc, &st).unwrap().repositioned.iter().all(|&v| v == 0.0));

        // with the additive correction switched off only the residual survives
        let mut att = Model::new(tiny(DecoderVariant::Attention), 1).unwrap();
        for (name, t) in att.params.names().to_vec().iter().zip(att.params.tensors_mut()) {
            if name.starts_with("dec.rep.proj") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let enc = att.encode(&ps).unwrap();
        assert_eq!(att.step_outputs(&enc, &st).unwrap().repositioned, enc.h);
    }

    fn forced_log_prob(m: &Model, sets: &[&PointSet], traj: &[Vec<usize>]) -> f64 {
        let mut g = Graph::new();
        let pv = m.params().bind(&mut g);
        let (_, total) = m.rollout_graph(&mut g, &pv, sets, &mut Choice::<ChaCha8Rng>::Forced(traj)).unwrap();
        g.value(total).data().iter().sum()
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let sets: Vec<PointSet> = (0..2).map(|_| random_set(&mut rng, 4)).collect();
        let refs: Vec<&PointSet> = sets.iter().collect();
        let traj = vec![vec![2, 0, 3, 1], vec![1, 3, 0, 2]];
        for v in VARIANTS {
            let mut m = Model::new(tiny(v), 20).unwrap();
            let mut g = Graph::new();
            let pv = m.params().bind(&mut g);
            let (_, total) = m.rollout_graph(&mut g, &pv, &refs, &mut Choice::<ChaCha8Rng>::Forced(&traj)).unwrap();
            let loss = g.sum(total);
            let grads = pv.grads(m.params(), &g.backward(loss));
            let h = 1e-6;
            for k in 0..m.params().len() {
                for i in (0..grads[k].len()).step_by(7) {
                    let orig = m.params().tensors()[k].data()[i];
                    m.params_mut().tensors_mut()[k].data_mut()[i] = orig + h;
                    let up = forced_log_prob(&m, &refs, &traj);
                    m.params_mut().tensors_mut()[k].data_mut()[i] = orig - h;
                    let down = forced_log_prob(&m, &refs, &traj);
                    m.params_mut().tensors_mut()[k].data_mut()[i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let name = &m.params().names()[k];
                    assert!((fd - grads[k][i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{v} {name}[{i}]: fd {fd} vs {}", grads[k][i]);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = Model::new(tiny(DecoderVariant::Conv), 18).unwrap();
        let info = CheckpointInfo {
            metric: Metric::Tsp,
            metric_params: MetricParams::default(),
            train_config_hash: Some("abc".into()),
            epochs_completed: 3,
        };
        m.save(&path, &info).unwrap();
        let (back, info2) = Model::load(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(info2, info);

        let mut blob = fs::read(weights_path(&path)).unwrap();
        blob[0] ^= 1;
        fs::write(weights_path(&path), &blob).unwrap();
        assert!(matches!(Model::load(&path), Err(VonError::Checkpoint(_))));

        m.save(&path, &info).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"hidden_dim\": 8", "\"hidden_dim\": 16");
        fs::write(&path, text).unwrap();
        assert!(matches!(Model::load(&path), Err(VonError::Checkpoint(_))));
    }
}

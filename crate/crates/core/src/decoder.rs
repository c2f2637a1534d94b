//! Step-wise decoding: context, repositioning, masked matching.
//!
//! Every step sees the whole batch at the same step count `t`, so all
//! tensors stay rectangular.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, Linear, Mha, Norm};
use crate::error::{Result, VonError};
use crate::nn::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Logits are squashed into `[-CLIP, CLIP]` before masking.
pub const LOGIT_CLIP: f64 = 10.0;
pub const CONV_CHANNELS: usize = 4;
pub const CONV_WIDTH: usize = 3;
const MATCH_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecoderVariant {
    #[serde(rename = "von-a")]
    Attention,
    #[serde(rename = "von-m")]
    Mlp,
    #[serde(rename = "von-c")]
    Conv,
    /// Ablation: repositioning is the identity.
    #[serde(rename = "none")]
    None,
}

impl DecoderVariant {
    pub fn key(self) -> &'static str {
        match self {
            DecoderVariant::Attention => "von-a",
            DecoderVariant::Mlp => "von-m",
            DecoderVariant::Conv => "von-c",
            DecoderVariant::None => "none",
        }
    }
}

impl fmt::Display for DecoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DecoderVariant {
    type Err = VonError;

    fn from_str(s: &str) -> Result<Self> {
        [DecoderVariant::Attention, DecoderVariant::Mlp, DecoderVariant::Conv, DecoderVariant::None]
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| VonError::Config(format!("unknown decoder variant `{s}` (expected von-a, von-m, von-c or none)")))
    }
}

/// Per-instance progress through a decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderState {
    pub selected: Vec<usize>,
    pub mask: Vec<bool>,
}

impl DecoderState {
    pub fn new(n: usize) -> Self {
        Self { selected: Vec::with_capacity(n), mask: vec![false; n] }
    }

    pub fn t(&self) -> usize {
        self.selected.len()
    }

    pub fn n(&self) -> usize {
        self.mask.len()
    }

    pub fn is_done(&self) -> bool {
        self.selected.len() == self.mask.len()
    }

    pub fn first(&self) -> Option<usize> {
        self.selected.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.selected.last().copied()
    }

    pub fn push(&mut self, i: usize) {
        assert!(!self.mask[i], "index {i} selected twice");
        self.mask[i] = true;
        self.selected.push(i);
    }
}

#[derive(Debug, Clone)]
enum Reposition {
    Attention { q1: ParamId, k1: ParamId, q2: ParamId, k2: ParamId, proj: Linear },
    Mlp { w1c: ParamId, w1h: ParamId, b1: ParamId, out: Linear },
    Conv { kernel: ParamId, bias: ParamId, readout: ParamId },
    None,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderLayout {
    first_placeholder: ParamId,
    last_placeholder: ParamId,
    ctx_q: ParamId,
    ctx_k: ParamId,
    ctx_v: ParamId,
    ctx_o: ParamId,
    reposition: Reposition,
    matching: Vec<(Mha, Norm)>,
    match_q: ParamId,
    match_k: ParamId,
    d: usize,
    heads: usize,
}

/// Step-invariant tensors derived from the encoder output.
pub(crate) struct Prepared {
    pub h: Var,
    pub h_bar: Var,
    ctx_k: Var,
    ctx_v: Var,
    /// `h W1h` for the MLP variant, `h K2` for the attention variant.
    extra: Option<Var>,
}

/// [`Prepared`] detached from its graph, for re-insertion into fresh per-step graphs.
#[derive(Clone)]
pub(crate) struct PreparedValues {
    h: Tensor,
    h_bar: Tensor,
    ctx_k: Tensor,
    ctx_v: Tensor,
    extra: Option<Tensor>,
}

impl Prepared {
    pub(crate) fn values(&self, g: &Graph) -> PreparedValues {
        PreparedValues {
            h: g.value(self.h).clone(),
            h_bar: g.value(self.h_bar).clone(),
            ctx_k: g.value(self.ctx_k).clone(),
            ctx_v: g.value(self.ctx_v).clone(),
            extra: self.extra.map(|e| g.value(e).clone()),
        }
    }
}

impl PreparedValues {
    pub(crate) fn insert(&self, g: &mut Graph) -> Prepared {
        Prepared {
            h: g.input(self.h.clone()),
            h_bar: g.input(self.h_bar.clone()),
            ctx_k: g.input(self.ctx_k.clone()),
            ctx_v: g.input(self.ctx_v.clone()),
            extra: self.extra.as_ref().map(|e| g.input(e.clone())),
        }
    }

    pub(crate) fn h(&self) -> &Tensor {
        &self.h
    }

    pub(crate) fn h_bar(&self) -> &Tensor {
        &self.h_bar
    }
}

/// Outputs of one decoding step, all batched over instances.
pub(crate) struct StepVars {
    /// `[B, d]`
    pub context: Var,
    /// `[B, n]` attention weights behind the context.
    pub context_weights: Var,
    /// `[B, n, d]`
    pub repositioned: Var,
    /// `[B, n]` masked log-probabilities.
    pub log_probs: Var,
}

impl DecoderLayout {
    pub(crate) fn new<R: Rng>(cfg: &EncoderConfig, variant: DecoderVariant, store: &mut ParamStore, rng: &mut R) -> Self {
        let (d, bound) = (cfg.hidden_dim, cfg.init_bound());
        let first_placeholder = store.uniform("dec.first_placeholder", vec![d], bound, rng);
        let last_placeholder = store.uniform("dec.last_placeholder", vec![d], bound, rng);
        let ctx_q = store.uniform("dec.ctx.wq", vec![3 * d, d], bound, rng);
        let ctx_k = store.uniform("dec.ctx.wk", vec![d, d], bound, rng);
        let ctx_v = store.uniform("dec.ctx.wv", vec![d, d], bound, rng);
        let ctx_o = store.uniform("dec.ctx.wo", vec![d, d], bound, rng);
        let reposition = match variant {
            DecoderVariant::Attention => Reposition::Attention {
                q1: store.uniform("dec.rep.q1", vec![2 * d, d], bound, rng),
                k1: store.uniform("dec.rep.k1", vec![d, d], bound, rng),
                q2: store.uniform("dec.rep.q2", vec![2 * d, d], bound, rng),
                k2: store.uniform("dec.rep.k2", vec![d, d], bound, rng),
                proj: Linear::new(store, "dec.rep.proj", (2 * d, d), true, bound, rng),
            },
            DecoderVariant::Mlp => Reposition::Mlp {
                w1c: store.uniform("dec.rep.w1c", vec![d, d], bound, rng),
                w1h: store.uniform("dec.rep.w1h", vec![d, d], bound, rng),
                b1: store.uniform("dec.rep.b1", vec![d], bound, rng),
                out: Linear::new(store, "dec.rep.out", (d, d), true, bound, rng),
            },
            DecoderVariant::Conv => Reposition::Conv {
                kernel: store.uniform("dec.rep.kernel", vec![CONV_CHANNELS, CONV_WIDTH], bound, rng),
                bias: store.add("dec.rep.bias", Tensor::zeros(vec![d])),
                readout: store.uniform("dec.rep.readout", vec![2 * d - CONV_WIDTH + 1, d], bound, rng),
            },
            DecoderVariant::None => Reposition::None,
        };
        let matching = (0..MATCH_LAYERS)
            .map(|l| {
                (Mha::new(store, &format!("dec.match{l}.attn"), d, bound, rng), Norm::new(store, &format!("dec.match{l}.norm"), d))
            })
            .collect();
        let match_q = store.uniform("dec.match.wq", vec![d, d], bound, rng);
        let match_k = store.uniform("dec.match.wk", vec![d, d], bound, rng);
        Self {
            first_placeholder,
            last_placeholder,
            ctx_q,
            ctx_k,
            ctx_v,
            ctx_o,
            reposition,
            matching,
            match_q,
            match_k,
            d,
            heads: cfg.num_heads,
        }
    }

    pub(crate) fn prepare(&self, g: &mut Graph, pv: &Bound, h: Var, h_bar: Var) -> Prepared {
        let k = g.matmul(h, pv.var(self.ctx_k));
        let v = g.matmul(h, pv.var(self.ctx_v));
        let ctx_k = g.split_heads(k, self.heads);
        let ctx_v = g.split_heads(v, self.heads);
        let extra = match &self.reposition {
            Reposition::Mlp { w1h, .. } => Some(g.matmul(h, pv.var(*w1h))),
            Reposition::Attention { k2, .. } => Some(g.matmul(h, pv.var(*k2))),
            _ => None,
        };
        Prepared { h, h_bar, ctx_k, ctx_v, extra }
    }

    fn placeholder(&self, g: &mut Graph, pv: &Bound, p: ParamId, b: usize) -> Var {
        let v = g.reshape(pv.var(p), vec![1, self.d]);
        let v = g.broadcast_rows(v, b);
        g.reshape(v, vec![b, self.d])
    }

    /// Latents of the first and most recent picks, or the placeholders before any pick.
    fn ordered_summary(&self, g: &mut Graph, pv: &Bound, pre: &Prepared, states: &[DecoderState]) -> (Var, Var) {
        let b = states.len();
        if states[0].t() == 0 {
            let f = self.placeholder(g, pv, self.first_placeholder, b);
            let l = self.placeholder(g, pv, self.last_placeholder, b);
            (f, l)
        } else {
            let first: Vec<usize> = states.iter().map(|s| s.first().unwrap()).collect();
            let last: Vec<usize> = states.iter().map(|s| s.last().unwrap()).collect();
            (g.gather_rows(pre.h, &first), g.gather_rows(pre.h, &last))
        }
    }

    /// Context attention over all points with the query built from `[h_bar, h_first, h_last]`.
    fn context(&self, g: &mut Graph, pv: &Bound, pre: &Prepared, first: Var, last: Var) -> (Var, Var) {
        let b = g.shape(pre.h_bar)[0];
        let n = g.shape(pre.h)[1];
        let dk = self.d / self.heads;
        let query_in = g.concat_last(&[pre.h_bar, first, last]);
        let q = g.matmul(query_in, pv.var(self.ctx_q));
        let q = g.reshape(q, vec![b, 1, self.d]);
        let q = g.split_heads(q, self.heads);
        let s = g.bmm(q, pre.ctx_k, true);
        let s = g.scale(s, 1.0 / (dk as f64).sqrt());
        let a = g.softmax(s);
        let o = g.bmm(a, pre.ctx_v, false);
        let o = g.merge_heads(o, self.heads);
        let o = g.matmul(o, pv.var(self.ctx_o));
        let h_c = g.reshape(o, vec![b, self.d]);
        // head-averaged weights, [B*H, 1, n] -> [B, n]
        let per_head = g.reshape(a, vec![b, self.heads, n]);
        let w = g.mean_axis1(per_head);
        (h_c, w)
    }

    fn reposition(&self, g: &mut Graph, pv: &Bound, pre: &Prepared, h_c: Var, first: Var, last: Var) -> Var {
        let (b, n, d) = {
            let s = g.shape(pre.h);
            (s[0], s[1], s[2])
        };
        match &self.reposition {
            Reposition::None => pre.h,
            Reposition::Mlp { w1c, b1, out, .. } => {
                let c = g.matmul(h_c, pv.var(*w1c));
                let c = g.broadcast_rows(c, n);
                let pre_act = g.add(pre.extra.unwrap(), c);
                let pre_act = g.add_bias(pre_act, pv.var(*b1));
                let hidden = g.relu(pre_act);
                out.apply(g, pv, hidden)
            }
            Reposition::Attention { q1, k1, q2, proj, .. } => {
                let scale = 1.0 / (d as f64).sqrt();
                let h_o = g.concat_last(&[first, last]);
                let qa = g.matmul(h_o, pv.var(*q1));
                let qa = g.reshape(qa, vec![b, 1, d]);
                let ka = g.matmul(h_c, pv.var(*k1));
                let ka = g.reshape(ka, vec![b, 1, d]);
                let a1 = g.bmm(qa, ka, true);
                let a1 = g.scale(a1, scale);
                let a1 = g.sigmoid(a1);
                let a1 = g.reshape(a1, vec![b, 1]);
                let a1 = g.broadcast_rows(a1, n);
                let a1 = g.reshape(a1, vec![b, n]);
                let qb = g.matmul(h_o, pv.var(*q2));
                let qb = g.reshape(qb, vec![b, 1, d]);
                let a2 = g.bmm(qb, pre.extra.unwrap(), true);
                let a2 = g.scale(a2, scale);
                let a2 = g.sigmoid(a2);
                let a2 = g.reshape(a2, vec![b, n]);
                let coef = g.mul(a1, a2);
                let coef = g.reshape(coef, vec![b * n]);
                let p = proj.apply(g, pv, h_o);
                let p = g.broadcast_rows(p, n);
                let p = g.reshape(p, vec![b * n, d]);
                let p = g.scale_rows(p, coef);
                let p = g.reshape(p, vec![b, n, d]);
                g.add(p, pre.h)
            }
            Reposition::Conv { kernel, bias, readout } => {
                let c = g.broadcast_rows(h_c, n);
                let x = g.concat_last(&[c, pre.h]);
                let x = g.reshape(x, vec![b * n, 2 * d]);
                let y = g.conv1d(x, pv.var(*kernel));
                let y = g.matmul(y, pv.var(*readout));
                let y = g.add_bias(y, pv.var(*bias));
                g.reshape(y, vec![b, n, d])
            }
        }
    }

    /// Two attention glimpses from the context over `[h_c; repositioned]`, then clipped compatibility logits.
    fn match_log_probs(&self, g: &mut Graph, pv: &Bound, h_c: Var, rep: Var, states: &[DecoderState]) -> Var {
        let (b, n) = (states.len(), states[0].n());
        // the context is the only query; it attends over the repositioned set and itself
        let mut zc = g.reshape(h_c, vec![b, 1, self.d]);
        for (attn, norm) in &self.matching {
            let tok = g.concat_axis1(zc, rep);
            let a = attn.attend(g, pv, zc, tok, self.heads);
            let s = g.add(zc, a);
            zc = norm.apply(g, pv, s);
        }
        let q = g.matmul(zc, pv.var(self.match_q));
        let k = g.matmul(rep, pv.var(self.match_k));
        let logits = g.bmm(q, k, true);
        let logits = g.reshape(logits, vec![b, n]);
        let logits = g.scale(logits, 1.0 / (self.d as f64).sqrt());
        let logits = g.tanh(logits);
        let logits = g.scale(logits, LOGIT_CLIP);
        let blocked: Vec<bool> = states.iter().flat_map(|s| s.mask.iter().copied()).collect();
        g.masked_log_softmax(logits, blocked)
    }

    pub(crate) fn step(&self, g: &mut Graph, pv: &Bound, pre: &Prepared, states: &[DecoderState]) -> Result<StepVars> {
        if states.iter().any(DecoderState::is_done) {
            return Err(VonError::Exhausted);
        }
        assert!(states.iter().all(|s| s.t() == states[0].t()), "batched states must advance together");
        let (first, last) = self.ordered_summary(g, pv, pre, states);
        let (context, context_weights) = self.context(g, pv, pre, first, last);
        let repositioned = self.reposition(g, pv, pre, context, first, last);
        let log_probs = self.match_log_probs(g, pv, context, repositioned, states);
        Ok(StepVars { context, context_weights, repositioned, log_probs })
    }
}

/// How the next point is chosen from a row of log-probabilities.
pub enum Choice<'a, R: Rng> {
    Greedy,
    Sample(&'a mut R),
    /// Replays fixed trajectories, one per batch entry.
    Forced(&'a [Vec<usize>]),
}

/// Highest-probability feasible index; ties go to the lowest index.
pub fn argmax_feasible(log_probs: &[f64]) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in log_probs.iter().enumerate() {
        if v > f64::NEG_INFINITY && (best == usize::MAX || v > log_probs[best]) {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw over the feasible entries.
pub fn sample_feasible<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (i, &v) in log_probs.iter().enumerate() {
        if v == f64::NEG_INFINITY {
            continue;
        }
        acc += v.exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl<R: Rng> Choice<'_, R> {
    pub(crate) fn pick(&mut self, b: usize, t: usize, row: &[f64]) -> usize {
        match self {
            Choice::Greedy => argmax_feasible(row),
            Choice::Sample(rng) => sample_feasible(row, *rng),
            Choice::Forced(traj) => traj[b][t],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_argmax_with_low_index_ties() {
        let lp: Vec<f64> = [0.2f64, 0.5, 0.3].iter().map(|p| p.ln()).collect();
        assert_eq!(argmax_feasible(&lp), 1);
        assert_eq!(argmax_feasible(&[-1.0, -0.5, -0.5]), 1);
        assert_eq!(argmax_feasible(&[f64::NEG_INFINITY, -2.0, f64::NEG_INFINITY]), 1);
    }

    #[test]
    fn sampling_never_returns_blocked_entries_and_follows_probabilities() {
        let lp = vec![(0.25f64).ln(), f64::NEG_INFINITY, (0.75f64).ln()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_feasible(&lp, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        let frac = counts[0] as f64 / 20_000.0;
        assert!((frac - 0.25).abs() < 0.02, "{frac}");
    }

    #[test]
    fn variant_keys() {
        for v in [DecoderVariant::Attention, DecoderVariant::Mlp, DecoderVariant::Conv, DecoderVariant::None] {
            assert_eq!(v.key().parse::<DecoderVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.key()));
        }
    }

    #[test]
    fn state_tracks_mask() {
        let mut s = DecoderState::new(3);
        s.push(2);
        s.push(0);
        assert_eq!((s.t(), s.first(), s.last()), (2, Some(2), Some(0)));
        assert_eq!(s.mask, vec![true, false, true]);
    }
}

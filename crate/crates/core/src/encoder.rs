//! Permutation-equivariant attention encoder. No positional encoding: the
//! input is a set, and every layer treats its rows symmetrically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VonError};
use crate::nn::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::num_layers")]
    pub num_layers: usize,
    #[serde(default = "defaults::num_heads")]
    pub num_heads: usize,
    #[serde(default = "defaults::ff_dim")]
    pub ff_dim: usize,
    /// Ablation: latents are the projected inputs, no attention layers.
    #[serde(default)]
    pub no_encoder: bool,
}

mod defaults {
    pub fn hidden_dim() -> usize {
        128
    }
    pub fn num_layers() -> usize {
        3
    }
    pub fn num_heads() -> usize {
        8
    }
    pub fn ff_dim() -> usize {
        512
    }
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: defaults::hidden_dim(),
            num_layers: defaults::num_layers(),
            num_heads: defaults::num_heads(),
            ff_dim: defaults::ff_dim(),
            no_encoder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(VonError::Config(format!("encoder {name} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(VonError::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub(crate) fn init_bound(&self) -> f64 {
        1.0 / (self.hidden_dim as f64).sqrt()
    }
}

/// Query and key maps of one attention head, both `d_h x d_h`, applied as `h W`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
}

fn row_times(h: &[f64], w: &Tensor) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    (0..c).map(|j| (0..r).map(|i| h[i] * w.data()[i * c + j]).sum()).collect()
}

/// Unnormalized attention between two latents: `(h_i W_q) . (h_j W_k)`.
pub fn attention_score(p: &AttentionParams, h_i: &[f64], h_j: &[f64]) -> Result<f64> {
    let d = p.w_q.shape()[0];
    for (what, got) in [("h_i", h_i.len()), ("h_j", h_j.len()), ("W_k rows", p.w_k.shape()[0])] {
        if got != d {
            return Err(VonError::DimensionMismatch { what: what.into(), expected: d, got });
        }
    }
    let q = row_times(h_i, &p.w_q);
    let k = row_times(h_j, &p.w_k);
    Ok(q.iter().zip(&k).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        shape: (usize, usize),
        bias: bool,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.uniform(format!("{name}.w"), vec![shape.0, shape.1], bound, rng);
        let b = bias.then(|| store.uniform(format!("{name}.b"), vec![shape.1], bound, rng));
        Self { w, b }
    }

    pub(crate) fn apply(&self, g: &mut Graph, pv: &Bound, x: Var) -> Var {
        let y = g.matmul(x, pv.var(self.w));
        match self.b {
            Some(b) => g.add_bias(y, pv.var(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::new(vec![d], vec![1.0; d]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![d]));
        Self { gain, bias }
    }

    pub(crate) fn apply(&self, g: &mut Graph, pv: &Bound, x: Var) -> Var {
        g.layer_norm(x, pv.var(self.gain), pv.var(self.bias))
    }
}

/// Multi-head self-attention with scaled softmax inside each head.
#[derive(Debug, Clone)]
pub(crate) struct Mha {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

impl Mha {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, bound: f64, rng: &mut R) -> Self {
        let mut m = |p: &str| store.uniform(format!("{name}.{p}"), vec![d, d], bound, rng);
        Self { wq: m("wq"), wk: m("wk"), wv: m("wv"), wo: m("wo") }
    }

    pub(crate) fn head_params(&self, store: &ParamStore) -> AttentionParams {
        AttentionParams { w_q: store.get(self.wq).clone(), w_k: store.get(self.wk).clone() }
    }

    /// `[B, n, d] -> [B, n, d]`.
    pub(crate) fn self_attend(&self, g: &mut Graph, pv: &Bound, x: Var, heads: usize) -> Var {
        self.attend(g, pv, x, x, heads)
    }

    /// Queries `[B, m, d]` over keys and values `[B, n, d]`, giving `[B, m, d]`.
    pub(crate) fn attend(&self, g: &mut Graph, pv: &Bound, query: Var, kv: Var, heads: usize) -> Var {
        let d = *g.shape(query).last().unwrap();
        let dk = d / heads;
        let q = g.matmul(query, pv.var(self.wq));
        let k = g.matmul(kv, pv.var(self.wk));
        let v = g.matmul(kv, pv.var(self.wv));
        let (q, k, v) = (g.split_heads(q, heads), g.split_heads(k, heads), g.split_heads(v, heads));
        let s = g.bmm(q, k, true);
        let s = g.scale(s, 1.0 / (dk as f64).sqrt());
        let a = g.softmax(s);
        let o = g.bmm(a, v, false);
        let o = g.merge_heads(o, heads);
        g.matmul(o, pv.var(self.wo))
    }
}

#[derive(Debug, Clone)]
struct Layer {
    attn: Mha,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayout {
    input: Linear,
    layers: Vec<Layer>,
    heads: usize,
}

impl EncoderLayout {
    pub(crate) fn new<R: Rng>(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let (d, bound) = (cfg.hidden_dim, cfg.init_bound());
        let input = Linear::new(store, "enc.input", (cfg.input_dim, d), true, bound, rng);
        let layers = if cfg.no_encoder {
            Vec::new()
        } else {
            (0..cfg.num_layers)
                .map(|l| {
                    let p = format!("enc.layer{l}");
                    Layer {
                        attn: Mha::new(store, &format!("{p}.attn"), d, bound, rng),
                        norm1: Norm::new(store, &format!("{p}.norm1"), d),
                        ff1: Linear::new(store, &format!("{p}.ff1"), (d, cfg.ff_dim), true, bound, rng),
                        ff2: Linear::new(store, &format!("{p}.ff2"), (cfg.ff_dim, d), true, bound, rng),
                        norm2: Norm::new(store, &format!("{p}.norm2"), d),
                    }
                })
                .collect()
        };
        Self { input, layers, heads: cfg.num_heads }
    }

    pub(crate) fn first_attention(&self) -> Option<&Mha> {
        self.layers.first().map(|l| &l.attn)
    }

    /// `x: [B, n, input_dim]` to latents `[B, n, d_h]` and their mean `[B, d_h]`.
    pub(crate) fn forward(&self, g: &mut Graph, pv: &Bound, x: Var) -> (Var, Var) {
        let mut h = self.input.apply(g, pv, x);
        for layer in &self.layers {
            let a = layer.attn.self_attend(g, pv, h, self.heads);
            let s = g.add(h, a);
            h = layer.norm1.apply(g, pv, s);
            let f = layer.ff1.apply(g, pv, h);
            let f = g.relu(f);
            let f = layer.ff2.apply(g, pv, f);
            let s = g.add(h, f);
            h = layer.norm2.apply(g, pv, s);
        }
        let h_bar = g.mean_axis1(h);
        (h, h_bar)
    }
}

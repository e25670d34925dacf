//! Sequence-only comparison models. Both read only `Batch::history`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurize::N_FEATURES;
use crate::model::{Batch, Network, add_linear, dropout, linear, param, series_decompose};
use crate::nn::{ParamStore, Tape, Tensor, Var, uniform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DLinearConfig {
    pub history_len: usize,
    pub decomp_kernel: usize,
    pub hidden: usize,
}

impl Default for DLinearConfig {
    fn default() -> Self {
        Self {
            history_len: 4,
            decomp_kernel: 3,
            hidden: 16,
        }
    }
}

/// Decomposition-linear model: one linear map over the flattened seasonal
/// part, one over the trend, summed, then a linear head.
#[derive(Debug, Clone)]
pub struct DLinear {
    pub config: DLinearConfig,
    pub params: ParamStore,
}

impl DLinear {
    pub fn new(config: DLinearConfig, seed: u64) -> Result<Self> {
        if config.history_len == 0 || config.decomp_kernel.is_multiple_of(2) {
            return Err(Error::validation("DLinear needs K ≥ 1 and an odd kernel"));
        }
        if config.decomp_kernel > 1 && config.decomp_kernel / 2 >= config.history_len {
            return Err(Error::validation("DLinear kernel wider than the history"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let flat = config.history_len * N_FEATURES;
        add_linear(&mut s, &mut rng, "dlinear.seasonal", flat, config.hidden);
        add_linear(&mut s, &mut rng, "dlinear.trend", flat, config.hidden);
        add_linear(&mut s, &mut rng, "dlinear.head", config.hidden, 2);
        Ok(Self { config, params: s })
    }

    pub fn forward(&self, t: &mut Tape, history: Var) -> Result<Var> {
        let shape = t.shape(history).to_vec();
        let k = self.config.history_len;
        if shape.len() != 3 || shape[1] != k || shape[2] != N_FEATURES {
            return Err(Error::Shape(format!("history {shape:?}, expected [B, {k}, {N_FEATURES}]")));
        }
        let (seasonal, trend) = series_decompose(t, history, self.config.decomp_kernel)?;
        let s = t.reshape(seasonal, &[shape[0], k * N_FEATURES]);
        let tr = t.reshape(trend, &[shape[0], k * N_FEATURES]);
        let a = linear(t, &self.params, "dlinear.seasonal", s);
        let b = linear(t, &self.params, "dlinear.trend", tr);
        let h = t.add(a, b);
        Ok(linear(t, &self.params, "dlinear.head", h))
    }
}

impl Network for DLinear {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logits(&self, tape: &mut Tape, batch: &Batch, _: Option<&mut ChaCha8Rng>) -> Var {
        let h = tape.leaf(batch.history.clone());
        self.forward(tape, h).expect("batch shape checked by caller")
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "dlinear", "config": self.config })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub history_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            history_len: 4,
            d_model: 32,
            n_heads: 4,
            n_enc_layers: 2,
            dropout: 0.1,
        }
    }
}

/// Full-attention encoder stack plus one decoder layer whose single learned
/// query attends over the encoder output.
#[derive(Debug, Clone)]
pub struct VanillaTransformer {
    pub config: TransformerConfig,
    pub params: ParamStore,
}

fn add_attention(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        add_linear(s, rng, &format!("{name}.{p}"), d, d);
    }
}

fn add_layer_norm(s: &mut ParamStore, name: &str, d: usize) {
    s.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0));
    s.add(format!("{name}.beta"), Tensor::zeros(&[d]));
}

fn layer_norm(t: &mut Tape, s: &ParamStore, name: &str, x: Var) -> Var {
    let g = param(t, s, &format!("{name}.gamma"));
    let b = param(t, s, &format!("{name}.beta"));
    t.layer_norm(x, g, b)
}

/// Output of [`attention`] together with the per-head weight maps.
pub struct Attended {
    pub out: Var,
    /// `[B, Lq, Lk]` per head.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention of `q_in[B, Lq, d]` over
/// `kv_in[B, Lk, d]`.
pub fn attention(t: &mut Tape, s: &ParamStore, name: &str, q_in: Var, kv_in: Var, heads: usize) -> Attended {
    let (qs, ks) = (t.shape(q_in).to_vec(), t.shape(kv_in).to_vec());
    let (b, lq, lk, d) = (qs[0], qs[1], ks[1], qs[2]);
    let dh = d / heads;
    let proj = |t: &mut Tape, x: Var, rows: usize, p: &str| {
        let flat = t.reshape(x, &[b * rows, d]);
        let y = linear(t, s, &format!("{name}.{p}"), flat);
        t.reshape(y, &[b, rows, d])
    };
    let q = proj(t, q_in, lq, "q");
    let k = proj(t, kv_in, lk, "k");
    let v = proj(t, kv_in, lk, "v");
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_last(q, h * dh, dh);
        let kh = t.slice_last(k, h * dh, dh);
        let vh = t.slice_last(v, h * dh, dh);
        let kt = t.transpose12(kh);
        let scores = t.bmm(qh, kt);
        let scores = t.scale(scores, 1.0 / (dh as f64).sqrt());
        let w = t.softmax(scores);
        outs.push(t.bmm(w, vh));
        weights.push(w);
    }
    let cat = t.concat_last(&outs);
    let out = proj(t, cat, lq, "o");
    Attended { out, weights }
}

fn add_ff(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) {
    add_linear(s, rng, &format!("{name}.ff1"), d, 2 * d);
    add_linear(s, rng, &format!("{name}.ff2"), 2 * d, d);
}

fn feed_forward(t: &mut Tape, s: &ParamStore, name: &str, x: Var) -> Var {
    let sh = t.shape(x).to_vec();
    let flat = t.reshape(x, &[sh[0] * sh[1], sh[2]]);
    let h = linear(t, s, &format!("{name}.ff1"), flat);
    let h = t.gelu(h);
    let y = linear(t, s, &format!("{name}.ff2"), h);
    t.reshape(y, &sh)
}

impl VanillaTransformer {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.history_len == 0 || c.n_heads == 0 || !c.d_model.is_multiple_of(c.n_heads) || c.n_enc_layers == 0 {
            return Err(Error::validation("transformer needs K ≥ 1 and d_model divisible by n_heads"));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(Error::validation("dropout must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = c.d_model;
        add_linear(&mut s, &mut rng, "tf.embed", N_FEATURES, d);
        s.add("tf.pos", uniform(&mut rng, &[c.history_len, d], 0.02));
        for l in 0..c.n_enc_layers {
            let p = format!("tf.enc.{l}");
            add_attention(&mut s, &mut rng, &format!("{p}.attn"), d);
            add_layer_norm(&mut s, &format!("{p}.norm1"), d);
            add_ff(&mut s, &mut rng, &p, d);
            add_layer_norm(&mut s, &format!("{p}.norm2"), d);
        }
        s.add("tf.dec.query", uniform(&mut rng, &[d], 0.02));
        add_attention(&mut s, &mut rng, "tf.dec.attn", d);
        add_layer_norm(&mut s, "tf.dec.norm1", d);
        add_ff(&mut s, &mut rng, "tf.dec", d);
        add_layer_norm(&mut s, "tf.dec.norm2", d);
        add_linear(&mut s, &mut rng, "tf.head", d, 2);
        Ok(Self { config, params: s })
    }

    /// Returns logits and the attention maps of every layer.
    pub fn forward(&self, t: &mut Tape, history: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Var, Vec<Var>)> {
        let c = &self.config;
        let s = &self.params;
        let shape = t.shape(history).to_vec();
        if shape.len() != 3 || shape[1] != c.history_len || shape[2] != N_FEATURES {
            return Err(Error::Shape(format!(
                "history {shape:?}, expected [B, {}, {N_FEATURES}]",
                c.history_len
            )));
        }
        let (b, k, d) = (shape[0], c.history_len, c.d_model);
        let x = t.reshape(history, &[b * k, N_FEATURES]);
        let x = linear(t, s, "tf.embed", x);
        let x = t.reshape(x, &[b, k, d]);
        let pos = param(t, s, "tf.pos");
        let mut x = t.add_broadcast(x, pos);
        let mut maps = Vec::new();
        for l in 0..c.n_enc_layers {
            let p = format!("tf.enc.{l}");
            let a = attention(t, s, &format!("{p}.attn"), x, x, c.n_heads);
            maps.extend(a.weights);
            let y = dropout(t, a.out, c.dropout, rng.as_deref_mut());
            let sum = t.add(x, y);
            x = layer_norm(t, s, &format!("{p}.norm1"), sum);
            let y = feed_forward(t, s, &p, x);
            let y = dropout(t, y, c.dropout, rng.as_deref_mut());
            let sum = t.add(x, y);
            x = layer_norm(t, s, &format!("{p}.norm2"), sum);
        }
        let q = param(t, s, "tf.dec.query");
        let q = t.broadcast_rows(q, b);
        let q = t.reshape(q, &[b, 1, d]);
        let a = attention(t, s, "tf.dec.attn", q, x, c.n_heads);
        maps.extend(a.weights);
        let y = dropout(t, a.out, c.dropout, rng.as_deref_mut());
        let sum = t.add(q, y);
        let h = layer_norm(t, s, "tf.dec.norm1", sum);
        let y = feed_forward(t, s, "tf.dec", h);
        let y = dropout(t, y, c.dropout, rng);
        let sum = t.add(h, y);
        let h = layer_norm(t, s, "tf.dec.norm2", sum);
        let h = t.reshape(h, &[b, d]);
        Ok((linear(t, s, "tf.head", h), maps))
    }
}

impl Network for VanillaTransformer {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logits(&self, tape: &mut Tape, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Var {
        let h = tape.leaf(batch.history.clone());
        self.forward(tape, h, rng).expect("batch shape checked by caller").0
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "transformer", "config": self.config })
    }
}

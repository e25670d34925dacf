//! The multimodal classifier: sequence, image and demographic encoders, a
//! fusion step and a softmax head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::featurize::N_FEATURES;
use crate::ingest::{DEMO_DIM, TILE_SIZE, read_tile_file};
use crate::nn::{Conv2dSpec, ParamStore, Tape, Tensor, Var, load_archive, save_archive, uniform, xavier};
use crate::{Error, Result};

pub const FUSED_WIDTH: usize = 380;
const IMG_MLP_RATIO: usize = 4;
const STEM_KERNEL: usize = 7;
const STEM_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// History length K the sequence encoder is built for.
    pub history_len: usize,
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_modes: usize,
    pub decomp_kernel: usize,
    /// Side of the square image fed to the image encoder; tiles are
    /// resized to it on load.
    pub img_size: usize,
    pub img_channels: Vec<usize>,
    pub demo_hidden: usize,
    pub clf_hidden: usize,
    pub seq_out: usize,
    pub img_out: usize,
    pub demo_out: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_len: 4,
            d_model: 64,
            n_enc_layers: 2,
            n_modes: 2,
            decomp_kernel: 3,
            img_size: 32,
            img_channels: vec![8, 16, 32],
            demo_hidden: 64,
            clf_hidden: 128,
            seq_out: 224,
            img_out: 128,
            demo_out: 28,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.history_len;
        let bad = |m: String| Err(Error::validation(m));
        if self.seq_out + self.img_out + self.demo_out != FUSED_WIDTH {
            return bad(format!("latent widths must sum to {FUSED_WIDTH}"));
        }
        if k == 0 || self.d_model == 0 || self.n_enc_layers == 0 {
            return bad("history_len, d_model and n_enc_layers must be positive".into());
        }
        if self.n_modes == 0 || self.n_modes > k / 2 + 1 {
            return bad(format!("n_modes {} outside 1..={}", self.n_modes, k / 2 + 1));
        }
        if self.decomp_kernel.is_multiple_of(2) || (self.decomp_kernel > 1 && self.decomp_kernel / 2 >= k) {
            return bad(format!("decomp_kernel {} must be odd and fit K={k}", self.decomp_kernel));
        }
        if self.img_channels.is_empty() || self.img_channels.contains(&0) {
            return bad("img_channels must be a non-empty list of positive widths".into());
        }
        if self.img_size < STEM_STRIDE || self.img_size > TILE_SIZE {
            return bad(format!("img_size must lie in {STEM_STRIDE}..={TILE_SIZE}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Configuration small enough for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            img_size: 16,
            img_channels: vec![4, 8],
            demo_hidden: 16,
            clf_hidden: 16,
            dropout: 0.0,
            ..Self::default()
        }
    }
}

/// Which modalities feed the fusion step. Disabled ones are replaced by
/// learned constant vectors of the same width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub use_img: bool,
    pub use_demo: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation { use_img: true, use_demo: true };
    pub const NO_IMG: Ablation = Ablation { use_img: false, use_demo: true };
    pub const NO_DEMO: Ablation = Ablation { use_img: true, use_demo: false };
    pub const NO_IMG_NO_DEMO: Ablation = Ablation { use_img: false, use_demo: false };

    /// The four arms in table order.
    pub const ARMS: [(&'static str, Ablation); 4] = [
        ("full", Ablation::FULL),
        ("wo_img", Ablation::NO_IMG),
        ("wo_demog", Ablation::NO_DEMO),
        ("wo_img_wo_demog", Ablation::NO_IMG_NO_DEMO),
    ];
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

/// Model inputs for B samples. Tiles are stored once per distinct region.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, K, 27]`
    pub history: Tensor,
    /// `[B, 144]`
    pub demo: Tensor,
    /// `[U, 3, S, S]`
    pub tiles: Tensor,
    /// Row of `tiles` for each sample.
    pub tile_index: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Region tiles resized to the model's input side, channel-first in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TileBank {
    pub size: usize,
    pub tiles: Vec<Vec<f64>>,
}

impl TileBank {
    /// Converts interleaved 256×256 RGB bytes.
    pub fn from_pixels(pixels: &[Vec<u8>], size: usize) -> Result<Self> {
        let tiles = pixels.iter().map(|p| resize_tile(p, size)).collect::<Result<_>>()?;
        Ok(Self { size, tiles })
    }

    pub fn load(ds: &Dataset, size: usize) -> Result<Self> {
        let pixels = ds.tiles.iter().map(|p| read_tile_file(p)).collect::<Result<Vec<_>>>()?;
        Self::from_pixels(&pixels, size)
    }
}

fn resize_tile(pixels: &[u8], size: usize) -> Result<Vec<f64>> {
    let img = image::RgbImage::from_raw(TILE_SIZE as u32, TILE_SIZE as u32, pixels.to_vec())
        .ok_or_else(|| Error::Shape(format!("tile has {} bytes", pixels.len())))?;
    let img = if size == TILE_SIZE {
        img
    } else {
        image::imageops::resize(&img, size as u32, size as u32, image::imageops::FilterType::Triangle)
    };
    let raw = img.into_raw();
    let hw = size * size;
    let mut out = vec![0.0; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            out[c * hw + p] = raw[p * 3 + c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Gathers samples `idx` of `ds` into a batch.
pub fn make_batch(ds: &Dataset, bank: &TileBank, idx: &[usize]) -> Batch {
    let k = ds.k;
    let mut history = Vec::with_capacity(idx.len() * k * N_FEATURES);
    let mut demo = Vec::with_capacity(idx.len() * DEMO_DIM);
    let mut labels = Vec::with_capacity(idx.len());
    let mut refs: Vec<usize> = Vec::new();
    let mut tile_index = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &ds.samples[i];
        history.extend(s.history.iter().map(|&v| v as f64));
        demo.extend(s.demo.iter().map(|&v| v as f64));
        labels.push(s.label);
        let pos = match refs.iter().position(|&r| r == s.tile_ref) {
            Some(p) => p,
            None => {
                refs.push(s.tile_ref);
                refs.len() - 1
            }
        };
        tile_index.push(pos);
    }
    let side = bank.size;
    let mut tiles = Vec::with_capacity(refs.len() * 3 * side * side);
    for &r in &refs {
        tiles.extend_from_slice(&bank.tiles[r]);
    }
    Batch {
        history: Tensor::new(&[idx.len(), k, N_FEATURES], history),
        demo: Tensor::new(&[idx.len(), DEMO_DIM], demo),
        tiles: Tensor::new(&[refs.len(), 3, side, side], tiles),
        tile_index,
        labels,
    }
}

/// Anything trainable that maps a batch to two-class logits.
pub trait Network: Send + Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Records the forward pass and returns `[B, 2]` logits. `rng` enables
    /// dropout.
    fn logits(&self, tape: &mut Tape, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Var;
    /// Header stored next to the weights in checkpoints.
    fn describe(&self) -> serde_json::Value;

    /// Class probabilities in inference mode.
    fn predict(&self, batch: &Batch) -> Vec<[f64; 2]> {
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, batch, None);
        let p = tape.softmax(z);
        tape.value(p).data().chunks(2).map(|c| [c[0], c[1]]).collect()
    }
}

pub(crate) fn param(t: &mut Tape, s: &ParamStore, name: &str) -> Var {
    let id = s.find(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
    t.param(s, id)
}

pub(crate) fn add_linear(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    s.add(format!("{name}.weight"), xavier(rng, &[fan_in, fan_out], fan_in, fan_out));
    s.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

/// `x[N, in] · W + b`.
pub(crate) fn linear(t: &mut Tape, s: &ParamStore, name: &str, x: Var) -> Var {
    let w = param(t, s, &format!("{name}.weight"));
    let b = param(t, s, &format!("{name}.bias"));
    let y = t.matmul(x, w);
    t.add_bias(y, b)
}

fn add_conv(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cout: usize, cin_g: usize, k: usize) {
    let fan_in = cin_g * k * k;
    let bound = (1.0 / fan_in as f64).sqrt() * 3f64.sqrt();
    s.add(format!("{name}.weight"), uniform(rng, &[cout, cin_g, k, k], bound));
    s.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

fn conv(t: &mut Tape, s: &ParamStore, name: &str, x: Var, spec: Conv2dSpec) -> Var {
    let w = param(t, s, &format!("{name}.weight"));
    let b = param(t, s, &format!("{name}.bias"));
    t.conv2d(x, w, Some(b), spec)
}

fn add_norm(s: &mut ParamStore, name: &str, c: usize) {
    s.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
    s.add(format!("{name}.beta"), Tensor::zeros(&[c]));
}

fn group_norm(t: &mut Tape, s: &ParamStore, name: &str, x: Var) -> Var {
    let g = param(t, s, &format!("{name}.gamma"));
    let b = param(t, s, &format!("{name}.beta"));
    t.group_norm(x, g, b)
}

pub(crate) fn dropout(t: &mut Tape, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 - p;
            let mask = (0..t.value(x).len())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            t.mul_const(x, mask)
        }
        _ => x,
    }
}

/// Splits `x[B, L, d]` into seasonal and trend parts with a centered moving
/// average (reflect padding). `seasonal + trend == x`.
pub fn series_decompose(t: &mut Tape, x: Var, kernel: usize) -> Result<(Var, Var)> {
    if kernel.is_multiple_of(2) {
        return Err(Error::validation(format!("decomposition kernel {kernel} is even")));
    }
    let l = t.shape(x)[1];
    if kernel > 1 && kernel / 2 >= l {
        return Err(Error::validation(format!("kernel {kernel} too wide for length {l}")));
    }
    let trend = t.moving_avg(x, kernel);
    let seasonal = t.sub(x, trend);
    Ok((seasonal, trend))
}

/// Frequency block on `x[B, L, d]` with complex weights `[modes, d, d, 2]`.
pub fn feb_forward(t: &mut Tape, x: Var, weights: Var, modes: usize) -> Result<Var> {
    let s = t.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("frequency block input {s:?} is not [B, L, d]")));
    }
    if modes == 0 || modes > s[1] / 2 + 1 {
        return Err(Error::validation(format!("modes {modes} outside 1..={}", s[1] / 2 + 1)));
    }
    if t.shape(weights) != [modes, s[2], s[2], 2] {
        return Err(Error::Shape(format!("frequency weights {:?}", t.shape(weights))));
    }
    Ok(t.feb(x, weights, modes))
}

/// Large-kernel attention: depthwise 5×5, dilated depthwise 7×7 (dilation
/// 3), pointwise, then gate the input. Zero padding keeps the spatial size.
pub fn lka_forward(t: &mut Tape, s: &ParamStore, name: &str, x: Var) -> Var {
    let c = t.shape(x)[1];
    let a = conv(t, s, &format!("{name}.dw"), x, Conv2dSpec::same(5, 1, c));
    let a = conv(t, s, &format!("{name}.dw_dilated"), a, Conv2dSpec::same(7, 3, c));
    let a = conv(t, s, &format!("{name}.pw"), a, Conv2dSpec::same(1, 1, 1));
    t.mul(a, x)
}

fn add_lka(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) {
    add_conv(s, rng, &format!("{name}.dw"), c, 1, 5);
    add_conv(s, rng, &format!("{name}.dw_dilated"), c, 1, 7);
    add_conv(s, rng, &format!("{name}.pw"), c, c, 1);
}

/// Variables recorded by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Latents {
    pub seq: Var,
    pub img: Var,
    pub demo: Var,
    pub fused: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct CrashFormer {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub params: ParamStore,
}

impl CrashFormer {
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = &config;
        let (k, d) = (c.history_len, c.d_model);

        add_linear(&mut s, &mut rng, "seq.embed", N_FEATURES, d);
        s.add("seq.pos", uniform(&mut rng, &[k, d], 0.02));
        for l in 0..c.n_enc_layers {
            let scale = 1.0 / (d * d) as f64;
            s.add(format!("seq.layers.{l}.feb"), uniform(&mut rng, &[c.n_modes, d, d, 2], scale.sqrt()));
            add_linear(&mut s, &mut rng, &format!("seq.layers.{l}.ff1"), d, 2 * d);
            add_linear(&mut s, &mut rng, &format!("seq.layers.{l}.ff2"), 2 * d, d);
        }
        add_linear(&mut s, &mut rng, "seq.out", k * d, c.seq_out);

        let ch = &c.img_channels;
        add_conv(&mut s, &mut rng, "img.stem", ch[0], 3, STEM_KERNEL);
        add_norm(&mut s, "img.stem_norm", ch[0]);
        for (i, &w) in ch.iter().enumerate() {
            let p = format!("img.stages.{i}");
            if i > 0 {
                add_conv(&mut s, &mut rng, &format!("{p}.down"), w, ch[i - 1], 3);
                add_norm(&mut s, &format!("{p}.down_norm"), w);
            }
            add_norm(&mut s, &format!("{p}.norm1"), w);
            add_conv(&mut s, &mut rng, &format!("{p}.proj1"), w, w, 1);
            add_lka(&mut s, &mut rng, &format!("{p}.lka"), w);
            add_conv(&mut s, &mut rng, &format!("{p}.proj2"), w, w, 1);
            add_norm(&mut s, &format!("{p}.norm2"), w);
            add_conv(&mut s, &mut rng, &format!("{p}.fc1"), IMG_MLP_RATIO * w, w, 1);
            add_conv(&mut s, &mut rng, &format!("{p}.fc2"), w, IMG_MLP_RATIO * w, 1);
        }
        let last = *ch.last().expect("validated non-empty");
        add_norm(&mut s, "img.head_norm", last);
        add_linear(&mut s, &mut rng, "img.out", last, c.img_out);
        s.add("img.placeholder", Tensor::zeros(&[c.img_out]));

        add_linear(&mut s, &mut rng, "demo.fc1", DEMO_DIM, c.demo_hidden);
        add_linear(&mut s, &mut rng, "demo.fc2", c.demo_hidden, c.demo_out);
        s.add("demo.placeholder", Tensor::zeros(&[c.demo_out]));

        add_linear(&mut s, &mut rng, "clf.fc1", FUSED_WIDTH, c.clf_hidden);
        add_linear(&mut s, &mut rng, "clf.fc2", c.clf_hidden, 2);

        Ok(Self { config, ablation, params: s })
    }

    /// `history[B, K, 27]` → `[B, seq_out]`.
    pub fn seq_encode(&self, t: &mut Tape, history: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let c = &self.config;
        let s = &self.params;
        let shape = t.shape(history).to_vec();
        if shape.len() != 3 || shape[1] != c.history_len || shape[2] != N_FEATURES {
            return Err(Error::Shape(format!(
                "history {shape:?}, model expects [B, {}, {N_FEATURES}]",
                c.history_len
            )));
        }
        let (b, k, d) = (shape[0], c.history_len, c.d_model);
        let x = t.reshape(history, &[b * k, N_FEATURES]);
        let x = linear(t, s, "seq.embed", x);
        let x = t.reshape(x, &[b, k, d]);
        let pos = param(t, s, "seq.pos");
        let mut x = t.add_broadcast(x, pos);
        for l in 0..c.n_enc_layers {
            let w = param(t, s, &format!("seq.layers.{l}.feb"));
            let y = feb_forward(t, x, w, c.n_modes)?;
            let y = dropout(t, y, c.dropout, rng.as_deref_mut());
            let sum = t.add(x, y);
            x = series_decompose(t, sum, c.decomp_kernel)?.0;
            let y = t.reshape(x, &[b * k, d]);
            let y = linear(t, s, &format!("seq.layers.{l}.ff1"), y);
            let y = t.gelu(y);
            let y = linear(t, s, &format!("seq.layers.{l}.ff2"), y);
            let y = t.reshape(y, &[b, k, d]);
            let y = dropout(t, y, c.dropout, rng.as_deref_mut());
            let sum = t.add(x, y);
            x = series_decompose(t, sum, c.decomp_kernel)?.0;
        }
        let flat = t.reshape(x, &[b, k * d]);
        Ok(linear(t, s, "seq.out", flat))
    }

    /// `tiles[U, 3, S, S]` → `[U, img_out]`.
    pub fn img_encode(&self, t: &mut Tape, tiles: Var) -> Result<Var> {
        let c = &self.config;
        let s = &self.params;
        let shape = t.shape(tiles).to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != c.img_size || shape[3] != c.img_size {
            return Err(Error::Shape(format!(
                "tiles {shape:?}, model expects [U, 3, {0}, {0}]",
                c.img_size
            )));
        }
        let stem = Conv2dSpec { stride: STEM_STRIDE, padding: STEM_KERNEL / 2, dilation: 1, groups: 1 };
        let x = conv(t, s, "img.stem", tiles, stem);
        let mut x = group_norm(t, s, "img.stem_norm", x);
        let down = Conv2dSpec { stride: 2, padding: 1, dilation: 1, groups: 1 };
        let pw = Conv2dSpec::same(1, 1, 1);
        for i in 0..c.img_channels.len() {
            let p = format!("img.stages.{i}");
            if i > 0 {
                x = conv(t, s, &format!("{p}.down"), x, down);
                x = group_norm(t, s, &format!("{p}.down_norm"), x);
            }
            let y = group_norm(t, s, &format!("{p}.norm1"), x);
            let y = conv(t, s, &format!("{p}.proj1"), y, pw);
            let y = t.gelu(y);
            let y = lka_forward(t, s, &format!("{p}.lka"), y);
            let y = conv(t, s, &format!("{p}.proj2"), y, pw);
            x = t.add(x, y);
            let y = group_norm(t, s, &format!("{p}.norm2"), x);
            let y = conv(t, s, &format!("{p}.fc1"), y, pw);
            let y = t.gelu(y);
            let y = conv(t, s, &format!("{p}.fc2"), y, pw);
            x = t.add(x, y);
        }
        let x = group_norm(t, s, "img.head_norm", x);
        let pooled = t.avg_pool_hw(x);
        Ok(linear(t, s, "img.out", pooled))
    }

    /// `demo[B, 144]` → `[B, demo_out]`.
    pub fn demo_encode(&self, t: &mut Tape, demo: Var) -> Result<Var> {
        let shape = t.shape(demo);
        if shape.len() != 2 || shape[1] != DEMO_DIM {
            return Err(Error::Shape(format!("demographics {shape:?}, expected [B, {DEMO_DIM}]")));
        }
        let h = linear(t, &self.params, "demo.fc1", demo);
        let h = t.gelu(h);
        Ok(linear(t, &self.params, "demo.fc2", h))
    }

    /// Records the full forward pass.
    pub fn forward(&self, t: &mut Tape, batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> Result<Latents> {
        let b = batch.len();
        let history = t.leaf(batch.history.clone());
        let seq = self.seq_encode(t, history, rng.as_deref_mut())?;
        let img = if self.ablation.use_img {
            if batch.tile_index.len() != b {
                return Err(Error::Shape("tile_index length differs from batch size".into()));
            }
            let tiles = t.leaf(batch.tiles.clone());
            let per_tile = self.img_encode(t, tiles)?;
            t.gather_rows(per_tile, &batch.tile_index)
        } else {
            let p = param(t, &self.params, "img.placeholder");
            t.broadcast_rows(p, b)
        };
        let demo = if self.ablation.use_demo {
            let d = t.leaf(batch.demo.clone());
            self.demo_encode(t, d)?
        } else {
            let p = param(t, &self.params, "demo.placeholder");
            t.broadcast_rows(p, b)
        };
        let fused = fuse(t, seq, img, demo)?;
        let h = linear(t, &self.params, "clf.fc1", fused);
        let h = t.gelu(h);
        let h = dropout(t, h, self.config.dropout, rng);
        let logits = linear(t, &self.params, "clf.fc2", h);
        Ok(Latents { seq, img, demo, fused, logits })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_archive(path, self.describe(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, store) = load_archive(path)?;
        Self::from_parts(meta, store)
    }

    pub(crate) fn from_parts(meta: serde_json::Value, store: ParamStore) -> Result<Self> {
        let h: CheckpointHeader = serde_json::from_value(meta)?;
        if h.kind != "crashformer" {
            return Err(Error::Checkpoint(format!("checkpoint holds a {} model", h.kind)));
        }
        let mut m = CrashFormer::new(h.config, h.ablation, 0)?;
        m.params.load_values(&store)?;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    config: ModelConfig,
    ablation: Ablation,
}

impl Network for CrashFormer {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logits(&self, tape: &mut Tape, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Var {
        self.forward(tape, batch, rng).expect("batch shape checked by caller").logits
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(CheckpointHeader {
            kind: "crashformer".into(),
            config: self.config.clone(),
            ablation: self.ablation,
        })
        .expect("config serializes")
    }
}

/// `[seq | img | demo]` along the feature axis.
pub fn fuse(t: &mut Tape, seq: Var, img: Var, demo: Var) -> Result<Var> {
    let b = t.shape(seq)[0];
    if t.shape(img)[0] != b || t.shape(demo)[0] != b {
        return Err(Error::Shape("latent batch sizes differ".into()));
    }
    Ok(t.concat_last(&[seq, img, demo]))
}

/// Row-wise softmax of two-class logits.
pub fn classify_probs(logits: &[f64]) -> Vec<[f64; 2]> {
    logits
        .chunks(2)
        .map(|z| {
            let mut p = [z[0], z[1]];
            crate::nn::softmax_inplace(&mut p);
            p
        })
        .collect()
}

/// Batch mean of `-w[y] log p[y]` on probabilities.
pub fn weighted_ce(probs: &[[f64; 2]], labels: &[u8], w: [f64; 2]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -w[y as usize] * p[y as usize].ln())
        .sum();
    total / labels.len() as f64
}

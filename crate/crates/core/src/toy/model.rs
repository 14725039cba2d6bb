//! A small encoder-decoder with hand-written reverse-mode gradients.
//!
//! Encoder: token + position embeddings followed by one block of
//! single-head self-attention and a ReLU MLP, each with a residual
//! connection. Decoder: `n_layers` blocks of self-attention, cross-attention
//! over the encoder states and a ReLU MLP, all residual. The output
//! projection produces logits over the joint vocabulary (blank included);
//! the length head reads mean-pooled encoder states.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] names the blocks.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, AxeError, Result};
use crate::objectives::LogitModel;
use crate::types::{LogProbMatrix, MaskedInput, SourceSequence, MASK_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_len: usize,
    pub label_smoothing: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub length_loss_weight: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            d_model: 64,
            d_ff: 128,
            n_layers: 2,
            max_len: 64,
            label_smoothing: 0.1,
            learning_rate: 3e-3,
            warmup_steps: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            steps: 2000,
            batch_size: 32,
            length_loss_weight: 0.1,
            init_std: 0.02,
            seed: 1,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model < 8 {
            return Err(config_err("model.d_model", "must be at least 8"));
        }
        if self.d_ff == 0 || self.n_layers == 0 {
            return Err(config_err("model.d_ff/n_layers", "must be positive"));
        }
        if self.max_len < 2 {
            return Err(config_err("model.max_len", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(config_err("model.label_smoothing", "must lie in [0, 1)"));
        }
        for (name, v) in [
            ("model.learning_rate", self.learning_rate),
            ("model.adam_eps", self.adam_eps),
            ("model.init_std", self.init_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(name, "must be finite and positive"));
            }
        }
        for (name, v) in [("model.adam_beta1", self.adam_beta1), ("model.adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_err(name, "must lie in [0, 1)"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err("model.weight_decay", "must be finite and >= 0"));
        }
        if !(self.length_loss_weight.is_finite() && self.length_loss_weight >= 0.0) {
            return Err(config_err("model.length_loss_weight", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(config_err("model.batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.off..self.off + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AttnIdx {
    wq: Block,
    wk: Block,
    wv: Block,
    wo: Block,
}

#[derive(Debug, Clone, PartialEq)]
struct MlpIdx {
    w1: Block,
    b1: Block,
    w2: Block,
    b2: Block,
}

#[derive(Debug, Clone, PartialEq)]
struct DecIdx {
    self_attn: AttnIdx,
    cross_attn: AttnIdx,
    mlp: MlpIdx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    src_emb: Block,
    tgt_emb: Block,
    src_pos: Block,
    tgt_pos: Block,
    enc_attn: AttnIdx,
    enc_mlp: MlpIdx,
    dec: Vec<DecIdx>,
    out_w: Block,
    out_b: Block,
    len_w: Block,
    len_b: Block,
    blocks: Vec<(String, Block, bool)>,
    total: usize,
}

struct LayoutBuilder {
    blocks: Vec<(String, Block, bool)>,
    off: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, bias: bool) -> Block {
        let b = Block { off: self.off, rows, cols };
        self.off += b.len();
        self.blocks.push((name, b, bias));
        b
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.add(format!("{prefix}.wq"), d, d, false),
            wk: self.add(format!("{prefix}.wk"), d, d, false),
            wv: self.add(format!("{prefix}.wv"), d, d, false),
            wo: self.add(format!("{prefix}.wo"), d, d, false),
        }
    }

    fn mlp(&mut self, prefix: &str, d: usize, h: usize) -> MlpIdx {
        MlpIdx {
            w1: self.add(format!("{prefix}.w1"), d, h, false),
            b1: self.add(format!("{prefix}.b1"), 1, h, true),
            w2: self.add(format!("{prefix}.w2"), h, d, false),
            b2: self.add(format!("{prefix}.b2"), 1, d, true),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ToyModelConfig, vocab_size: usize) -> Self {
        let (d, h, l) = (cfg.d_model, cfg.d_ff, cfg.max_len);
        let mut b = LayoutBuilder { blocks: Vec::new(), off: 0 };
        let src_emb = b.add("src_emb".into(), vocab_size, d, false);
        let tgt_emb = b.add("tgt_emb".into(), vocab_size, d, false);
        // one position table shared by encoder and decoder
        let pos = b.add("pos".into(), l, d, false);
        let (src_pos, tgt_pos) = (pos, pos);
        let enc_attn = b.attn("enc.self_attn", d);
        let enc_mlp = b.mlp("enc.mlp", d, h);
        let dec = (0..cfg.n_layers)
            .map(|k| DecIdx {
                self_attn: b.attn(&format!("dec{k}.self_attn"), d),
                cross_attn: b.attn(&format!("dec{k}.cross_attn"), d),
                mlp: b.mlp(&format!("dec{k}.mlp"), d, h),
            })
            .collect();
        let out_w = b.add("out.w".into(), d, vocab_size, false);
        let out_b = b.add("out.b".into(), 1, vocab_size, true);
        // length classes 1..=max_len
        let len_w = b.add("len.w".into(), d, l, false);
        let len_b = b.add("len.b".into(), 1, l, true);
        Layout {
            src_emb,
            tgt_emb,
            src_pos,
            tgt_pos,
            enc_attn,
            enc_mlp,
            dec,
            out_w,
            out_b,
            len_w,
            len_b,
            total: b.off,
            blocks: b.blocks,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `(name, block, is_bias)` for every parameter block, in storage order.
    pub fn blocks(&self) -> &[(String, Block, bool)] {
        &self.blocks
    }

    pub fn block_of(&self, index: usize) -> Option<&str> {
        self.blocks
            .iter()
            .find(|(_, b, _)| b.range().contains(&index))
            .map(|(n, _, _)| n.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub cfg: ToyModelConfig,
    pub vocab_size: usize,
    pub params: Vec<f64>,
    layout: Layout,
}

struct AttnCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    c: Array2<f64>,
}

struct MlpCache {
    x: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
}

struct DecCache {
    self_attn: AttnCache,
    cross_attn: AttnCache,
    mlp: MlpCache,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    src: Vec<usize>,
    tgt: Vec<usize>,
    enc_attn: AttnCache,
    enc_mlp: MlpCache,
    enc: Array2<f64>,
    pooled: Array1<f64>,
    dec: Vec<DecCache>,
    h_final: Array2<f64>,
}

/// Result of [`ToyModel::forward`].
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub log_probs: LogProbMatrix,
    /// Logits over lengths `1..=max_len`; entry `k` is length `k + 1`.
    pub length_logits: Vec<f64>,
    pub cache: ForwardCache,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

impl ToyModel {
    pub fn new(cfg: &ToyModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| config_err("model.init_std", e.to_string()))?;
        let mut params = vec![0.0; layout.total()];
        for (_, b, bias) in layout.blocks() {
            if !bias {
                for x in &mut params[b.range()] {
                    *x = normal.sample(&mut rng);
                }
            }
        }
        Ok(ToyModel {
            cfg: cfg.clone(),
            vocab_size,
            params,
            layout,
        })
    }

    /// Rebuilds a model around existing parameters.
    pub fn from_params(cfg: &ToyModelConfig, vocab_size: usize, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg, vocab_size);
        if params.len() != layout.total() {
            return Err(AxeError::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(ToyModel {
            cfg: cfg.clone(),
            vocab_size,
            params,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn view(&self, b: Block) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((b.rows, b.cols), &self.params[b.range()]).expect("block shape")
    }

    fn bias(&self, b: Block) -> ndarray::ArrayView1<'_, f64> {
        self.view(b).index_axis_move(Axis(0), 0)
    }

    fn embed_scale(&self) -> f64 {
        (self.cfg.d_model as f64).sqrt()
    }

    fn embed(&self, ids: &[usize], emb: Block, pos: Block) -> Array2<f64> {
        let e = self.view(emb);
        let p = self.view(pos);
        let scale = self.embed_scale();
        let mut out = Array2::zeros((ids.len(), self.cfg.d_model));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = out.row_mut(t);
            row.assign(&e.row(id));
            row += &p.row(t);
            row *= scale;
        }
        out
    }

    fn attn_forward(&self, idx: &AttnIdx, q_in: &Array2<f64>, kv_in: &Array2<f64>) -> (Array2<f64>, AttnCache) {
        let scale = 1.0 / (self.cfg.d_model as f64).sqrt();
        let q = q_in.dot(&self.view(idx.wq));
        let k = kv_in.dot(&self.view(idx.wk));
        let v = kv_in.dot(&self.view(idx.wv));
        let mut a = q.dot(&k.t()) * scale;
        softmax_rows(&mut a);
        let c = a.dot(&v);
        let out = c.dot(&self.view(idx.wo));
        let cache = AttnCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            a,
            c,
        };
        (out, cache)
    }

    fn mlp_forward(&self, idx: &MlpIdx, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let z = x.dot(&self.view(idx.w1)) + self.bias(idx.b1);
        let r = z.mapv(|v| v.max(0.0));
        let out = r.dot(&self.view(idx.w2)) + self.bias(idx.b2);
        (out, MlpCache { x: x.clone(), z, r })
    }

    fn check_lengths(&self, src: usize, tgt: usize) -> Result<()> {
        let l = self.cfg.max_len;
        if src == 0 || tgt == 0 || src > l || tgt > l {
            return Err(AxeError::Shape(format!(
                "source length {src} / target length {tgt} outside 1..={l}"
            )));
        }
        Ok(())
    }

    fn first_nonfinite_block(&self) -> String {
        self.params
            .iter()
            .position(|x| !x.is_finite())
            .and_then(|i| self.layout.block_of(i))
            .unwrap_or("activations")
            .to_string()
    }

    /// Encoder states and length logits only.
    pub fn length_logits(&self, x: &SourceSequence) -> Result<Vec<f64>> {
        self.check_lengths(x.len(), 1)?;
        let (enc, _, _) = self.encode(x.ids());
        let pooled = enc.mean_axis(Axis(0)).expect("non-empty source");
        let out = pooled.dot(&self.view(self.layout.len_w)) + self.bias(self.layout.len_b);
        Ok(out.to_vec())
    }

    fn encode(&self, src: &[usize]) -> (Array2<f64>, AttnCache, MlpCache) {
        let lay = &self.layout;
        let e0 = self.embed(src, lay.src_emb, lay.src_pos);
        let (sa, enc_attn) = self.attn_forward(&lay.enc_attn, &e0, &e0);
        let e1 = e0 + sa;
        let (m, enc_mlp) = self.mlp_forward(&lay.enc_mlp, &e1);
        (e1 + m, enc_attn, enc_mlp)
    }

    pub fn forward(&self, x: &SourceSequence, input: &MaskedInput) -> Result<ForwardOutput> {
        self.check_lengths(x.len(), input.len())?;
        let lay = &self.layout;
        let (enc, enc_attn, enc_mlp) = self.encode(x.ids());
        let pooled = enc.mean_axis(Axis(0)).expect("non-empty source");
        let length_logits = pooled.dot(&self.view(lay.len_w)) + self.bias(lay.len_b);

        let mut h = self.embed(input.ids(), lay.tgt_emb, lay.tgt_pos);
        let mut dec = Vec::with_capacity(lay.dec.len());
        for d in &lay.dec {
            let (sa, sa_c) = self.attn_forward(&d.self_attn, &h, &h);
            h += &sa;
            let (ca, ca_c) = self.attn_forward(&d.cross_attn, &h, &enc);
            h += &ca;
            let (m, m_c) = self.mlp_forward(&d.mlp, &h);
            h += &m;
            dec.push(DecCache {
                self_attn: sa_c,
                cross_attn: ca_c,
                mlp: m_c,
            });
        }
        let logits = h.dot(&self.view(lay.out_w)) + self.bias(lay.out_b);
        let logits: Vec<f64> = logits.into_iter().collect();
        if logits.iter().any(|v| !v.is_finite()) || length_logits.iter().any(|v| !v.is_finite()) {
            return Err(AxeError::NonFinite(self.first_nonfinite_block()));
        }
        let log_probs = LogProbMatrix::from_logits(input.len(), self.vocab_size, &logits)?;
        Ok(ForwardOutput {
            logits,
            log_probs,
            length_logits: length_logits.to_vec(),
            cache: ForwardCache {
                src: x.ids().to_vec(),
                tgt: input.ids().to_vec(),
                enc_attn,
                enc_mlp,
                enc,
                pooled,
                dec,
                h_final: h,
            },
        })
    }

    /// Reverse pass. `grad_logits` is `n x V` row-major, `grad_length` has
    /// one entry per length class. Gradients are added into `grads`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64], grad_length: &[f64], grads: &mut [f64]) -> Result<()> {
        let lay = &self.layout;
        let n = cache.tgt.len();
        let v = self.vocab_size;
        if grad_logits.len() != n * v {
            return Err(AxeError::Shape(format!("grad_logits has {} entries, expected {}", grad_logits.len(), n * v)));
        }
        if grad_length.len() != self.cfg.max_len {
            return Err(AxeError::Shape(format!("grad_length has {} entries, expected {}", grad_length.len(), self.cfg.max_len)));
        }
        if grads.len() != self.params.len() {
            return Err(AxeError::Shape("gradient buffer size".into()));
        }
        let g_logits = ArrayView2::from_shape((n, v), grad_logits).expect("checked");
        acc(grads, lay.out_w, &cache.h_final.t().dot(&g_logits));
        acc_bias(grads, lay.out_b, &g_logits.sum_axis(Axis(0)));
        let mut dh = g_logits.dot(&self.view(lay.out_w).t());

        let mut d_enc = Array2::<f64>::zeros(cache.enc.raw_dim());
        for (d, c) in lay.dec.iter().zip(&cache.dec).rev() {
            let dx = self.mlp_backward(&d.mlp, &c.mlp, &dh, grads);
            dh += &dx;
            let (dq, dkv) = self.attn_backward(&d.cross_attn, &c.cross_attn, &dh, grads);
            dh += &dq;
            d_enc += &dkv;
            let (dq, dkv) = self.attn_backward(&d.self_attn, &c.self_attn, &dh, grads);
            dh += &dq;
            dh += &dkv;
        }
        scatter_embed(grads, lay.tgt_emb, lay.tgt_pos, &cache.tgt, &dh, self.embed_scale());

        // length head
        let g_len = ndarray::ArrayView1::from(grad_length);
        let pooled_col = cache.pooled.view().insert_axis(Axis(1));
        let g_len_row = g_len.insert_axis(Axis(0));
        acc(grads, lay.len_w, &pooled_col.dot(&g_len_row));
        acc_bias(grads, lay.len_b, &g_len.to_owned());
        let d_pooled = self.view(lay.len_w).dot(&g_len);
        let s = cache.src.len() as f64;
        for mut row in d_enc.rows_mut() {
            row.scaled_add(1.0 / s, &d_pooled);
        }

        // encoder
        let mut de = d_enc;
        let dx = self.mlp_backward(&lay.enc_mlp, &cache.enc_mlp, &de, grads);
        de += &dx;
        let (dq, dkv) = self.attn_backward(&lay.enc_attn, &cache.enc_attn, &de, grads);
        de += &dq;
        de += &dkv;
        scatter_embed(grads, lay.src_emb, lay.src_pos, &cache.src, &de, self.embed_scale());
        Ok(())
    }

    fn mlp_backward(&self, idx: &MlpIdx, c: &MlpCache, dout: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        acc(grads, idx.w2, &c.r.t().dot(dout));
        acc_bias(grads, idx.b2, &dout.sum_axis(Axis(0)));
        let mut dz = dout.dot(&self.view(idx.w2).t());
        ndarray::Zip::from(&mut dz).and(&c.z).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        acc(grads, idx.w1, &c.x.t().dot(&dz));
        acc_bias(grads, idx.b1, &dz.sum_axis(Axis(0)));
        dz.dot(&self.view(idx.w1).t())
    }

    /// Returns gradients for the query input and the key/value input.
    fn attn_backward(&self, idx: &AttnIdx, c: &AttnCache, dout: &Array2<f64>, grads: &mut [f64]) -> (Array2<f64>, Array2<f64>) {
        let scale = 1.0 / (self.cfg.d_model as f64).sqrt();
        acc(grads, idx.wo, &c.c.t().dot(dout));
        let dc = dout.dot(&self.view(idx.wo).t());
        let da = dc.dot(&c.v.t());
        let dv = c.a.t().dot(&dc);
        let mut ds = &da * &c.a;
        let row_dot = ds.sum_axis(Axis(1));
        for (mut row, (a_row, rd)) in ds.rows_mut().into_iter().zip(c.a.rows().into_iter().zip(row_dot.iter())) {
            row.scaled_add(-rd, &a_row);
        }
        ds *= scale;
        let dq = ds.dot(&c.k);
        let dk = ds.t().dot(&c.q);
        acc(grads, idx.wq, &c.q_in.t().dot(&dq));
        acc(grads, idx.wk, &c.kv_in.t().dot(&dk));
        acc(grads, idx.wv, &c.kv_in.t().dot(&dv));
        let dq_in = dq.dot(&self.view(idx.wq).t());
        let dkv_in = dk.dot(&self.view(idx.wk).t()) + dv.dot(&self.view(idx.wv).t());
        (dq_in, dkv_in)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }
}

fn acc(grads: &mut [f64], b: Block, m: &Array2<f64>) {
    debug_assert_eq!(m.dim(), (b.rows, b.cols));
    for (g, x) in grads[b.range()].iter_mut().zip(m.iter()) {
        *g += x;
    }
}

fn acc_bias(grads: &mut [f64], b: Block, v: &Array1<f64>) {
    for (g, x) in grads[b.range()].iter_mut().zip(v.iter()) {
        *g += x;
    }
}

fn scatter_embed(grads: &mut [f64], emb: Block, pos: Block, ids: &[usize], d: &Array2<f64>, scale: f64) {
    let cols = emb.cols;
    for (t, &id) in ids.iter().enumerate() {
        let row = d.slice(s![t, ..]);
        let e0 = emb.off + id * cols;
        let p0 = pos.off + t * cols;
        for (k, x) in row.iter().enumerate() {
            grads[e0 + k] += scale * x;
            grads[p0 + k] += scale * x;
        }
    }
}

impl LogitModel for ToyModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, x: &SourceSequence, input: &MaskedInput) -> Result<Vec<f64>> {
        Ok(self.forward(x, input)?.logits)
    }
}

/// Softmax cross entropy over lengths; returns the loss and its logit
/// gradient. `target_len` is 1-based.
pub fn length_loss(length_logits: &[f64], target_len: usize) -> (f64, Vec<f64>) {
    let lse = crate::types::log_sum_exp(length_logits);
    let k = target_len - 1;
    let loss = lse - length_logits[k];
    let mut g: Vec<f64> = length_logits.iter().map(|x| (x - lse).exp()).collect();
    g[k] -= 1.0;
    (loss, g)
}

/// Decoder input used at inference time.
pub fn inference_input(len: usize) -> MaskedInput {
    const { assert!(MASK_ID == 1) };
    MaskedInput::all_masked(len)
}

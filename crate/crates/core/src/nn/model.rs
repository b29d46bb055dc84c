//! Encoder-only transformer that corrects a TDoA position from the CIRs.
//!
//! Token pipeline: CIR tensor → patches → linear embedding with a prepended
//! CLS token → positional encodings → post-norm encoder blocks. The CLS
//! output, concatenated with the extent-normalized TDoA estimate, feeds an
//! MLP head. In residual mode the head predicts a correction added to the
//! TDoA estimate.

use std::borrow::Borrow;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, MultiHeadAttention};
use super::layers::{dropout_mask, gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use crate::channel::{Environment, Sample};
use crate::cir::{build_input_tensor, CirOrdering, InputTensor, TensorRow, WINDOW_LEN};
use crate::encoding::{
    add_learned_rows, apply_encodings, fixed_encodings, EncodingConfig, EncodingKind, EncodingTables, LearnedRow,
};
use crate::error::{Error, Result};
use crate::patching::{embed_patches, patchify, PatchConfig, PatchStrategy, TokenSequence};
use crate::tdoa::Point3;

// Shortens the trait-object lifetime so the rng can be lent out repeatedly.
fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch: PatchConfig,
    pub encoding: EncodingKind,
    pub ordering: CirOrdering,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub head_widths: Vec<usize>,
    pub residual_output: bool,
    /// Start the last head layer at zero so the untrained model returns the
    /// TDoA estimate unchanged (residual mode).
    pub zero_init_output: bool,
    pub omega_min: f64,
    pub omega_max: f64,
    pub dt_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig {
                strategy: PatchStrategy::PerCir,
                l_patch: WINDOW_LEN,
            },
            encoding: EncodingKind::Spatial,
            ordering: CirOrdering::Fixed,
            d_model: 64,
            n_layers: 4,
            n_heads: 8,
            d_ff: 256,
            dropout: 0.15,
            head_widths: vec![256, 128, 64, 3],
            residual_output: true,
            zero_init_output: true,
            omega_min: crate::encoding::DEFAULT_OMEGA_MIN,
            omega_max: crate::encoding::DEFAULT_OMEGA_MAX,
            dt_max: crate::encoding::DEFAULT_DT_MAX,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        if self.encoding.is_spatial() && self.patch.strategy == PatchStrategy::MultiCir {
            return Err(Error::IncompatibleEncoding(
                "spatial encodings are not possible for multi-CIR patching".into(),
            ));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.head_widths.last() != Some(&3) || self.head_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "head widths {:?} must end in 3 outputs",
                self.head_widths
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.d_ff == 0 {
            return Err(Error::InvalidConfig("d_ff must be positive".into()));
        }
        Ok(())
    }

    /// Tokens excluding CLS for the largest possible input.
    pub fn max_seq_len(&self, n_total: usize) -> usize {
        self.patch.n_patches(n_total)
    }

    pub fn encoding_config(&self, n_total: usize) -> EncodingConfig {
        let mut cfg = EncodingConfig::new(
            self.encoding,
            self.d_model,
            self.max_seq_len(n_total),
            self.patch.patches_per_cir(),
        );
        cfg.omega_min = self.omega_min;
        cfg.omega_max = self.omega_max;
        cfg.dt_max = self.dt_max;
        cfg
    }

    /// Multi-CIR patching always needs every anchor row; time ordering is
    /// then padded with zero rows after the received ones.
    pub fn pads_rows(&self) -> bool {
        self.patch.strategy == PatchStrategy::MultiCir
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Array2<f64>,
    attention: AttentionCache,
    mask1: Option<Array2<f64>>,
    hidden: Array2<f64>,
    norm1: LayerNormCache,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    mask2: Option<Array2<f64>>,
    norm2: LayerNormCache,
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

impl EncoderLayer {
    fn init(d_model: usize, n_heads: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attention: MultiHeadAttention {
                query: Linear::init(d_model, d_model, rng),
                key: Linear::init(d_model, d_model, rng),
                value: Linear::init(d_model, d_model, rng),
                output: Linear::init(d_model, d_model, rng),
                n_heads,
            },
            norm1: LayerNorm::new(d_model),
            ff_in: Linear::init(d_model, d_ff, rng),
            ff_out: Linear::init(d_ff, d_model, rng),
            norm2: LayerNorm::new(d_model),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        dropout: f64,
        mut rng: Option<&mut dyn RngCore>,
    ) -> (Array2<f64>, EncoderCache) {
        let (attended, attention) = self.attention.forward(x);
        let mask1 = dropout_mask(attended.dim(), dropout, reborrow(&mut rng));
        let attended = apply_mask(attended, &mask1);
        let (hidden, norm1) = self.norm1.forward(&(x + &attended));
        let ff_pre = self.ff_in.forward(&hidden);
        let ff_act = ff_pre.mapv(gelu);
        let ff = self.ff_out.forward(&ff_act);
        let mask2 = dropout_mask(ff.dim(), dropout, reborrow(&mut rng));
        let ff = apply_mask(ff, &mask2);
        let (out, norm2) = self.norm2.forward(&(&hidden + &ff));
        (
            out,
            EncoderCache {
                input: x.clone(),
                attention,
                mask1,
                hidden,
                norm1,
                ff_pre,
                ff_act,
                mask2,
                norm2,
            },
        )
    }

    pub fn backward(&self, cache: &EncoderCache, dy: &Array2<f64>, grad: &mut EncoderLayer) -> Array2<f64> {
        let dres2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let dff = apply_mask(dres2.clone(), &cache.mask2);
        let dact = self.ff_out.backward(&cache.ff_act, &dff, &mut grad.ff_out);
        let dpre = dact * &cache.ff_pre.mapv(gelu_grad);
        let dhidden = dres2 + self.ff_in.backward(&cache.hidden, &dpre, &mut grad.ff_in);
        let dres1 = self.norm1.backward(&cache.norm1, &dhidden, &mut grad.norm1);
        let dattn = apply_mask(dres1.clone(), &cache.mask1);
        dres1
            + self
                .attention
                .backward(&cache.input, &cache.attention, &dattn, &mut grad.attention)
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        self.attention.tensors(&format!("{prefix}.attention"), out);
        self.norm1.tensors(&format!("{prefix}.norm1"), out);
        self.ff_in.tensors(&format!("{prefix}.ff_in"), out);
        self.ff_out.tensors(&format!("{prefix}.ff_out"), out);
        self.norm2.tensors(&format!("{prefix}.norm2"), out);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        self.attention.tensors_mut(&format!("{prefix}.attention"), out);
        self.norm1.tensors_mut(&format!("{prefix}.norm1"), out);
        self.ff_in.tensors_mut(&format!("{prefix}.ff_in"), out);
        self.ff_out.tensors_mut(&format!("{prefix}.ff_out"), out);
        self.norm2.tensors_mut(&format!("{prefix}.norm2"), out);
    }
}

/// Everything the forward pass needs that does not depend on trainable
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub patches: Array2<f64>,
    /// Fixed encodings, one row per token including CLS.
    pub fixed_encoding: Array2<f64>,
    pub learned_rows: Vec<LearnedRow>,
    pub p_tdoa: Point3,
}

impl PreparedInput {
    pub fn n_tokens(&self) -> usize {
        self.patches.nrows() + 1
    }
}

pub struct ForwardCache {
    layers: Vec<EncoderCache>,
    head_inputs: Vec<Array2<f64>>,
    head_pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub n_total: usize,
    pub extent: [f64; 3],
    pub embedding: Linear,
    pub cls: Array1<f64>,
    pub encodings: EncodingTables,
    pub layers: Vec<EncoderLayer>,
    pub head: Vec<Linear>,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, env: &Environment, seed: u64) -> Result<Self> {
        Self::with_shape(config, env.anchors.len(), env.extent, seed)
    }

    pub fn with_shape(config: ModelConfig, n_total: usize, extent: [f64; 3], seed: u64) -> Result<Self> {
        config.validate()?;
        if n_total == 0 {
            return Err(Error::InvalidConfig("environment has no anchors".into()));
        }
        let enc_cfg = config.encoding_config(n_total);
        enc_cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = Normal::new(0.0, 0.02).expect("valid std");
        let d = config.d_model;
        let embedding = Linear::init(config.patch.patch_size(n_total), d, &mut rng);
        let cls = Array1::from_shape_simple_fn(d, || small.sample(&mut rng));
        let mut encodings = EncodingTables::zeros(&enc_cfg);
        for v in encodings
            .cls
            .iter_mut()
            .chain(encodings.sequence.iter_mut())
            .chain(encodings.within_cir.iter_mut())
        {
            *v = small.sample(&mut rng);
        }
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer::init(d, config.n_heads, config.d_ff, &mut rng))
            .collect();
        let mut head = Vec::with_capacity(config.head_widths.len());
        let mut width = d + 3;
        for &w in &config.head_widths {
            head.push(Linear::init(width, w, &mut rng));
            width = w;
        }
        if config.zero_init_output {
            let last = head.last_mut().expect("head has layers");
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
        Ok(Self {
            config,
            n_total,
            extent,
            embedding,
            cls,
            encodings,
            layers,
            head,
        })
    }

    pub fn encoding_config(&self) -> EncodingConfig {
        self.config.encoding_config(self.n_total)
    }

    /// Same structure, every value zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.embedding.tensors("embedding", &mut out);
        out.push(("cls".into(), self.cls.as_slice().expect("contiguous")));
        out.push((
            "encoding.cls".into(),
            self.encodings.cls.as_slice().expect("contiguous"),
        ));
        out.push((
            "encoding.sequence".into(),
            self.encodings.sequence.as_slice().expect("contiguous"),
        ));
        out.push((
            "encoding.within_cir".into(),
            self.encodings.within_cir.as_slice().expect("contiguous"),
        ));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.tensors(&format!("layer{i}"), &mut out);
        }
        for (i, lin) in self.head.iter().enumerate() {
            lin.tensors(&format!("head{i}"), &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.embedding.tensors_mut("embedding", &mut out);
        out.push(("cls".into(), self.cls.as_slice_mut().expect("contiguous")));
        out.push((
            "encoding.cls".into(),
            self.encodings.cls.as_slice_mut().expect("contiguous"),
        ));
        out.push((
            "encoding.sequence".into(),
            self.encodings.sequence.as_slice_mut().expect("contiguous"),
        ));
        out.push((
            "encoding.within_cir".into(),
            self.encodings.within_cir.as_slice_mut().expect("contiguous"),
        ));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.tensors_mut(&format!("layer{i}"), &mut out);
        }
        for (i, lin) in self.head.iter_mut().enumerate() {
            lin.tensors_mut(&format!("head{i}"), &mut out);
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Builds the CIR tensor in this model's ordering.
    pub fn input_tensor(&self, sample: &Sample, env: &Environment) -> Result<InputTensor> {
        let mut tensor = build_input_tensor(sample, env, self.config.ordering)?;
        if self.config.pads_rows() {
            pad_rows(&mut tensor, env);
        }
        Ok(tensor)
    }

    pub fn prepare(&self, sample: &Sample, env: &Environment, p_tdoa: Point3) -> Result<PreparedInput> {
        self.prepare_tensor(&self.input_tensor(sample, env)?, p_tdoa)
    }

    pub fn prepare_tensor(&self, tensor: &InputTensor, p_tdoa: Point3) -> Result<PreparedInput> {
        if tensor.n_total != self.n_total {
            return Err(Error::Shape(format!(
                "model built for {} anchors, tensor has {}",
                self.n_total, tensor.n_total
            )));
        }
        if !p_tdoa.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("TDoA estimate is not finite".into()));
        }
        let patches = patchify(tensor, &self.config.patch)?;
        let mut meta = Vec::with_capacity(patches.len() + 1);
        meta.push(crate::patching::TokenMeta {
            is_cls: true,
            ..Default::default()
        });
        meta.extend_from_slice(&patches.meta);
        let (fixed_encoding, learned_rows) = fixed_encodings(&meta, &self.encoding_config(), &self.extent)?;
        Ok(PreparedInput {
            patches: patches.values,
            fixed_encoding,
            learned_rows,
            p_tdoa,
        })
    }

    /// Embedded and encoded token matrix, CLS first.
    fn encoded_tokens(&self, input: &PreparedInput) -> Result<Array2<f64>> {
        if input.patches.ncols() != self.embedding.in_dim() {
            return Err(Error::Shape(format!(
                "patches have {} values, embedding expects {}",
                input.patches.ncols(),
                self.embedding.in_dim()
            )));
        }
        let embedded = self.embedding.forward(&input.patches);
        let mut x =
            concatenate(Axis(0), &[self.cls.view().insert_axis(Axis(0)), embedded.view()]).expect("matching widths");
        x += &input.fixed_encoding;
        add_learned_rows(&mut x, &input.learned_rows, &self.encodings);
        Ok(x)
    }

    /// Runs the encoder stack; dropout is active only when `rng` is given.
    pub fn encode(
        &self,
        x: &Array2<f64>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array2<f64>, Vec<EncoderCache>)> {
        if x.ncols() != self.config.d_model {
            return Err(Error::Shape(format!(
                "tokens have width {}, model expects {}",
                x.ncols(),
                self.config.d_model
            )));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, self.config.dropout, reborrow(&mut rng));
            h = next;
            caches.push(cache);
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("encoder produced non-finite activations".into()));
        }
        Ok((h, caches))
    }

    /// Encoder over an already embedded token sequence.
    pub fn encoder_forward(
        &self,
        tokens: &TokenSequence,
        train_rng: Option<&mut dyn RngCore>,
    ) -> Result<TokenSequence> {
        let (out, _) = self.encode(&tokens.tokens, train_rng)?;
        Ok(TokenSequence {
            tokens: out,
            meta: tokens.meta.clone(),
        })
    }

    fn head_forward(
        &self,
        cls_out: ndarray::ArrayView1<f64>,
        p_tdoa: &Point3,
    ) -> (Point3, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let normalized = Array1::from_iter((0..3).map(|k| p_tdoa[k] / self.extent[k]));
        let mut h = concatenate(Axis(0), &[cls_out, normalized.view()])
            .expect("1-D concat")
            .insert_axis(Axis(0));
        let mut inputs = Vec::with_capacity(self.head.len());
        let mut pre = Vec::with_capacity(self.head.len());
        for (i, lin) in self.head.iter().enumerate() {
            let z = lin.forward(&h);
            inputs.push(h);
            h = if i + 1 < self.head.len() {
                z.mapv(gelu)
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let delta = Point3::new(h[[0, 0]], h[[0, 1]], h[[0, 2]]);
        let out = if self.config.residual_output {
            p_tdoa + delta
        } else {
            delta
        };
        (out, inputs, pre)
    }

    /// MLP over `concat(cls_out, p_tdoa / extent)`.
    pub fn regression_head(&self, cls_out: ndarray::ArrayView1<f64>, p_tdoa: &Point3) -> Result<Point3> {
        if cls_out.len() != self.config.d_model {
            return Err(Error::Shape(format!(
                "CLS output has {} entries, expected {}",
                cls_out.len(),
                self.config.d_model
            )));
        }
        Ok(self.head_forward(cls_out, p_tdoa).0)
    }

    pub fn forward_prepared(
        &self,
        input: &PreparedInput,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Point3, ForwardCache)> {
        let x = self.encoded_tokens(input)?;
        let (h, layers) = self.encode(&x, rng)?;
        let (out, head_inputs, head_pre) = self.head_forward(h.row(0), &input.p_tdoa);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("regression head produced a non-finite position".into()));
        }
        Ok((
            out,
            ForwardCache {
                layers,
                head_inputs,
                head_pre,
            },
        ))
    }

    /// Eval-mode prediction.
    pub fn predict(&self, input: &PreparedInput) -> Result<Point3> {
        Ok(self.forward_prepared(input, None)?.0)
    }

    /// Full pipeline from a raw sample and its TDoA estimate.
    pub fn forward(&self, sample: &Sample, env: &Environment, p_tdoa: Point3) -> Result<Point3> {
        self.predict(&self.prepare(sample, env, p_tdoa)?)
    }

    /// Embedded and encoded token sequence, CLS first.
    pub fn encoded_sequence(&self, tensor: &InputTensor) -> Result<TokenSequence> {
        let patches = patchify(tensor, &self.config.patch)?;
        let seq = embed_patches(&patches, &self.embedding, &self.cls)?;
        apply_encodings(&seq, &self.encoding_config(), &self.encodings, &self.extent)
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/d(prediction)`.
    pub fn backward(&self, input: &PreparedInput, cache: &ForwardCache, dpred: &Point3, grads: &mut TransformerModel) {
        let mut dh = Array2::from_shape_vec((1, 3), dpred.iter().copied().collect()).expect("1x3");
        for i in (0..self.head.len()).rev() {
            if i + 1 < self.head.len() {
                dh *= &cache.head_pre[i].mapv(gelu_grad);
            }
            dh = self.head[i].backward(&cache.head_inputs[i], &dh, &mut grads.head[i]);
        }
        let d = self.config.d_model;
        let n_tokens = input.n_tokens();
        let mut dx = Array2::zeros((n_tokens, d));
        dx.row_mut(0).assign(&dh.slice(s![0, ..d]));
        for (layer, (cache, grad)) in self
            .layers
            .iter()
            .zip(cache.layers.iter().zip(grads.layers.iter_mut()))
            .rev()
        {
            dx = layer.backward(cache, &dx, grad);
        }
        grads.cls += &dx.row(0);
        for (k, row) in input.learned_rows.iter().enumerate() {
            let g = dx.row(k);
            match *row {
                LearnedRow::Cls => grads.encodings.cls += &g,
                LearnedRow::Sequence(i) => {
                    let mut r = grads.encodings.sequence.row_mut(i);
                    r += &g;
                }
                LearnedRow::WithinCir(j) => {
                    let mut r = grads.encodings.within_cir.row_mut(j);
                    r += &g;
                }
                LearnedRow::None => {}
            }
        }
        let dtokens = dx.slice(s![1.., ..]).to_owned();
        self.embedding.backward(&input.patches, &dtokens, &mut grads.embedding);
    }
}

/// Appends zero rows for anchors that did not report, in environment order.
pub fn pad_rows(tensor: &mut InputTensor, env: &Environment) {
    if tensor.rows.len() >= tensor.n_total {
        return;
    }
    let present: Vec<u32> = tensor.rows.iter().map(|r| r.anchor_id).collect();
    for a in &env.anchors {
        if !present.contains(&a.id) {
            tensor.rows.push(TensorRow {
                amplitude: [0.0; WINDOW_LEN],
                present: false,
                anchor_id: a.id,
                anchor_position: a.position,
                rx_time: None,
            });
        }
    }
}

/// `(pred, target)` → mean over coordinates of the squared error and its
/// gradient.
pub fn squared_error(pred: &Point3, target: &Point3) -> (f64, Point3) {
    let diff = pred - target;
    (diff.norm_squared() / 3.0, diff * (2.0 / 3.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: PreparedInput,
    pub target: Point3,
}

/// Mean squared error of the batch and its gradient for every parameter.
pub fn compute_gradients<E: Borrow<Example>>(
    model: &TransformerModel,
    batch: &[E],
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(f64, TransformerModel)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient of an empty batch".into()));
    }
    let mut grads = model.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let ex = ex.borrow();
        let (pred, cache) = model.forward_prepared(&ex.input, reborrow(&mut rng))?;
        let (l, dpred) = squared_error(&pred, &ex.target);
        loss += l * scale;
        model.backward(&ex.input, &cache, &(dpred * scale), &mut grads);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok((loss, grads))
}

/// Eval-mode loss.
pub fn batch_loss<E: Borrow<Example>>(model: &TransformerModel, batch: &[E]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let ex = ex.borrow();
        total += squared_error(&model.predict(&ex.input)?, &ex.target).0;
    }
    Ok(total / batch.len() as f64)
}

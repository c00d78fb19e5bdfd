//! The accent-aware ASR model: an encoder stack whose layers optionally
//! cross-attend over a selected accent codebook, a transformer decoder, a
//! CTC head, and the joint training objective.
//!
//! Each encoder layer computes, in order and with post-norm residuals:
//!
//! ```text
//! H-hat = MultiHeadAttn_self(h, h, h)
//! H     = Norm_self(h + H-hat)
//! C-hat = MultiHeadAttn_cb(H, c, c)        (codebook layers only)
//! C     = Norm_cb(H + C-hat)               (codebook layers only)
//! J-hat = Convolution(C)
//! J     = Norm_conv(C + J-hat)
//! h-hat = Linear_pw(J)
//! h'    = Norm_linear(J + h-hat)
//! ```
//!
//! The codebook bank `c` is selected once per forward pass by hard gating
//! and shared by every codebook layer.

mod checkpoint;
mod ctc;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use ctc::ctc_loss;
pub use train::{train, AdamOptimizer, TrainConfig, TrainLog, TrainSample};
pub use vocab::Vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{AccentId, CodebookSet};
use crate::layers::{
    conv_block, embedding_lookup, feed_forward, gaussian_matrix, multi_head_attention, AttnMask,
    ConvBlockParams, FeedForwardParams, LayerNormParams, MultiHeadAttnParams,
};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor, TensorError};

/// Cross-attention with the codebook uses a single attention head.
pub const CODEBOOK_ATTN_HEADS: usize = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model has codebooks: an accent id is required")]
    AccentRequired,
    #[error("accent index {index} out of range for {extent} seen accents")]
    InvalidAccent { index: usize, extent: usize },
    #[error("ctc infeasible: target needs at least {needed} frames, input has {got}")]
    CtcInfeasible { needed: usize, got: usize },
    #[error("decoder prefix must be nonempty and begin with <sos>")]
    BadPrefix,
    #[error("unknown token {0:?}")]
    UnknownToken(char),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ModelError>;

/// Model dimensions and structural choices; stored verbatim in the
/// checkpoint trailer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the input feature frames.
    pub input_dim: usize,
    /// d: width of every vector inside the encoder/decoder.
    pub model_dim: usize,
    /// L: encoder depth.
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    /// Self-attention heads (encoder and decoder).
    pub num_heads: usize,
    pub ffn_hidden: usize,
    /// Depth-wise convolution kernel width (odd).
    pub kernel_size: usize,
    /// Characters of the synthetic alphabet; V = alphabet length + 2.
    pub alphabet: String,
    /// Seen accents, in codebook order. M = length.
    pub accent_names: Vec<String>,
    /// When false the model is the plain baseline: no codebooks anywhere.
    pub use_codebooks: bool,
    /// P: entries per accent codebook.
    pub codebook_entries: usize,
    /// Zero-based encoder layers that cross-attend over the codebook.
    pub codebook_layers: Vec<usize>,
    /// Frozen codebooks stay at their random initialization.
    pub frozen_codebooks: bool,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn vocab_size(&self) -> usize {
        self.alphabet.chars().count() + 2
    }

    pub fn num_accents(&self) -> usize {
        self.accent_names.len()
    }

    pub fn layer_has_codebook(&self, layer: usize) -> bool {
        self.use_codebooks && self.codebook_layers.contains(&layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(ModelError::Invalid(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(ModelError::Invalid(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        if self.use_codebooks && (self.accent_names.is_empty() || self.codebook_entries == 0) {
            return Err(ModelError::Invalid(
                "codebooks enabled but no accents or zero entries".into(),
            ));
        }
        if let Some(&bad) = self
            .codebook_layers
            .iter()
            .find(|&&l| l >= self.num_encoder_layers)
        {
            return Err(ModelError::Invalid(format!(
                "codebook layer {bad} out of range for {} encoder layers",
                self.num_encoder_layers
            )));
        }
        Ok(())
    }
}

/// One encoder layer. `codebook_attn`/`norm_cb` are present exactly when
/// the layer cross-attends over the codebook; otherwise the layer computes
/// the standard block and H feeds the convolution directly.
#[derive(Clone, Debug)]
pub struct EncoderLayerParams<E: Element> {
    pub self_attn: MultiHeadAttnParams<E>,
    pub norm_self: LayerNormParams<E>,
    pub codebook_attn: Option<MultiHeadAttnParams<E>>,
    pub norm_cb: Option<LayerNormParams<E>>,
    pub conv: ConvBlockParams<E>,
    pub norm_conv: LayerNormParams<E>,
    pub ffn: FeedForwardParams<E>,
    pub norm_linear: LayerNormParams<E>,
}

impl<E: Element> EncoderLayerParams<E> {
    pub fn has_codebook(&self) -> bool {
        self.codebook_attn.is_some()
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<E>)) {
        self.self_attn.for_each_param(&format!("{prefix}.self_attn"), f);
        self.norm_self.for_each_param(&format!("{prefix}.norm_self"), f);
        if let Some(cb) = &mut self.codebook_attn {
            cb.for_each_param(&format!("{prefix}.cb_attn"), f);
        }
        if let Some(norm) = &mut self.norm_cb {
            norm.for_each_param(&format!("{prefix}.norm_cb"), f);
        }
        self.conv.for_each_param(&format!("{prefix}.conv"), f);
        self.norm_conv.for_each_param(&format!("{prefix}.norm_conv"), f);
        self.ffn.for_each_param(&format!("{prefix}.ffn"), f);
        self.norm_linear.for_each_param(&format!("{prefix}.norm_linear"), f);
    }
}

/// One standard transformer decoder layer: causal self-attention,
/// cross-attention over the encoder output, feed-forward; post-norm
/// residuals throughout.
#[derive(Clone, Debug)]
pub struct DecoderLayerParams<E: Element> {
    pub self_attn: MultiHeadAttnParams<E>,
    pub norm_self: LayerNormParams<E>,
    pub cross_attn: MultiHeadAttnParams<E>,
    pub norm_cross: LayerNormParams<E>,
    pub ffn: FeedForwardParams<E>,
    pub norm_ffn: LayerNormParams<E>,
}

impl<E: Element> DecoderLayerParams<E> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<E>)) {
        self.self_attn.for_each_param(&format!("{prefix}.self_attn"), f);
        self.norm_self.for_each_param(&format!("{prefix}.norm_self"), f);
        self.cross_attn.for_each_param(&format!("{prefix}.cross_attn"), f);
        self.norm_cross.for_each_param(&format!("{prefix}.norm_cross"), f);
        self.ffn.for_each_param(&format!("{prefix}.ffn"), f);
        self.norm_ffn.for_each_param(&format!("{prefix}.norm_ffn"), f);
    }
}

/// The complete named-parameter archive: frontend projection, encoder
/// stack, codebooks, decoder stack, token embedding, and the two output
/// heads (attention over V, CTC over V+1 with the blank at index V).
#[derive(Clone, Debug)]
pub struct ModelParams<E: Element> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub frontend_w: Tensor<E>,
    pub frontend_b: Tensor<E>,
    pub encoder_layers: Vec<EncoderLayerParams<E>>,
    pub codebooks: Option<CodebookSet<E>>,
    pub decoder_layers: Vec<DecoderLayerParams<E>>,
    pub token_embed: Tensor<E>,
    pub output_proj: Tensor<E>,
    pub ctc_proj: Tensor<E>,
}

impl<E: Element> ModelParams<E> {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let v = config.vocab_size();
        let mut init_rng = rng.split("model-init");

        let encoder_layers = (0..config.num_encoder_layers)
            .map(|l| {
                let has_cb = config.layer_has_codebook(l);
                EncoderLayerParams {
                    self_attn: MultiHeadAttnParams::init(d, config.num_heads, &mut init_rng),
                    norm_self: LayerNormParams::init(d),
                    codebook_attn: has_cb
                        .then(|| MultiHeadAttnParams::init(d, CODEBOOK_ATTN_HEADS, &mut init_rng)),
                    norm_cb: has_cb.then(|| LayerNormParams::init(d)),
                    conv: ConvBlockParams::init(d, config.kernel_size, &mut init_rng),
                    norm_conv: LayerNormParams::init(d),
                    ffn: FeedForwardParams::init(d, config.ffn_hidden, &mut init_rng),
                    norm_linear: LayerNormParams::init(d),
                }
            })
            .collect();

        let codebooks = if config.use_codebooks {
            Some(CodebookSet::init(
                &config.accent_names,
                config.codebook_entries,
                d,
                &mut init_rng.split("codebooks"),
                config.frozen_codebooks,
            )?)
        } else {
            None
        };

        let decoder_layers = (0..config.num_decoder_layers)
            .map(|_| DecoderLayerParams {
                self_attn: MultiHeadAttnParams::init(d, config.num_heads, &mut init_rng),
                norm_self: LayerNormParams::init(d),
                cross_attn: MultiHeadAttnParams::init(d, config.num_heads, &mut init_rng),
                norm_cross: LayerNormParams::init(d),
                ffn: FeedForwardParams::init(d, config.ffn_hidden, &mut init_rng),
                norm_ffn: LayerNormParams::init(d),
            })
            .collect();

        Ok(ModelParams {
            vocab: Vocab::new(&config.alphabet),
            frontend_w: gaussian_matrix(
                &[config.input_dim, d],
                (config.input_dim as f64).powf(-0.5),
                &mut init_rng,
            ),
            frontend_b: Tensor::parameter(&[d], vec![E::zero(); d]),
            encoder_layers,
            codebooks,
            decoder_layers,
            token_embed: gaussian_matrix(&[v, d], 0.02, &mut init_rng),
            output_proj: gaussian_matrix(&[d, v], (d as f64).powf(-0.5), &mut init_rng),
            ctc_proj: gaussian_matrix(&[d, v + 1], (d as f64).powf(-0.5), &mut init_rng),
            config: config.clone(),
        })
    }

    /// Visits every trainable tensor with a stable dotted name.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(String, &mut Tensor<E>)) {
        f("frontend.w".into(), &mut self.frontend_w);
        f("frontend.b".into(), &mut self.frontend_b);
        for (i, layer) in self.encoder_layers.iter_mut().enumerate() {
            layer.for_each_param(&format!("encoder.{i}"), f);
        }
        if let Some(cbs) = &mut self.codebooks {
            cbs.for_each_param("codebooks", f);
        }
        for (i, layer) in self.decoder_layers.iter_mut().enumerate() {
            layer.for_each_param(&format!("decoder.{i}"), f);
        }
        f("token_embed".into(), &mut self.token_embed);
        f("output_proj".into(), &mut self.output_proj);
        f("ctc_proj".into(), &mut self.ctc_proj);
    }

    fn resolve_accent(&self, accent: Option<AccentId>) -> Result<Option<AccentId>> {
        match (&self.codebooks, accent) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(ModelError::AccentRequired),
            (Some(cbs), Some(a)) => {
                if a.0 >= cbs.num_accents() {
                    Err(ModelError::InvalidAccent {
                        index: a.0,
                        extent: cbs.num_accents(),
                    })
                } else {
                    Ok(Some(a))
                }
            }
        }
    }

    /// Encoder forward pass under accent `accent`.
    pub fn encode(&self, x: &Tensor<E>, accent: Option<AccentId>) -> Result<Tensor<E>> {
        self.encode_with_skips(x, accent, None)
    }

    /// Encoder forward pass with optional whole-layer skips (stochastic
    /// depth during training; `skips[i]` true means layer i is the
    /// identity).
    pub fn encode_with_skips(
        &self,
        x: &Tensor<E>,
        accent: Option<AccentId>,
        skips: Option<&[bool]>,
    ) -> Result<Tensor<E>> {
        let accent = self.resolve_accent(accent)?;
        // One shared bank for all codebook layers.
        let bank = match (&self.codebooks, accent) {
            (Some(cbs), Some(a)) => Some(cbs.select(a)?),
            _ => None,
        };
        let eps = self.config.ln_eps;
        let mut h = x.matmul(&self.frontend_w)?.add_bias(&self.frontend_b)?;
        for (i, layer) in self.encoder_layers.iter().enumerate() {
            if skips.is_some_and(|s| s[i]) {
                continue;
            }
            let (h_hat, _) = multi_head_attention(&h, &h, &h, &layer.self_attn, AttnMask::None)?;
            let h_norm = layer.norm_self.apply(&h.add(&h_hat)?, eps)?;
            let c = match (&layer.codebook_attn, &bank) {
                (Some(cb_attn), Some(bank)) => {
                    let (c_hat, _) = codebook_cross_attention(&h_norm, bank, cb_attn)?;
                    layer
                        .norm_cb
                        .as_ref()
                        .expect("codebook layer carries its norm")
                        .apply(&h_norm.add(&c_hat)?, eps)?
                }
                _ => h_norm,
            };
            let j_hat = conv_block(&c, &layer.conv)?;
            let j = layer.norm_conv.apply(&c.add(&j_hat)?, eps)?;
            let ff = feed_forward(&j, &layer.ffn)?;
            h = layer.norm_linear.apply(&j.add(&ff)?, eps)?;
        }
        Ok(h)
    }

    /// Teacher-forced decoder pass over a full prefix; returns
    /// log-probabilities `[len, V]`, one row per prefix position.
    pub fn decoder_forward(&self, enc_out: &Tensor<E>, prefix: &[usize]) -> Result<Tensor<E>> {
        if prefix.is_empty() || prefix[0] != self.vocab.sos() {
            return Err(ModelError::BadPrefix);
        }
        let eps = self.config.ln_eps;
        let mut h = embedding_lookup(&self.token_embed, prefix)?;
        for layer in &self.decoder_layers {
            let (sa, _) = multi_head_attention(&h, &h, &h, &layer.self_attn, AttnMask::Causal)?;
            h = layer.norm_self.apply(&h.add(&sa)?, eps)?;
            let (ca, _) =
                multi_head_attention(&h, enc_out, enc_out, &layer.cross_attn, AttnMask::None)?;
            h = layer.norm_cross.apply(&h.add(&ca)?, eps)?;
            let ff = feed_forward(&h, &layer.ffn)?;
            h = layer.norm_ffn.apply(&h.add(&ff)?, eps)?;
        }
        Ok(h.matmul(&self.output_proj)?.log_softmax(1)?)
    }

    /// Next-token log-probabilities `[V]` after the given prefix.
    pub fn decoder_step(&self, enc_out: &Tensor<E>, prefix: &[usize]) -> Result<Tensor<E>> {
        let all = self.decoder_forward(enc_out, prefix)?;
        let last = all.slice_rows(prefix.len() - 1, 1)?;
        Ok(last.reshape(&[self.vocab.size()])?)
    }

    /// Teacher-forced attention cross-entropy: the negative log-likelihood
    /// of `target` followed by `<eos>`, given `<sos>`-prefixed inputs.
    pub fn attention_loss(&self, enc_out: &Tensor<E>, target: &[usize]) -> Result<Tensor<E>> {
        let mut inputs = Vec::with_capacity(target.len() + 1);
        inputs.push(self.vocab.sos());
        inputs.extend_from_slice(target);
        let logprobs = self.decoder_forward(enc_out, &inputs)?;
        let mut wanted = target.to_vec();
        wanted.push(self.vocab.eos());
        let picked = logprobs.take_per_row(&wanted)?;
        Ok(picked.sum_all().scale(-1.0))
    }

    /// CTC emission log-probabilities `[T, V+1]` for an encoded input.
    pub fn ctc_logprobs(&self, enc_out: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(enc_out.matmul(&self.ctc_proj)?.log_softmax(1)?)
    }

    /// Joint objective: `w * ctc + (1 - w) * attention` over one sample.
    pub fn joint_loss(
        &self,
        x: &Tensor<E>,
        accent: Option<AccentId>,
        target: &[usize],
        ctc_weight: f64,
    ) -> Result<Tensor<E>> {
        self.joint_loss_with_skips(x, accent, target, ctc_weight, None)
    }

    pub(crate) fn joint_loss_with_skips(
        &self,
        x: &Tensor<E>,
        accent: Option<AccentId>,
        target: &[usize],
        ctc_weight: f64,
        skips: Option<&[bool]>,
    ) -> Result<Tensor<E>> {
        let enc = self.encode_with_skips(x, accent, skips)?;
        let ctc = ctc_loss(&enc.matmul(&self.ctc_proj)?, target, self.vocab.blank())?;
        let att = self.attention_loss(&enc, target)?;
        Ok(ctc.scale(ctc_weight).add(&att.scale(1.0 - ctc_weight))?)
    }
}

/// Single-head cross-attention from speech frames onto a codebook bank.
/// Returns the frame-relevant summaries `[T, d]` and the attention
/// distribution `[T, P]` (each row sums to one).
pub fn codebook_cross_attention<E: Element>(
    frames: &Tensor<E>,
    bank: &Tensor<E>,
    params: &MultiHeadAttnParams<E>,
) -> std::result::Result<(Tensor<E>, Tensor<E>), TensorError> {
    assert_eq!(params.n_heads, CODEBOOK_ATTN_HEADS, "codebook attention is single-head");
    let (out, attn) = multi_head_attention(frames, bank, bank, params, AttnMask::None)?;
    let (t, p) = (frames.shape()[0], bank.shape()[0]);
    let alpha = Tensor::from_vec(&[t, p], attn.data().to_vec());
    Ok((out, alpha))
}

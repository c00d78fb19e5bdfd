//! Neural building blocks: multi-head attention (self and cross), the
//! convolution block (a depth-wise convolution sandwiched between two
//! point-wise convolutions), the position-wise feed-forward layer, and
//! embedding lookup.
//!
//! Layers are pure functions over immutable parameter structs; all of them
//! record gradients through the tensor tape.

use crate::rng::Rng;
use crate::tensor::{Element, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Value used to "set" masked attention logits before softmax.
const MASK_LOGIT: f64 = -1e9;

/// Optional attention mask.
#[derive(Clone, Copy, Debug)]
pub enum AttnMask<'a> {
    /// No masking: every query sees every key.
    None,
    /// Query at position i attends only to keys at positions <= i
    /// (requires equal query/key lengths).
    Causal,
    /// Per-key validity for batched variable-length sequences; `false`
    /// entries are masked out.
    Keys(&'a [bool]),
}

/// Projection matrices for one multi-head attention module.
#[derive(Clone, Debug)]
pub struct MultiHeadAttnParams<E: Element> {
    pub w_q: Tensor<E>,
    pub w_k: Tensor<E>,
    pub w_v: Tensor<E>,
    pub w_o: Tensor<E>,
    pub n_heads: usize,
}

impl<E: Element> MultiHeadAttnParams<E> {
    pub fn init(model_dim: usize, n_heads: usize, rng: &mut Rng) -> Self {
        assert!(
            n_heads > 0 && model_dim % n_heads == 0,
            "model_dim {model_dim} not divisible by {n_heads} heads"
        );
        let mut mat =
            || gaussian_matrix(&[model_dim, model_dim], (model_dim as f64).powf(-0.5), rng);
        MultiHeadAttnParams {
            w_q: mat(),
            w_k: mat(),
            w_v: mat(),
            w_o: mat(),
            n_heads,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub(crate) fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor<E>),
    ) {
        f(format!("{prefix}.w_q"), &mut self.w_q);
        f(format!("{prefix}.w_k"), &mut self.w_k);
        f(format!("{prefix}.w_v"), &mut self.w_v);
        f(format!("{prefix}.w_o"), &mut self.w_o);
    }
}

/// Kernels for the convolution block. The depth-wise kernel acts
/// per-channel; point-wise kernels are plain d-by-d projections. Single
/// stride and symmetric padding keep input and output widths equal.
#[derive(Clone, Debug)]
pub struct ConvBlockParams<E: Element> {
    pub pointwise_in: Tensor<E>,
    pub pointwise_in_bias: Tensor<E>,
    pub depthwise: Tensor<E>,
    pub depthwise_bias: Tensor<E>,
    pub pointwise_out: Tensor<E>,
    pub pointwise_out_bias: Tensor<E>,
}

impl<E: Element> ConvBlockParams<E> {
    pub fn init(model_dim: usize, kernel_size: usize, rng: &mut Rng) -> Self {
        assert!(kernel_size % 2 == 1, "kernel_size must be odd, got {kernel_size}");
        let scale = (model_dim as f64).powf(-0.5);
        ConvBlockParams {
            pointwise_in: gaussian_matrix(&[model_dim, model_dim], scale, rng),
            pointwise_in_bias: Tensor::parameter(&[model_dim], vec![E::zero(); model_dim]),
            depthwise: gaussian_matrix(
                &[kernel_size, model_dim],
                (kernel_size as f64).powf(-0.5),
                rng,
            ),
            depthwise_bias: Tensor::parameter(&[model_dim], vec![E::zero(); model_dim]),
            pointwise_out: gaussian_matrix(&[model_dim, model_dim], scale, rng),
            pointwise_out_bias: Tensor::parameter(&[model_dim], vec![E::zero(); model_dim]),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.depthwise.shape()[0]
    }

    pub(crate) fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor<E>),
    ) {
        f(format!("{prefix}.pw_in"), &mut self.pointwise_in);
        f(format!("{prefix}.pw_in_bias"), &mut self.pointwise_in_bias);
        f(format!("{prefix}.depthwise"), &mut self.depthwise);
        f(format!("{prefix}.depthwise_bias"), &mut self.depthwise_bias);
        f(format!("{prefix}.pw_out"), &mut self.pointwise_out);
        f(format!("{prefix}.pw_out_bias"), &mut self.pointwise_out_bias);
    }
}

/// Two linear transformations with a ReLU activation between them.
#[derive(Clone, Debug)]
pub struct FeedForwardParams<E: Element> {
    pub w1: Tensor<E>,
    pub b1: Tensor<E>,
    pub w2: Tensor<E>,
    pub b2: Tensor<E>,
}

impl<E: Element> FeedForwardParams<E> {
    pub fn init(model_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        assert!(hidden_dim > 0);
        FeedForwardParams {
            w1: gaussian_matrix(&[model_dim, hidden_dim], (model_dim as f64).powf(-0.5), rng),
            b1: Tensor::parameter(&[hidden_dim], vec![E::zero(); hidden_dim]),
            w2: gaussian_matrix(&[hidden_dim, model_dim], (hidden_dim as f64).powf(-0.5), rng),
            b2: Tensor::parameter(&[model_dim], vec![E::zero(); model_dim]),
        }
    }

    pub(crate) fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor<E>),
    ) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }
}

/// Layer-normalization gain/bias pair.
#[derive(Clone, Debug)]
pub struct LayerNormParams<E: Element> {
    pub gain: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> LayerNormParams<E> {
    pub fn init(model_dim: usize) -> Self {
        LayerNormParams {
            gain: Tensor::parameter(&[model_dim], vec![E::one(); model_dim]),
            bias: Tensor::parameter(&[model_dim], vec![E::zero(); model_dim]),
        }
    }

    pub fn apply(&self, x: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        x.layer_norm(&self.gain, &self.bias, eps)
    }

    pub(crate) fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor<E>),
    ) {
        f(format!("{prefix}.gain"), &mut self.gain);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

pub(crate) fn gaussian_matrix<E: Element>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<E> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| E::from_f64(rng.gaussian() * std))
        .collect();
    Tensor::parameter(shape, data)
}

fn apply_mask<E: Element>(scores: &Tensor<E>, mask: AttnMask<'_>) -> Result<Tensor<E>> {
    if matches!(mask, AttnMask::None) {
        return Ok(scores.clone());
    }
    let (t_q, t_k) = (scores.shape()[0], scores.shape()[1]);
    if let AttnMask::Keys(valid) = mask {
        assert_eq!(valid.len(), t_k, "key mask length mismatch");
    }
    let keep = |i: usize, j: usize| -> bool {
        match mask {
            AttnMask::None => true,
            AttnMask::Causal => j <= i,
            AttnMask::Keys(valid) => valid[j],
        }
    };
    let mut keep_data = vec![E::zero(); t_q * t_k];
    let mut fill_data = vec![E::zero(); t_q * t_k];
    for i in 0..t_q {
        for j in 0..t_k {
            if keep(i, j) {
                keep_data[i * t_k + j] = E::one();
            } else {
                fill_data[i * t_k + j] = E::from_f64(MASK_LOGIT);
            }
        }
    }
    let keep_t = Tensor::from_vec(scores.shape(), keep_data);
    let fill_t = Tensor::from_vec(scores.shape(), fill_data);
    scores.mul(&keep_t)?.add(&fill_t)
}

/// Standard multi-head attention. Returns the attended output
/// (queries-by-model_dim) and, for inspection, a detached copy of the
/// attention weights with shape `[heads, T_q, T_k]`.
///
/// Scores are scaled by `1/sqrt(model_dim / heads)`; each head's rows sum
/// to one.
pub fn multi_head_attention<E: Element>(
    q_in: &Tensor<E>,
    k_in: &Tensor<E>,
    v_in: &Tensor<E>,
    params: &MultiHeadAttnParams<E>,
    mask: AttnMask<'_>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let t_k = k_in.shape()[0];
    if t_k == 0 {
        return Err(TensorError::Invalid {
            op: "multi_head_attention",
            msg: "empty key sequence".into(),
        });
    }
    if matches!(mask, AttnMask::Causal) {
        assert_eq!(
            q_in.shape()[0],
            t_k,
            "causal mask needs equal query/key lengths"
        );
    }
    let d = params.model_dim();
    let heads = params.n_heads;
    let dk = d / heads;
    let t_q = q_in.shape()[0];

    let q = q_in.matmul(&params.w_q)?;
    let k = k_in.matmul(&params.w_k)?;
    let v = v_in.matmul(&params.w_v)?;

    let mut contexts = Vec::with_capacity(heads);
    let mut attn_data = Vec::with_capacity(heads * t_q * t_k);
    for h in 0..heads {
        let qh = q.slice_cols(h * dk, dk)?;
        let kh = k.slice_cols(h * dk, dk)?;
        let vh = v.slice_cols(h * dk, dk)?;
        let scores = qh
            .matmul(&kh.transpose()?)?
            .scale(1.0 / (dk as f64).sqrt());
        let scores = apply_mask(&scores, mask)?;
        let attn = scores.softmax(1)?;
        attn_data.extend_from_slice(attn.data());
        contexts.push(attn.matmul(&vh)?);
    }
    let out = Tensor::concat_cols(&contexts)?.matmul(&params.w_o)?;
    let attn_info = Tensor::from_vec(&[heads, t_q, t_k], attn_data);
    Ok((out, attn_info))
}

/// Convolution block: point-wise in, depth-wise over time, point-wise out.
/// Shape-preserving (same padding, single stride).
pub fn conv_block<E: Element>(x: &Tensor<E>, params: &ConvBlockParams<E>) -> Result<Tensor<E>> {
    let h = x
        .matmul(&params.pointwise_in)?
        .add_bias(&params.pointwise_in_bias)?;
    let h = h.depthwise_conv1d(&params.depthwise, &params.depthwise_bias)?;
    h.matmul(&params.pointwise_out)?
        .add_bias(&params.pointwise_out_bias)
}

/// Position-wise feed-forward: `relu(x W1 + b1) W2 + b2`.
pub fn feed_forward<E: Element>(x: &Tensor<E>, params: &FeedForwardParams<E>) -> Result<Tensor<E>> {
    x.matmul(&params.w1)?
        .add_bias(&params.b1)?
        .relu()
        .matmul(&params.w2)?
        .add_bias(&params.b2)
}

/// Row gather from an embedding table; gradients scatter back into the
/// table, accumulating over repeated ids.
pub fn embedding_lookup<E: Element>(table: &Tensor<E>, ids: &[usize]) -> Result<Tensor<E>> {
    table.gather_rows(ids)
}

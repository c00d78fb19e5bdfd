//! Per-accent codebooks with deterministic hard gating.
//!
//! One bank of P learnable d-dimensional entries per seen accent, stored as
//! a single `[M, P, d]` parameter tensor. Selecting an accent yields a view
//! of that bank only: the forward pass for accent `a` provably reads no
//! other bank, and gradients flow back into bank `a` alone. A frozen set
//! keeps its entries bitwise constant across training.

use crate::rng::Rng;
use crate::tensor::{Element, Tensor, TensorError};

/// Index of a seen accent, valid in `[0, M)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AccentId(pub usize);

impl std::fmt::Display for AccentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// M accent-indexed banks of P learnable d-dimensional entries.
#[derive(Clone, Debug)]
pub struct CodebookSet<E: Element> {
    /// Shape `[M, P, d]`.
    pub entries: Tensor<E>,
    /// Frozen sets receive no updates during training.
    pub frozen: bool,
    pub accent_names: Vec<String>,
}

/// Standard embedding-scale initialization; keeps early attention logits
/// small.
pub const CODEBOOK_INIT_STD: f64 = 0.02;

impl<E: Element> CodebookSet<E> {
    /// Creates one codebook per accent name, entries drawn i.i.d. from
    /// Gaussian(0, 0.02^2). Deterministic under the rng seed.
    pub fn init(
        accent_names: &[String],
        entries_per_accent: usize,
        dim: usize,
        rng: &mut Rng,
        frozen: bool,
    ) -> Result<Self, TensorError> {
        let m = accent_names.len();
        if m == 0 || entries_per_accent == 0 || dim == 0 {
            return Err(TensorError::Invalid {
                op: "init_codebooks",
                msg: format!("dimensions must be positive (M={m}, P={entries_per_accent}, d={dim})"),
            });
        }
        let numel = m * entries_per_accent * dim;
        let data = (0..numel)
            .map(|_| E::from_f64(rng.gaussian() * CODEBOOK_INIT_STD))
            .collect();
        Ok(CodebookSet {
            entries: Tensor::parameter(&[m, entries_per_accent, dim], data),
            frozen,
            accent_names: accent_names.to_vec(),
        })
    }

    pub fn num_accents(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn entries_per_accent(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[2]
    }

    /// Hard gating: the bank for accent `a` as a `[P, d]` tensor. Gradients
    /// through the selection land in bank `a` only; every other bank is
    /// inert for this forward pass.
    pub fn select(&self, a: AccentId) -> Result<Tensor<E>, TensorError> {
        let m = self.num_accents();
        if a.0 >= m {
            return Err(TensorError::IndexOutOfRange {
                op: "select",
                index: a.0,
                extent: m,
            });
        }
        let p = self.entries_per_accent();
        let d = self.dim();
        self.entries
            .reshape(&[m * p, d])?
            .slice_rows(a.0 * p, p)
    }

    pub fn accent_index(&self, name: &str) -> Option<AccentId> {
        self.accent_names
            .iter()
            .position(|n| n == name)
            .map(AccentId)
    }

    pub(crate) fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor<E>),
    ) {
        f(format!("{prefix}.entries"), &mut self.entries);
    }
}

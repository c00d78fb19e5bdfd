//! CTC loss: negative log-likelihood of a label sequence with the
//! alignment marginalized out, computed by the log-space forward recursion
//! over the blank-expanded label sequence.
//!
//! The recursion is built from differentiable tensor ops (gather, slice,
//! concat, logaddexp), so its gradient comes from the tape rather than a
//! hand-derived backward pass.

use super::ModelError;
use crate::tensor::{Element, Tensor};

type Result<T> = std::result::Result<T, ModelError>;

/// Minimum number of frames needed to emit `target`: one per token plus a
/// mandatory blank between adjacent repeats.
pub(crate) fn min_frames(target: &[usize]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

/// CTC loss for one utterance.
///
/// `logits` has shape `[T, V+1]` with the blank at index `blank` (= V);
/// `target` holds token ids in `[0, V)`. Returns the scalar
/// `-log P(target | logits)`. Targets that cannot fit in T frames are an
/// explicit infeasibility error instead of an infinite loss.
pub fn ctc_loss<E: Element>(
    logits: &Tensor<E>,
    target: &[usize],
    blank: usize,
) -> Result<Tensor<E>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != blank + 1 {
        return Err(ModelError::Invalid(format!(
            "ctc expects [T, {}] logits, got {shape:?}",
            blank + 1
        )));
    }
    let t_len = shape[0];
    if let Some(&bad) = target.iter().find(|&&y| y >= blank) {
        return Err(ModelError::Invalid(format!(
            "ctc target token {bad} out of range (blank is {blank})"
        )));
    }
    let needed = min_frames(target);
    if t_len < needed.max(1) {
        return Err(ModelError::CtcInfeasible {
            needed: needed.max(1),
            got: t_len,
        });
    }

    // Blank-expanded labels: blank, y1, blank, y2, ..., blank.
    let s_len = 2 * target.len() + 1;
    let mut labels = Vec::with_capacity(s_len);
    for &y in target {
        labels.push(blank);
        labels.push(y);
    }
    labels.push(blank);

    let log_probs = logits.log_softmax(1)?;
    let width = blank + 1;
    let emission = |t: usize| -> Result<Tensor<E>> {
        Ok(log_probs
            .slice_rows(t, 1)?
            .reshape(&[width])?
            .gather_rows(&labels)?)
    };

    // Skip transitions s-2 -> s are allowed only onto a token position that
    // differs from the token two back.
    let skip_allowed: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && labels[s] != blank && labels[s] != labels[s - 2])
        .collect();
    let neg_inf = E::neg_infinity();
    let skip_mask = Tensor::from_vec(
        &[s_len],
        skip_allowed
            .iter()
            .map(|&ok| if ok { E::zero() } else { neg_inf })
            .collect(),
    );
    // At t = 0 only the first blank and the first token are reachable.
    let init_mask = Tensor::from_vec(
        &[s_len],
        (0..s_len)
            .map(|s| if s < 2 { E::zero() } else { neg_inf })
            .collect(),
    );

    let mut alpha = emission(0)?.add(&init_mask)?;
    for t in 1..t_len {
        let stay = alpha.clone();
        let step = Tensor::concat_rows(&[
            Tensor::full(&[1], neg_inf),
            alpha.slice_rows(0, s_len - 1)?,
        ])?;
        let mut reach = stay.logaddexp(&step)?;
        if s_len > 2 {
            let skip = Tensor::concat_rows(&[
                Tensor::full(&[2], neg_inf),
                alpha.slice_rows(0, s_len - 2)?,
            ])?
            .add(&skip_mask)?;
            reach = reach.logaddexp(&skip)?;
        }
        alpha = emission(t)?.add(&reach)?;
    }

    let total = if s_len == 1 {
        alpha.reshape(&[])?
    } else {
        let last = alpha.slice_rows(s_len - 1, 1)?;
        let prev = alpha.slice_rows(s_len - 2, 1)?;
        last.logaddexp(&prev)?.reshape(&[])?
    };
    Ok(total.scale(-1.0))
}

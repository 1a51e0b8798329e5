//! RTD and MLM loss evaluators. Both return sums over positions, not means.

use super::example::RtdTargets;
use super::mask::MaskPlan;
use crate::error::{Error, Result};
use crate::{Real, TokenId};

/// Clamp applied to predicted probabilities before taking logs.
pub const LOSS_EPS: f64 = 1e-7;

/// `-Σ [replaced_i · ln p_i + (1 - replaced_i) · ln(1 - p_i)]` over non-PAD positions.
///
/// `pred_replace_prob` has one entry per sequence position; entries at
/// padding positions are ignored. Probabilities are clamped to `[ε, 1 - ε]`.
pub fn rtd_loss<F: Real, T: RtdTargets + ?Sized>(
    pred_replace_prob: &[F],
    ex: &T,
    pad: TokenId,
) -> Result<F> {
    if pred_replace_prob.len() != ex.target_len() {
        return Err(Error::LengthMismatch {
            expected: ex.target_len(),
            found: pred_replace_prob.len(),
        });
    }
    let eps = F::lit(LOSS_EPS);
    let hi = F::one() - eps;
    let mut total = F::zero();
    for (i, &p) in pred_replace_prob.iter().enumerate() {
        if ex.is_padding(i, pad) {
            continue;
        }
        if p.is_nan() {
            return Err(Error::InvalidParam(format!("prediction {i} is NaN")));
        }
        let p = p.max(eps).min(hi);
        total = total
            - if ex.is_replaced(i) {
                p.ln()
            } else {
                (F::one() - p).ln()
            };
    }
    Ok(total)
}

/// Number of positions [`rtd_loss`] sums over.
pub fn rtd_positions<T: RtdTargets + ?Sized>(ex: &T, pad: TokenId) -> usize {
    (0..ex.target_len()).filter(|&i| !ex.is_padding(i, pad)).count()
}

/// `-Σ ln p(x_i)` over masked positions, given the model's log-probability of each original token.
pub fn mlm_loss<F: Real>(pred_logprob_of_original: &[F], plan: &MaskPlan) -> Result<F> {
    if pred_logprob_of_original.len() != plan.len() {
        return Err(Error::LengthMismatch {
            expected: plan.len(),
            found: pred_logprob_of_original.len(),
        });
    }
    let mut total = F::zero();
    for (i, &lp) in pred_logprob_of_original.iter().enumerate() {
        if !(lp <= F::zero()) {
            return Err(Error::InvalidParam(format!(
                "log-probability {lp} at masked position {i} is not <= 0"
            )));
        }
        total = total - lp;
    }
    Ok(total)
}

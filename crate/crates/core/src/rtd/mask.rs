use super::rng::{choose_sorted, RngKey, Stream};
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::TokenId;

/// Masked positions, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskPlan {
    positions: Vec<u32>,
}

impl MaskPlan {
    /// Validates a plan against `seq`: in range, ascending, never on a special token.
    pub fn new(positions: Vec<u32>, seq: &[TokenId], vocab: &Vocab) -> Result<Self> {
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam(
                "mask positions must be strictly increasing".into(),
            ));
        }
        for &p in &positions {
            match seq.get(p as usize) {
                None => {
                    return Err(Error::InvalidParam(format!(
                        "mask position {p} outside sequence of length {}",
                        seq.len()
                    )))
                }
                Some(&t) if vocab.is_special(t) => {
                    return Err(Error::InvalidParam(format!(
                        "mask position {p} holds special token {t}"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { positions })
    }

    /// Builds a plan without validation; callers guarantee the invariants.
    pub(crate) fn from_sorted(positions: Vec<u32>) -> Self {
        Self { positions }
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, position: u32) -> bool {
        self.positions.binary_search(&position).is_ok()
    }
}

/// `floor(x + 0.5)`.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Chooses `round(mask_ratio * #maskable)` (at least one) non-special positions.
pub fn make_mask_plan(
    seq: &[TokenId],
    mask_ratio: f64,
    key: RngKey,
    vocab: &Vocab,
) -> Result<MaskPlan> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::InvalidParam(format!(
            "mask ratio must lie in (0, 1), got {mask_ratio}"
        )));
    }
    let candidates: Vec<u32> = seq
        .iter()
        .enumerate()
        .filter(|(_, &t)| !vocab.is_special(t))
        .map(|(i, _)| i as u32)
        .collect();
    if candidates.is_empty() {
        return Err(Error::NothingToMask);
    }
    let k = round_half_up(mask_ratio * candidates.len() as f64).max(1);
    let mut stream = key.at(0).stream(Stream::MaskPlan);
    let chosen = choose_sorted(&mut stream, candidates.len(), k);
    Ok(MaskPlan::from_sorted(
        chosen.into_iter().map(|i| candidates[i]).collect(),
    ))
}

/// Replaces every planned position with MASK.
pub fn apply_mask(seq: &[TokenId], plan: &MaskPlan, vocab: &Vocab) -> Vec<TokenId> {
    let mut out = seq.to_vec();
    for &p in plan.positions() {
        out[p as usize] = vocab.mask_id();
    }
    out
}

/// Replaces `round(gamma * #eligible)` non-special tokens with UNK.
///
/// MASK and every other special token are left in place.
pub fn drop_tokens(
    seq_masked: &[TokenId],
    gamma: f64,
    key: RngKey,
    vocab: &Vocab,
) -> Result<Vec<TokenId>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParam(format!(
            "drop fraction must lie in [0, 1], got {gamma}"
        )));
    }
    let eligible: Vec<usize> = seq_masked
        .iter()
        .enumerate()
        .filter(|(_, &t)| !vocab.is_special(t))
        .map(|(i, _)| i)
        .collect();
    let k = round_half_up(gamma * eligible.len() as f64).min(eligible.len());
    let mut out = seq_masked.to_vec();
    let mut stream = key.at(0).stream(Stream::DropToken);
    for i in choose_sorted(&mut stream, eligible.len(), k) {
        out[eligible[i]] = vocab.unk_id();
    }
    Ok(out)
}

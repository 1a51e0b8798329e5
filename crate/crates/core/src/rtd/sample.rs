use super::rng::{unit_f64, RngKey, Stream};
use crate::dist::Dist;
use crate::{Real, TokenId};

/// Inverse-CDF choice for a uniform `u ∈ [0, 1)`.
///
/// Entries are walked in ascending id order; the first id whose cumulative
/// mass exceeds `u` wins. If rounding leaves `u` beyond the final cumulative
/// sum, the last positive-probability id is returned.
pub fn sample_with_unit<F: Real>(d: &Dist<F>, u: F) -> TokenId {
    let mut acc = F::zero();
    let mut last = None;
    for (id, p) in d.support() {
        acc = acc + p;
        if u < acc {
            return id;
        }
        last = Some(id);
    }
    last.expect("distribution has positive mass")
}

/// Draws one token using a single 64-bit draw from `key`'s replacement stream.
pub fn sample_token<F: Real>(d: &Dist<F>, key: RngKey) -> TokenId {
    sample_with_bits(d, key.draw(Stream::Replace, 0))
}

/// Inverse-CDF choice for raw 64-bit randomness (top 53 bits used).
pub fn sample_with_bits<F: Real>(d: &Dist<F>, bits: u64) -> TokenId {
    sample_with_unit(d, F::lit(unit_f64(bits)))
}

use super::mask::{apply_mask, drop_tokens, make_mask_plan, MaskPlan};
use super::rng::RngKey;
use super::sample::sample_token;
use crate::corpus::Vocab;
use crate::curriculum::{Level, Schedule};
use crate::dist::{Dist, DistProvider, ProviderContext, ProviderKind};
use crate::error::{Error, Result};
use crate::{Real, TokenId, TokenSeq};

/// Where an example came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleMeta<F> {
    pub epoch: u32,
    pub example_index: u64,
    /// Temperature or gamma in effect when the example was generated.
    pub level: Level<F>,
}

/// A corrupted sequence with its per-position replaced/original targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedExample<F> {
    pub original: TokenSeq,
    pub corrupted: TokenSeq,
    pub replaced: Vec<bool>,
    pub mask: MaskPlan,
    pub meta: ExampleMeta<F>,
}

impl<F: Real> CorruptedExample<F> {
    pub fn len(&self) -> usize {
        self.corrupted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrupted.is_empty()
    }

    pub fn replaced_count(&self) -> usize {
        self.replaced.iter().filter(|&&b| b).count()
    }

    /// Checks the structural invariants linking original, corrupted, targets and mask.
    pub fn validate(&self) -> Result<()> {
        let n = self.original.len();
        if self.corrupted.len() != n || self.replaced.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.corrupted.len().min(self.replaced.len()),
            });
        }
        for i in 0..n {
            let masked = self.mask.contains(i as u32);
            let differs = self.corrupted[i] != self.original[i];
            if !masked && (differs || self.replaced[i]) {
                return Err(Error::InvalidParam(format!(
                    "position {i} is not masked but is changed or flagged"
                )));
            }
            if masked && self.replaced[i] != differs {
                return Err(Error::InvalidParam(format!(
                    "target at masked position {i} disagrees with the tokens"
                )));
            }
        }
        Ok(())
    }
}

/// Per-position targets consumed by the RTD loss.
pub trait RtdTargets {
    fn target_len(&self) -> usize;
    fn is_replaced(&self, i: usize) -> bool;
    /// Whether position `i` is padding and excluded from the loss.
    fn is_padding(&self, i: usize, pad: TokenId) -> bool;
}

impl<F: Real> RtdTargets for CorruptedExample<F> {
    fn target_len(&self) -> usize {
        self.replaced.len()
    }

    fn is_replaced(&self, i: usize) -> bool {
        self.replaced[i]
    }

    fn is_padding(&self, i: usize, pad: TokenId) -> bool {
        self.original[i] == pad
    }
}

/// Fraction of positions whose token was replaced.
pub fn replace_rate<T: RtdTargets + ?Sized>(ex: &T) -> f64 {
    let n = ex.target_len();
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n).filter(|&i| ex.is_replaced(i)).count();
    hits as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptOptions {
    pub mask_ratio: f64,
    /// Drop `gamma(u)` of the provider's input tokens to UNK.
    pub drop_tokens: bool,
}

impl Default for CorruptOptions {
    fn default() -> Self {
        Self {
            mask_ratio: 0.15,
            drop_tokens: false,
        }
    }
}

/// Rejects provider/schedule/option combinations that have no meaning.
///
/// A temperature schedule scales the provider output, so it cannot drive an
/// interpolating provider or token dropping. A gamma schedule needs something
/// to drive: an interpolating provider, token dropping, or both.
pub fn check_compatible<F: Real>(
    provider: &DistProvider<F>,
    schedule: &Schedule<F>,
    opts: &CorruptOptions,
) -> Result<()> {
    let interp = provider.kind() == ProviderKind::LogInterp;
    if schedule.is_temperature() {
        if interp {
            return Err(Error::Incompatible(
                "interpolating provider needs a gamma schedule, not a temperature schedule".into(),
            ));
        }
        if opts.drop_tokens {
            return Err(Error::Incompatible(
                "token dropping needs a gamma schedule".into(),
            ));
        }
    } else if !interp && !opts.drop_tokens {
        return Err(Error::Incompatible(format!(
            "{} schedule needs an interpolating provider or token dropping",
            schedule.kind().name()
        )));
    }
    Ok(())
}

/// The replacement distribution at one masked position after the curriculum transform.
pub fn replacement_dist<F: Real>(
    provider: &DistProvider<F>,
    ctx: &ProviderContext<'_>,
    level: Level<F>,
) -> Result<Dist<F>> {
    match level {
        Level::Temperature(t) => provider.dist(ctx)?.temperature_scale(t),
        Level::Gamma(g) if provider.kind() == ProviderKind::LogInterp => {
            provider.interpolated(ctx, g)
        }
        Level::Gamma(_) => Ok(provider.dist(ctx)?.into_owned()),
    }
}

/// Builds one corrupted example.
///
/// mask plan → masked input → optional token dropping with `gamma(u)` → for
/// each masked position, the curriculum-transformed provider distribution is
/// sampled with the position's own key. The epoch and example index are taken
/// from `key`.
pub fn corrupt_example<F: Real>(
    seq: &[TokenId],
    provider: &DistProvider<F>,
    schedule: &Schedule<F>,
    u: F,
    key: RngKey,
    opts: &CorruptOptions,
    vocab: &Vocab,
) -> Result<CorruptedExample<F>> {
    check_compatible(provider, schedule, opts)?;
    if provider.vocab_size() != vocab.size() {
        return Err(Error::VocabMismatch {
            found: provider.vocab_size(),
            expected: vocab.size(),
        });
    }
    let level = schedule.level(u)?;
    let plan = make_mask_plan(seq, opts.mask_ratio, key, vocab)?;
    let masked = apply_mask(seq, &plan, vocab);
    let input = if opts.drop_tokens {
        drop_tokens(&masked, level.value().to_f64_lossy(), key, vocab)?
    } else {
        masked
    };

    let mut corrupted = seq.to_vec();
    let mut replaced = vec![false; seq.len()];
    for &pos in plan.positions() {
        let original = seq[pos as usize];
        let ctx = ProviderContext {
            example_index: key.example_index,
            position: pos,
            original,
            masked: &input,
        };
        let d = replacement_dist(provider, &ctx, level)?;
        let token = sample_token(&d, key.at(pos));
        corrupted[pos as usize] = token;
        replaced[pos as usize] = token != original;
    }
    Ok(CorruptedExample {
        original: seq.to_vec(),
        corrupted,
        replaced,
        mask: plan,
        meta: ExampleMeta {
            epoch: key.epoch,
            example_index: key.example_index,
            level,
        },
    })
}

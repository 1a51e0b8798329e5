use super::example::{check_compatible, replacement_dist, CorruptOptions};
use super::mask::make_mask_plan;
use super::rng::RngKey;
use crate::corpus::Vocab;
use crate::curriculum::{Level, Schedule};
use crate::dist::{expected_replacement_prob, DistProvider, ProviderContext};
use crate::error::{Error, Result};
use crate::{Real, TokenSeq};

/// Difficulty at one point of training progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow<F> {
    pub u: F,
    pub level: Level<F>,
    /// Mean of `1 - p[original]` over sampled masked positions.
    pub replace_rate: F,
    pub replace_rate_stderr: F,
    /// Mean entropy (nats) of the replacement distribution.
    pub entropy: F,
    pub entropy_stderr: F,
    pub positions: usize,
}

fn mean_stderr<F: Real>(xs: &[F]) -> (F, F) {
    let n = F::count(xs.len());
    let mean = xs.iter().fold(F::zero(), |a, &x| a + x) / n;
    if xs.len() < 2 {
        return (mean, F::zero());
    }
    let var = xs
        .iter()
        .fold(F::zero(), |a, &x| a + (x - mean) * (x - mean))
        / (n - F::one());
    (mean, (var / n).sqrt())
}

/// Monte-Carlo difficulty trajectory over `checkpoints`.
///
/// Mask positions are drawn once per sequence from `seed` and reused at every
/// checkpoint, so rows differ only through the schedule value.
pub fn trajectory_report<F: Real>(
    provider: &DistProvider<F>,
    schedule: &Schedule<F>,
    sample: &[TokenSeq],
    checkpoints: &[F],
    opts: &CorruptOptions,
    seed: u64,
    vocab: &Vocab,
) -> Result<Vec<TrajectoryRow<F>>> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidParam("no checkpoints requested".into()));
    }
    if sample.is_empty() {
        return Err(Error::InvalidParam("empty sequence sample".into()));
    }
    check_compatible(provider, schedule, opts)?;
    let plans = sample
        .iter()
        .enumerate()
        .map(|(i, seq)| make_mask_plan(seq, opts.mask_ratio, RngKey::new(seed, 0, i as u64), vocab))
        .collect::<Result<Vec<_>>>()?;

    checkpoints
        .iter()
        .map(|&u| {
            let level = schedule.level(u)?;
            let mut rates = Vec::new();
            let mut entropies = Vec::new();
            for (i, (seq, plan)) in sample.iter().zip(&plans).enumerate() {
                let masked = super::apply_mask(seq, plan, vocab);
                for &pos in plan.positions() {
                    let original = seq[pos as usize];
                    let ctx = ProviderContext {
                        example_index: i as u64,
                        position: pos,
                        original,
                        masked: &masked,
                    };
                    let d = replacement_dist(provider, &ctx, level)?;
                    rates.push(expected_replacement_prob(&d, original));
                    entropies.push(d.entropy());
                }
            }
            let (replace_rate, replace_rate_stderr) = mean_stderr(&rates);
            let (entropy, entropy_stderr) = mean_stderr(&entropies);
            Ok(TrajectoryRow {
                u,
                level,
                replace_rate,
                replace_rate_stderr,
                entropy,
                entropy_stderr,
                positions: rates.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TokenSeq> {
        (0..20u32)
            .map(|s| (0..64u32).map(|i| 5 + (i * 13 + s * 7) % 90).collect())
            .collect()
    }

    #[test]
    fn constant_alpha_rate() {
        let v = Vocab::with_size(100).unwrap();
        let p = DistProvider::<f64>::smoothed_one_hot(0.35, &v, false).unwrap();
        // u = 1 keeps T within 5e-5 of 1; compare rows at the same u.
        let s = Schedule::exp_decay_t(1.0, 0.1).unwrap();
        let rows = trajectory_report(&p, &s, &sample(), &[0.0, 0.5, 1.0], &CorruptOptions::default(), 1, &v).unwrap();
        for r in &rows {
            assert!((r.replace_rate - 0.35).abs() < 1e-12);
            assert_eq!(r.positions, 20 * 10);
        }
    }

    #[test]
    fn entropy_falls_as_temperature_anneals() {
        let v = Vocab::with_size(100).unwrap();
        let p = DistProvider::<f64>::smoothed_one_hot(0.35, &v, false).unwrap();
        let s = Schedule::default();
        let us: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows = trajectory_report(&p, &s, &sample(), &us, &CorruptOptions::default(), 1, &v).unwrap();
        for w in rows.windows(2) {
            let gap = w[0].entropy - w[1].entropy;
            let sigma = (w[0].entropy_stderr.powi(2) + w[1].entropy_stderr.powi(2)).sqrt();
            assert!(gap > 0.0);
            assert!(gap > 3.0 * sigma || sigma == 0.0, "{gap} vs {sigma}");
        }
        assert!(trajectory_report(&p, &s, &sample(), &[], &CorruptOptions::default(), 1, &v).is_err());
    }
}

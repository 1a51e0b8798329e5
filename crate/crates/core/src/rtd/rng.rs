//! Counter-based randomness keyed by `(global_seed, epoch, example_index, position)`.
//!
//! Every draw is a pure function of its key, a stream tag, and a counter, so
//! examples can be generated in any order or in parallel and still reproduce
//! bit for bit.
//!
//! The mix function is the SplitMix64 step: add the golden-ratio increment
//! `0x9E3779B97F4A7C15`, then apply the finalizer
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! A key is folded into a stream base as
//! `h = mix(seed ^ tag * 0xD6E8FEB86659FD93)`, then `h = mix(h ^ epoch)`,
//! `h = mix(h ^ example_index)`, `h = mix(h ^ position)`. Draw `n` of the
//! stream is `mix(h + n * 0x9E3779B97F4A7C15)`, i.e. output `n` of a
//! SplitMix64 generator seeded with `h`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TAG_MUL: u64 = 0xD6E8_FEB8_6659_FD93;

/// One SplitMix64 step on `z`.
#[inline]
pub fn mix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent purposes that draw from the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    MaskPlan = 1,
    DropToken = 2,
    Replace = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngKey {
    pub global_seed: u64,
    pub epoch: u32,
    pub example_index: u64,
    pub position: u32,
}

impl RngKey {
    pub fn new(global_seed: u64, epoch: u32, example_index: u64) -> Self {
        Self {
            global_seed,
            epoch,
            example_index,
            position: 0,
        }
    }

    /// The same key at another position.
    pub fn at(self, position: u32) -> Self {
        Self { position, ..self }
    }

    fn base(&self, stream: Stream) -> u64 {
        let mut h = mix64(self.global_seed ^ (stream as u64).wrapping_mul(TAG_MUL));
        h = mix64(h ^ self.epoch as u64);
        h = mix64(h ^ self.example_index);
        mix64(h ^ self.position as u64)
    }

    /// Draw number `counter` of `stream`.
    pub fn draw(&self, stream: Stream, counter: u64) -> u64 {
        mix64(self.base(stream).wrapping_add(counter.wrapping_mul(GOLDEN)))
    }

    pub fn stream(&self, stream: Stream) -> KeyedStream {
        KeyedStream {
            state: self.base(stream),
        }
    }
}

/// Sequential draws from one keyed stream.
#[derive(Debug, Clone)]
pub struct KeyedStream {
    state: u64,
}

impl KeyedStream {
    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN);
        out
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let mut m = self.next_u64() as u128 * n as u128;
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = self.next_u64() as u128 * n as u128;
            }
        }
        (m >> 64) as u64
    }
}

/// Maps 64 random bits to `[0, 1)` using the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Chooses `k` distinct indices of `0..n` (partial Fisher-Yates), returned ascending.
pub(crate) fn choose_sorted(stream: &mut KeyedStream, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + stream.below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // SplitMix64 seeded with 0 yields these first outputs.
        let mut s = KeyedStream { state: 0 };
        assert_eq!(s.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(s.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(s.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn draw_matches_stream() {
        let key = RngKey::new(7, 2, 99).at(5);
        let mut s = key.stream(Stream::Replace);
        for n in 0..10 {
            assert_eq!(key.draw(Stream::Replace, n), s.next_u64());
        }
    }

    #[test]
    fn keys_separate_streams() {
        let k = RngKey::new(1, 0, 0);
        let draws = [
            k.draw(Stream::Replace, 0),
            k.draw(Stream::MaskPlan, 0),
            k.at(1).draw(Stream::Replace, 0),
            RngKey::new(2, 0, 0).draw(Stream::Replace, 0),
            RngKey::new(1, 1, 0).draw(Stream::Replace, 0),
            RngKey::new(1, 0, 1).draw(Stream::Replace, 0),
        ];
        let set: std::collections::HashSet<_> = draws.iter().collect();
        assert_eq!(set.len(), draws.len());
    }

    #[test]
    fn below_is_in_range_and_roughly_uniform() {
        let mut s = RngKey::new(3, 0, 0).stream(Stream::MaskPlan);
        let mut hist = [0u32; 7];
        for _ in 0..70_000 {
            hist[s.below(7) as usize] += 1;
        }
        assert!(hist.iter().all(|&c| (9_500..10_500).contains(&c)), "{hist:?}");
    }

    #[test]
    fn unit_range() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
    }

    #[test]
    fn choose_distinct() {
        let mut s = RngKey::new(3, 0, 0).stream(Stream::MaskPlan);
        let c = choose_sorted(&mut s, 50, 20);
        assert_eq!(c.len(), 20);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c.iter().all(|&i| i < 50));
        assert_eq!(choose_sorted(&mut s, 5, 9), vec![0, 1, 2, 3, 4]);
    }
}

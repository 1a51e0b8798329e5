#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtd_forge::corpus::{write_corpus, Corpus, Vocab};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ordinary (non-special) token drawn with a roughly Zipfian rank profile.
pub fn zipf_token(r: &mut ChaCha8Rng, vocab: u32) -> u32 {
    let ordinary = vocab - 5;
    let u: f64 = r.random();
    let rank = ((ordinary as f64).powf(u) as u32).min(ordinary - 1);
    5 + rank
}

/// `docs` documents of exactly `len` ordinary tokens.
pub fn toy_corpus(docs: usize, len: usize, vocab: u32, seed: u64) -> Corpus {
    let mut r = rng(seed);
    let lists = (0..docs)
        .map(|_| (0..len).map(|_| zipf_token(&mut r, vocab)).collect())
        .collect();
    Corpus::from_token_lists(lists, Vocab::with_size(vocab).unwrap()).unwrap()
}

pub fn write_toy_corpus(dir: &Path, docs: usize, len: usize, vocab: u32, seed: u64) -> PathBuf {
    let path = dir.join("corpus.rtdc");
    write_corpus(&toy_corpus(docs, len, vocab, seed), &path).unwrap();
    path
}

/// Random probability vector of length `n`; roughly one entry in `zero_every` is zero.
pub fn random_probs(r: &mut ChaCha8Rng, n: usize, zero_every: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                if zero_every > 0 && r.random_range(0..zero_every) == 0 {
                    0.0
                } else {
                    // Heavy spread of magnitudes, from 1e-6 to 1.
                    10f64.powf(-6.0 * r.random::<f64>())
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.iter().map(|x| x / s).collect();
        }
    }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rtd-forge")
}

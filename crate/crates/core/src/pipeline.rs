//! End-to-end epoch generation: corpus → sequences → corrupted examples → dump.

use std::num::NonZeroU64;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::codec::{self, Hasher64};
use crate::config::{ProviderSpec, RunConfig, VocabSpec};
use crate::corpus::{self, build_freq_table, sample_training_sequences, Corpus, PackingPolicy, Vocab};
use crate::curriculum::{Level, Schedule};
use crate::datapack::{self, EpochHeader, EpochManifest, EpochWriter, PackedExample};
use crate::dist::{DistProvider, LogitsFile};
use crate::error::{Error, Result};
use crate::rtd::{corrupt_example, CorruptOptions, CorruptedExample, RngKey};
use crate::TokenSeq;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "RTD_FORGE_THREADS";

/// Examples generated per parallel batch; output order never depends on it.
const BATCH: usize = 2048;

/// Builds a provider from its spec. `corpus` supplies term frequencies.
pub fn build_provider(spec: &ProviderSpec, vocab: &Vocab, corpus: &Corpus) -> Result<DistProvider<f64>> {
    match spec {
        ProviderSpec::Uniform { exclude_special } => Ok(DistProvider::uniform(vocab, *exclude_special)),
        ProviderSpec::TermFreq { exclude_special } => {
            DistProvider::term_freq(&build_freq_table(corpus, *exclude_special)?)
        }
        ProviderSpec::SmoothedOneHot { alpha, exclude_special } => {
            DistProvider::smoothed_one_hot(*alpha, vocab, *exclude_special)
        }
        ProviderSpec::FileLogits { path } => {
            DistProvider::file_logits(Arc::new(LogitsFile::open(path)?), vocab)
        }
        ProviderSpec::LogInterp { a, b } => DistProvider::log_interp(
            build_provider(a, vocab, corpus)?,
            build_provider(b, vocab, corpus)?,
        ),
    }
}

/// Digest of a provider's identity: its spec without file paths, plus the
/// content digest of any data it reads.
fn provider_hash(spec: &ProviderSpec, provider: &DistProvider<f64>, corpus: &Corpus) -> u64 {
    fn describe(spec: &ProviderSpec, provider: &DistProvider<f64>, corpus: &Corpus, out: &mut String) {
        match (spec, provider) {
            (ProviderSpec::FileLogits { .. }, DistProvider::FileLogits(f)) => {
                out.push_str(&format!("file_logits(digest={:016x})", f.digest()));
            }
            (ProviderSpec::TermFreq { exclude_special }, _) => {
                out.push_str(&format!("term_freq(exclude_special={exclude_special},corpus={:016x})", corpus.digest()));
            }
            (ProviderSpec::LogInterp { a, b }, DistProvider::LogInterp(pa, pb)) => {
                out.push_str("log_interp(");
                describe(a, pa, corpus, out);
                out.push(',');
                describe(b, pb, corpus, out);
                out.push(')');
            }
            (ProviderSpec::SmoothedOneHot { alpha, exclude_special }, _) => {
                out.push_str(&format!("smoothed_one_hot(alpha={:016x},exclude_special={exclude_special})", alpha.to_bits()));
            }
            (ProviderSpec::Uniform { exclude_special }, _) => {
                out.push_str(&format!("uniform(exclude_special={exclude_special})"));
            }
            _ => unreachable!("provider built from this spec"),
        }
    }
    let mut s = String::new();
    describe(spec, provider, corpus, &mut s);
    codec::digest64(s.as_bytes())
}

/// Digest of everything besides the seed, epoch index and provider that
/// determines an epoch's content.
fn config_hash(cfg: &RunConfig, vocab: &Vocab, corpus: &Corpus) -> u64 {
    let sp = vocab.special();
    let desc = format!(
        "corpus={:016x};vocab={};special={},{},{},{},{};seq_len={};mask_ratio={:016x};drop_tokens={};min_tail={};epochs={};curriculum={}",
        corpus.digest(),
        vocab.size(),
        sp.pad,
        sp.unk,
        sp.cls,
        sp.sep,
        sp.mask,
        cfg.seq_len,
        cfg.mask_ratio.to_bits(),
        cfg.drop_tokens,
        cfg.min_tail,
        cfg.epochs,
        cfg.curriculum.to_toml_string(),
    );
    codec::digest64(desc.as_bytes())
}

/// Summary of one generated epoch.
#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: u32,
    pub u: f64,
    pub level: Level<f64>,
    pub examples: u64,
    pub masked: u64,
    pub replaced: u64,
    /// Positions that are not padding.
    pub scored_positions: u64,
    pub checksum: u64,
    pub path: Option<PathBuf>,
}

impl EpochSummary {
    /// Replaced positions over non-padding positions.
    pub fn replace_rate(&self) -> f64 {
        self.replaced as f64 / self.scored_positions.max(1) as f64
    }

    /// Replaced positions over masked positions.
    pub fn masked_replace_fraction(&self) -> f64 {
        self.replaced as f64 / self.masked.max(1) as f64
    }
}

/// Everything needed to generate any epoch of a run.
pub struct Session {
    cfg: RunConfig,
    vocab: Vocab,
    corpus: Corpus,
    sequences: Vec<TokenSeq>,
    provider: DistProvider<f64>,
    schedule: Schedule<f64>,
    opts: CorruptOptions,
    config_hash: u64,
    provider_hash: u64,
    pool: rayon::ThreadPool,
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

impl Session {
    /// Loads the corpus and builds the provider and schedule.
    pub fn open(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let file_vocab = corpus::corpus_vocab_size(&cfg.corpus)?;
        let spec = cfg.vocab.unwrap_or(VocabSpec {
            size: None,
            pad: None,
            unk: None,
            cls: None,
            sep: None,
            mask: None,
        });
        let vocab = spec.build(file_vocab)?;
        let corpus = corpus::load_corpus(&cfg.corpus, vocab.clone())?;
        Self::from_corpus(cfg, corpus)
    }

    /// Like [`Session::open`] with an already loaded corpus; `cfg.corpus` is ignored.
    pub fn from_corpus(cfg: RunConfig, corpus: Corpus) -> Result<Self> {
        cfg.validate()?;
        let vocab = corpus.vocab().clone();
        let provider = build_provider(&cfg.provider, &vocab, &corpus)?;
        let schedule = cfg.curriculum.schedule::<f64>()?;
        let opts = CorruptOptions {
            mask_ratio: cfg.mask_ratio,
            drop_tokens: cfg.drop_tokens,
        };
        crate::rtd::check_compatible(&provider, &schedule, &opts)?;
        let sequences: Vec<TokenSeq> = sample_training_sequences(
            &corpus,
            cfg.seq_len as usize,
            PackingPolicy { min_tail: cfg.min_tail },
        )?
        .collect();
        if sequences.is_empty() {
            return Err(Error::InvalidParam(format!(
                "corpus yields no training sequences of length {}",
                cfg.seq_len
            )));
        }
        let config_hash = config_hash(&cfg, &vocab, &corpus);
        let provider_hash = provider_hash(&cfg.provider, &provider, &corpus);
        Ok(Self {
            cfg,
            vocab,
            corpus,
            sequences,
            provider,
            schedule,
            opts,
            config_hash,
            provider_hash,
            pool: thread_pool()?,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn sequences(&self) -> &[TokenSeq] {
        &self.sequences
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn provider_hash(&self) -> u64 {
        self.provider_hash
    }

    pub fn progress(&self, epoch: u32) -> Result<f64> {
        self.cfg.curriculum.progress_for_epoch(epoch, self.cfg.epochs)
    }

    pub fn level(&self, epoch: u32) -> Result<Level<f64>> {
        self.schedule.level(self.progress(epoch)?)
    }

    fn header(&self, seed: u64, epoch: u32) -> EpochHeader {
        EpochHeader {
            global_seed: seed,
            epoch,
            total_epochs: self.cfg.epochs,
            vocab_size: self.vocab.size(),
            seq_len: self.cfg.seq_len,
            config_hash: self.config_hash,
            provider_hash: self.provider_hash,
        }
    }

    /// Generates an epoch in parallel batches, handing examples to `sink` in index order.
    pub fn generate_epoch(
        &self,
        seed: u64,
        epoch: u32,
        mut sink: impl FnMut(&CorruptedExample<f64>) -> Result<()>,
    ) -> Result<EpochSummary> {
        if epoch >= self.cfg.epochs {
            return Err(Error::InvalidParam(format!(
                "epoch {epoch} out of range for a {}-epoch run",
                self.cfg.epochs
            )));
        }
        let u = self.progress(epoch)?;
        let level = self.schedule.level(u)?;
        let pad = self.vocab.pad_id();
        let mut summary = EpochSummary {
            epoch,
            u,
            level,
            examples: 0,
            masked: 0,
            replaced: 0,
            scored_positions: 0,
            checksum: 0,
            path: None,
        };
        for (b, chunk) in self.sequences.chunks(BATCH).enumerate() {
            let start = (b * BATCH) as u64;
            let batch: Vec<CorruptedExample<f64>> = self.pool.install(|| {
                chunk
                    .par_iter()
                    .enumerate()
                    .map(|(i, seq)| {
                        let key = RngKey::new(seed, epoch, start + i as u64);
                        corrupt_example(seq, &self.provider, &self.schedule, u, key, &self.opts, &self.vocab)
                    })
                    .collect::<Result<_>>()
            })?;
            for ex in &batch {
                summary.examples += 1;
                summary.masked += ex.mask.len() as u64;
                summary.replaced += ex.replaced_count() as u64;
                summary.scored_positions += ex.original.iter().filter(|&&t| t != pad).count() as u64;
                sink(ex)?;
            }
        }
        Ok(summary)
    }

    /// Payload checksum of an epoch, computed without writing a file.
    pub fn epoch_checksum(&self, seed: u64, epoch: u32) -> Result<u64> {
        let mut h = Hasher64::default();
        let mut buf = Vec::new();
        self.generate_epoch(seed, epoch, |ex| {
            buf.clear();
            datapack::encode_record(&PackedExample::from(ex), &mut buf);
            h.update(&buf);
            Ok(())
        })?;
        Ok(h.finish())
    }

    /// Generates one epoch and writes it with its sidecar manifest into `dir`.
    pub fn dump_epoch(&self, epoch: u32, dir: &Path) -> Result<(EpochSummary, EpochManifest)> {
        let path = dir.join(epoch_file_name(epoch));
        let mut w = EpochWriter::create(&path, self.header(self.cfg.seed, epoch), NonZeroU64::new(self.cfg.shard_size))?;
        let mut summary = self.generate_epoch(self.cfg.seed, epoch, |ex| w.push(ex))?;
        let manifest = w.finish()?;
        if let Err(e) = datapack::write_manifest(&manifest, &path) {
            let _ = std::fs::remove_file(&path);
            return Err(e);
        }
        summary.checksum = manifest.checksum;
        summary.path = Some(path);
        Ok((summary, manifest))
    }

    /// Regenerates the epoch named by `manifest` and compares checksums.
    ///
    /// Refuses to compare when the manifest was produced under a different
    /// configuration or provider.
    pub fn verify_regeneration(&self, manifest: &EpochManifest) -> Result<bool> {
        if manifest.config_hash != self.config_hash {
            return Err(Error::ConfigHashMismatch("config"));
        }
        if manifest.provider_hash != self.provider_hash {
            return Err(Error::ConfigHashMismatch("provider"));
        }
        if manifest.vocab_size != self.vocab.size() {
            return Err(Error::VocabMismatch {
                found: manifest.vocab_size,
                expected: self.vocab.size(),
            });
        }
        if manifest.epoch >= self.cfg.epochs || manifest.total_epochs != self.cfg.epochs {
            return Ok(false);
        }
        let mut count = 0u64;
        let mut h = Hasher64::default();
        let mut buf = Vec::new();
        self.generate_epoch(manifest.global_seed, manifest.epoch, |ex| {
            count += 1;
            buf.clear();
            datapack::encode_record(&PackedExample::from(ex), &mut buf);
            h.update(&buf);
            Ok(())
        })?;
        Ok(count == manifest.example_count && h.finish() == manifest.checksum)
    }
}

pub fn epoch_file_name(epoch: u32) -> String {
    format!("epoch-{epoch:04}.rtde")
}

/// Regenerates `manifest`'s epoch from `corpus` under `cfg`.
pub fn verify_regeneration(manifest: &EpochManifest, corpus: Corpus, cfg: RunConfig) -> Result<bool> {
    Session::from_corpus(cfg, corpus)?.verify_regeneration(manifest)
}

/// Dumps every epoch of `session` into `session.config().out`, calling
/// `report` after each. On failure every file this call created is removed.
pub fn dump_all(
    session: &Session,
    mut report: impl FnMut(&EpochSummary, &EpochManifest, std::time::Duration),
) -> Result<Vec<EpochManifest>> {
    let dir = &session.config().out;
    let created_dir = !dir.exists();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut manifests = Vec::new();
    let result = (|| {
        for epoch in 0..session.config().epochs {
            let t0 = std::time::Instant::now();
            let (summary, manifest) = session.dump_epoch(epoch, dir)?;
            let path = summary.path.clone().expect("dumped epochs have a path");
            written.push(datapack::manifest_path(&path));
            written.push(path);
            report(&summary, &manifest, t0.elapsed());
            manifests.push(manifest);
        }
        Ok(())
    })();
    if let Err(e) = result {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
        if created_dir {
            let _ = std::fs::remove_dir(dir);
        }
        return Err(e);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::CurriculumConfig;

    fn corpus() -> Corpus {
        let vocab = Vocab::with_size(64).unwrap();
        let docs = (0..40u32)
            .map(|d| (0..100u32).map(|i| 5 + (i * 7 + d * 3) % 59).collect())
            .collect();
        Corpus::from_token_lists(docs, vocab).unwrap()
    }

    fn cfg() -> RunConfig {
        RunConfig {
            corpus: PathBuf::new(),
            vocab: None,
            provider: ProviderSpec::SmoothedOneHot { alpha: 0.35, exclude_special: false },
            curriculum: CurriculumConfig::default(),
            mask_ratio: 0.15,
            seq_len: 32,
            epochs: 3,
            seed: 5,
            out: PathBuf::new(),
            drop_tokens: false,
            shard_size: 0,
            min_tail: 8,
        }
    }

    #[test]
    fn dump_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        c.out = dir.path().join("out");
        let s = Session::from_corpus(c.clone(), corpus()).unwrap();
        let mut temps = Vec::new();
        let ms = dump_all(&s, |sum, _, _| temps.push(sum.level.value())).unwrap();
        assert_eq!(ms.len(), 3);
        assert!(temps.windows(2).all(|w| w[0] > w[1]));
        for m in &ms {
            assert!(s.verify_regeneration(m).unwrap());
            assert_eq!(s.epoch_checksum(m.global_seed, m.epoch).unwrap(), m.checksum);
            let (read, it) = datapack::read_epoch(&c.out.join(epoch_file_name(m.epoch))).unwrap();
            assert_eq!(&read, m);
            assert_eq!(it.count() as u64, m.example_count);
        }
        let mut other = ms[0].clone();
        other.global_seed += 1;
        assert!(!s.verify_regeneration(&other).unwrap());
        let mut other = ms[0].clone();
        other.epoch = 1;
        assert!(!s.verify_regeneration(&other).unwrap());
        let mut c2 = c.clone();
        c2.mask_ratio = 0.2;
        assert!(matches!(
            verify_regeneration(&ms[0], corpus(), c2),
            Err(Error::ConfigHashMismatch("config"))
        ));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let s = Session::from_corpus(cfg(), corpus()).unwrap();
        let a = s.epoch_checksum(1, 0).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let s1 = Session { pool: single, ..s };
        assert_eq!(a, s1.epoch_checksum(1, 0).unwrap());
    }

    #[test]
    fn failed_dump_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        c.out = dir.path().join("out");
        let bad = c.clone();
        let mut bad_cfg = bad;
        bad_cfg.provider = ProviderSpec::FileLogits { path: dir.path().join("missing.rtdl") };
        assert!(matches!(Session::from_corpus(bad_cfg, corpus()), Err(Error::Io { .. })));
        assert!(!c.out.exists());
    }
}

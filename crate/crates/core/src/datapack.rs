//! Per-epoch dump of corrupted sequences and replaced-token targets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header   magic "RTDE" | version u16 | global_seed u64 | epoch u32
//!          | total_epochs u32 | vocab u32 | seq_len u32 | example_count u64
//!          | config_hash u64 | provider_hash u64
//! payload  per example: mask_count u32 | mask positions u32 × K
//!          | replaced bitmap ⌈seq_len/8⌉ bytes | corrupted ids u32 × seq_len
//! trailer  checksum u64
//! ```
//!
//! Bitmap bit `i` is bit `i % 8` (least significant first) of byte `i / 8`;
//! unused high bits of the last byte are zero. The checksum is the first
//! eight bytes, read little-endian, of SHA-256 over the payload.
//!
//! A dump does not hold the original tokens, so reading yields
//! [`PackedExample`]s: the corrupted sequence, its targets and the mask.
//!
//! Each epoch file may have a JSON sidecar (`<file>.json`) holding its
//! [`EpochManifest`], including shard offsets.

use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::num::NonZeroU64;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, ByteReader, Hasher64};
use crate::error::{Error, Result};
use crate::rtd::{CorruptedExample, MaskPlan, RtdTargets};
use crate::{Real, TokenId, TokenSeq};

pub const EPOCH_MAGIC: &[u8; 4] = b"RTDE";
pub const EPOCH_VERSION: u16 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: u64 = 54;
const COUNT_OFFSET: u64 = 30;
const FORMAT: &str = "epoch";

/// Fields written to the file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochHeader {
    pub global_seed: u64,
    pub epoch: u32,
    pub total_epochs: u32,
    pub vocab_size: u32,
    pub seq_len: u32,
    pub config_hash: u64,
    pub provider_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochManifest {
    pub format_version: u16,
    pub global_seed: u64,
    pub epoch: u32,
    pub total_epochs: u32,
    pub vocab_size: u32,
    pub seq_len: u32,
    pub example_count: u64,
    pub config_hash: u64,
    pub provider_hash: u64,
    /// Examples per shard; 0 means a single shard.
    pub shard_size: u64,
    /// Absolute byte offset of the first record of each shard.
    pub shard_offsets: Vec<u64>,
    pub checksum: u64,
}

impl EpochManifest {
    pub fn header(&self) -> EpochHeader {
        EpochHeader {
            global_seed: self.global_seed,
            epoch: self.epoch,
            total_epochs: self.total_epochs,
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            config_hash: self.config_hash,
            provider_hash: self.provider_hash,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

/// Sidecar manifest path for an epoch file.
pub fn manifest_path(epoch_file: &Path) -> PathBuf {
    let mut name = epoch_file.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// One stored example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedExample {
    pub corrupted: TokenSeq,
    pub replaced: Vec<bool>,
    pub mask: MaskPlan,
}

impl PackedExample {
    /// Bytes this example occupies in the payload.
    pub fn encoded_len(&self) -> usize {
        record_len(self.corrupted.len(), self.mask.len())
    }

    pub fn replaced_count(&self) -> usize {
        self.replaced.iter().filter(|&&b| b).count()
    }

    fn encode(&self, out: &mut Vec<u8>) {
        codec::put_u32(out, self.mask.len() as u32);
        for &p in self.mask.positions() {
            codec::put_u32(out, p);
        }
        let mut bitmap = vec![0u8; self.replaced.len().div_ceil(8)];
        for (i, _) in self.replaced.iter().enumerate().filter(|(_, &r)| r) {
            bitmap[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&bitmap);
        for &t in &self.corrupted {
            codec::put_u32(out, t);
        }
    }

    fn check(&self, seq_len: u32, vocab_size: u32) -> Result<()> {
        let n = seq_len as usize;
        if self.corrupted.len() != n || self.replaced.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: if self.corrupted.len() != n {
                    self.corrupted.len()
                } else {
                    self.replaced.len()
                },
            });
        }
        let p = self.mask.positions();
        if p.windows(2).any(|w| w[0] >= w[1]) || p.last().is_some_and(|&x| x >= seq_len) {
            return Err(Error::InvalidParam(
                "mask positions must be strictly increasing and inside the sequence".into(),
            ));
        }
        if let Some(i) = (0..n).find(|&i| self.replaced[i] && !self.mask.contains(i as u32)) {
            return Err(Error::InvalidParam(format!(
                "position {i} is flagged replaced but not masked"
            )));
        }
        if let Some(&t) = self.corrupted.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::InvalidParam(format!(
                "token id {t} out of range for vocabulary of size {vocab_size}"
            )));
        }
        Ok(())
    }
}

impl<F: Real> From<&CorruptedExample<F>> for PackedExample {
    fn from(ex: &CorruptedExample<F>) -> Self {
        Self {
            corrupted: ex.corrupted.clone(),
            replaced: ex.replaced.clone(),
            mask: ex.mask.clone(),
        }
    }
}

impl RtdTargets for PackedExample {
    fn target_len(&self) -> usize {
        self.replaced.len()
    }

    fn is_replaced(&self, i: usize) -> bool {
        self.replaced[i]
    }

    /// PAD survives corruption unchanged, and is never masked.
    fn is_padding(&self, i: usize, pad: TokenId) -> bool {
        self.corrupted[i] == pad && !self.mask.contains(i as u32)
    }
}

pub(crate) fn encode_record(ex: &PackedExample, out: &mut Vec<u8>) {
    ex.encode(out);
}

/// Payload bytes for one example: `4 + 4K + ⌈seq_len/8⌉ + 4·seq_len`.
pub fn record_len(seq_len: usize, mask_count: usize) -> usize {
    4 + 4 * mask_count + seq_len.div_ceil(8) + 4 * seq_len
}

/// Streaming writer. Output goes to a temporary file next to `path`, which is
/// renamed into place by [`EpochWriter::finish`] and removed if the writer is
/// dropped unfinished.
pub struct EpochWriter {
    header: EpochHeader,
    path: PathBuf,
    tmp: PathBuf,
    out: Option<BufWriter<File>>,
    hasher: Hasher64,
    count: u64,
    offset: u64,
    shard_size: u64,
    shard_offsets: Vec<u64>,
    buf: Vec<u8>,
}

impl EpochWriter {
    pub fn create(path: &Path, header: EpochHeader, shard_size: Option<NonZeroU64>) -> Result<Self> {
        if header.seq_len == 0 {
            return Err(Error::InvalidParam("seq_len must be positive".into()));
        }
        let mut tmp_name = path.file_name().unwrap_or_default().to_owned();
        tmp_name.push(".partial");
        let tmp = path.with_file_name(tmp_name);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = Self {
            header,
            path: path.to_path_buf(),
            tmp,
            out: Some(BufWriter::new(file)),
            hasher: Hasher64::default(),
            count: 0,
            offset: HEADER_LEN,
            shard_size: shard_size.map_or(0, NonZeroU64::get),
            shard_offsets: Vec::new(),
            buf: Vec::new(),
        };
        let mut head = Vec::with_capacity(HEADER_LEN as usize);
        head.extend_from_slice(EPOCH_MAGIC);
        codec::put_u16(&mut head, EPOCH_VERSION);
        codec::put_u64(&mut head, header.global_seed);
        codec::put_u32(&mut head, header.epoch);
        codec::put_u32(&mut head, header.total_epochs);
        codec::put_u32(&mut head, header.vocab_size);
        codec::put_u32(&mut head, header.seq_len);
        codec::put_u64(&mut head, 0);
        codec::put_u64(&mut head, header.config_hash);
        codec::put_u64(&mut head, header.provider_hash);
        debug_assert_eq!(head.len() as u64, HEADER_LEN);
        w.write_raw(&head)?;
        Ok(w)
    }

    fn write_raw(&mut self, bytes: &[u8]) -> Result<()> {
        let out = self.out.as_mut().expect("writer is open");
        out.write_all(bytes).map_err(|e| Error::io(&self.tmp, e))
    }

    /// Appends a generated example; its index must equal the number written so far.
    pub fn push<F: Real>(&mut self, ex: &CorruptedExample<F>) -> Result<()> {
        if ex.meta.example_index != self.count {
            return Err(Error::Ordering(format!(
                "expected example {}, got {}",
                self.count, ex.meta.example_index
            )));
        }
        if ex.meta.epoch != self.header.epoch {
            return Err(Error::Ordering(format!(
                "example from epoch {} in a dump of epoch {}",
                ex.meta.epoch, self.header.epoch
            )));
        }
        self.push_packed(&PackedExample::from(ex))
    }

    pub fn push_packed(&mut self, ex: &PackedExample) -> Result<()> {
        ex.check(self.header.seq_len, self.header.vocab_size)?;
        if self.shard_offsets.is_empty()
            || (self.shard_size > 0 && self.count % self.shard_size == 0)
        {
            self.shard_offsets.push(self.offset);
        }
        let mut buf = std::mem::take(&mut self.buf);
        buf.clear();
        ex.encode(&mut buf);
        self.hasher.update(&buf);
        self.write_raw(&buf)?;
        self.offset += buf.len() as u64;
        self.buf = buf;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Writes the trailer, patches the count and moves the file into place.
    pub fn finish(mut self) -> Result<EpochManifest> {
        let checksum = std::mem::take(&mut self.hasher).finish();
        self.write_raw(&checksum.to_le_bytes())?;
        let tmp = self.tmp.clone();
        let io = |e| Error::io(&tmp, e);
        let mut file = self
            .out
            .take()
            .expect("writer is open")
            .into_inner()
            .map_err(|e| io(e.into_error()))?;
        file.seek(SeekFrom::Start(COUNT_OFFSET)).map_err(io)?;
        file.write_all(&self.count.to_le_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        drop(file);
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        if self.shard_offsets.is_empty() {
            self.shard_offsets.push(HEADER_LEN);
        }
        let h = self.header;
        Ok(EpochManifest {
            format_version: EPOCH_VERSION,
            global_seed: h.global_seed,
            epoch: h.epoch,
            total_epochs: h.total_epochs,
            vocab_size: h.vocab_size,
            seq_len: h.seq_len,
            example_count: self.count,
            config_hash: h.config_hash,
            provider_hash: h.provider_hash,
            shard_size: self.shard_size,
            shard_offsets: std::mem::take(&mut self.shard_offsets),
            checksum,
        })
    }
}

impl Drop for EpochWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = std::fs::remove_file(&self.tmp);
        }
    }
}

/// Writes generated examples in index order and returns the manifest.
pub fn write_epoch<'a, F: Real>(
    examples: impl IntoIterator<Item = &'a CorruptedExample<F>>,
    header: EpochHeader,
    path: &Path,
    shard_size: Option<NonZeroU64>,
) -> Result<EpochManifest> {
    let mut w = EpochWriter::create(path, header, shard_size)?;
    for ex in examples {
        w.push(ex)?;
    }
    w.finish()
}

/// Examples of an epoch file whose checksum has already been verified.
#[derive(Debug)]
pub struct EpochExamples {
    bytes: Vec<u8>,
    pos: usize,
    left: u64,
    seq_len: usize,
}

impl Iterator for EpochExamples {
    type Item = PackedExample;

    fn next(&mut self) -> Option<PackedExample> {
        if self.left == 0 {
            return None;
        }
        self.left -= 1;
        let mut r = ByteReader::new(&self.bytes, FORMAT);
        r.seek(self.pos);
        // Structure was validated when the file was opened.
        let k = r.u32().unwrap() as usize;
        let positions = (0..k).map(|_| r.u32().unwrap()).collect();
        let bitmap = r.take(self.seq_len.div_ceil(8)).unwrap();
        let replaced = (0..self.seq_len)
            .map(|i| bitmap[i / 8] >> (i % 8) & 1 == 1)
            .collect();
        let corrupted = (0..self.seq_len).map(|_| r.u32().unwrap()).collect();
        self.pos = r.offset() as usize;
        Some(PackedExample {
            corrupted,
            replaced,
            mask: MaskPlan::from_sorted(positions),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.left as usize, Some(self.left as usize))
    }
}

impl ExactSizeIterator for EpochExamples {}

/// Parses and verifies an epoch image held in memory.
pub fn parse_epoch(bytes: Vec<u8>) -> Result<(EpochManifest, EpochExamples)> {
    let mut r = ByteReader::new(&bytes, FORMAT);
    r.magic(EPOCH_MAGIC)?;
    let version = r.u16()?;
    if version != EPOCH_VERSION {
        return Err(Error::Version {
            format: FORMAT,
            found: version,
            expected: EPOCH_VERSION,
        });
    }
    let global_seed = r.u64()?;
    let epoch = r.u32()?;
    let total_epochs = r.u32()?;
    let vocab_size = r.u32()?;
    let seq_len = r.u32()?;
    let example_count = r.u64()?;
    let config_hash = r.u64()?;
    let provider_hash = r.u64()?;
    if seq_len == 0 {
        return Err(Error::format(FORMAT, "seq_len is zero"));
    }
    if bytes.len() < HEADER_LEN as usize + 8 {
        return Err(Error::format(FORMAT, "truncated: no checksum trailer"));
    }
    let end = bytes.len() - 8;
    let payload = &bytes[HEADER_LEN as usize..end];
    let stored = u64::from_le_bytes(bytes[end..].try_into().unwrap());
    let computed = codec::digest64(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    // Walk the records once so iteration cannot fail.
    let n = seq_len as usize;
    let mut w = ByteReader::new(&bytes[..end], FORMAT);
    w.seek(HEADER_LEN as usize);
    for i in 0..example_count {
        let at = w.offset();
        let k = w.u32()? as usize;
        if k > n {
            return Err(Error::format(FORMAT, format!("example {i} at byte {at}: mask count {k} exceeds seq_len {n}")));
        }
        let mut prev = None;
        let mut positions = Vec::with_capacity(k);
        for _ in 0..k {
            let p = w.u32()?;
            if p >= seq_len || prev.is_some_and(|q| p <= q) {
                return Err(Error::format(FORMAT, format!("example {i} at byte {at}: bad mask position {p}")));
            }
            prev = Some(p);
            positions.push(p);
        }
        let bitmap = w.take(n.div_ceil(8))?;
        for (b, &byte) in bitmap.iter().enumerate() {
            for bit in 0..8 {
                if byte >> bit & 1 == 0 {
                    continue;
                }
                let pos = b * 8 + bit;
                if pos >= n || positions.binary_search(&(pos as u32)).is_err() {
                    return Err(Error::format(FORMAT, format!("example {i}: target bit {pos} set outside the mask")));
                }
            }
        }
        for _ in 0..n {
            let off = w.offset();
            let t = w.u32()?;
            if t >= vocab_size {
                return Err(Error::TokenOutOfRange { id: t, vocab: vocab_size, offset: off });
            }
        }
    }
    if w.remaining() != 0 {
        return Err(Error::format(FORMAT, format!("{} unexpected bytes after {example_count} examples", w.remaining())));
    }

    let manifest = EpochManifest {
        format_version: version,
        global_seed,
        epoch,
        total_epochs,
        vocab_size,
        seq_len,
        example_count,
        config_hash,
        provider_hash,
        shard_size: 0,
        shard_offsets: vec![HEADER_LEN],
        checksum: stored,
    };
    Ok((
        manifest,
        EpochExamples {
            bytes,
            pos: HEADER_LEN as usize,
            left: example_count,
            seq_len: n,
        },
    ))
}

/// Opens an epoch file, verifying the checksum and record structure before
/// any example is yielded. If a sidecar manifest exists it must agree with
/// the file, and its shard layout is returned.
pub fn read_epoch(path: &Path) -> Result<(EpochManifest, EpochExamples)> {
    let (mut manifest, examples) = parse_epoch(codec::read_file(path)?)?;
    let side = manifest_path(path);
    if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let stored = EpochManifest::from_json(&text)?;
        let same = EpochManifest {
            shard_size: stored.shard_size,
            shard_offsets: stored.shard_offsets.clone(),
            ..manifest.clone()
        };
        if same != stored {
            return Err(Error::format("manifest", format!("{} does not match {}", side.display(), path.display())));
        }
        manifest = stored;
    }
    Ok((manifest, examples))
}

/// [`read_epoch`] that also requires the session's vocabulary size.
pub fn read_epoch_checked(path: &Path, vocab_size: u32) -> Result<(EpochManifest, EpochExamples)> {
    let (m, ex) = read_epoch(path)?;
    if m.vocab_size != vocab_size {
        return Err(Error::VocabMismatch {
            found: m.vocab_size,
            expected: vocab_size,
        });
    }
    Ok((m, ex))
}

pub fn write_manifest(manifest: &EpochManifest, epoch_file: &Path) -> Result<()> {
    let side = manifest_path(epoch_file);
    std::fs::write(&side, manifest.to_json()).map_err(|e| Error::io(&side, e))
}

//! Vocabulary, tokenized corpora, and term-frequency statistics.
//!
//! Corpora arrive pre-tokenized in the `RTDC` token-stream format:
//!
//! ```text
//! magic "RTDC" | version u16 = 1 | vocab_size u32 | doc_count u64
//! per document: length u64 | length x u32 token ids
//! ```
//!
//! All integers are little-endian. Document boundaries are the length
//! prefixes; nothing is ever concatenated across them.

use std::path::Path;

use crate::codec::{self, put_u16, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::{TokenId, TokenSeq};

pub const CORPUS_MAGIC: &[u8; 4] = b"RTDC";
pub const CORPUS_VERSION: u16 = 1;

/// Ids of the special-token roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpecialTokens {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            pad: 0,
            unk: 1,
            cls: 2,
            sep: 3,
            mask: 4,
        }
    }
}

impl SpecialTokens {
    pub fn ids(&self) -> [TokenId; 5] {
        [self.pad, self.unk, self.cls, self.sep, self.mask]
    }
}

/// Token-id space with designated special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    size: u32,
    special: SpecialTokens,
    special_sorted: [TokenId; 5],
    surface: Option<Vec<String>>,
}

impl Vocab {
    pub fn new(size: u32, special: SpecialTokens) -> Result<Self> {
        let mut sorted = special.ids();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Vocab(format!(
                "special token ids must be distinct: {special:?}"
            )));
        }
        if let Some(&bad) = sorted.iter().find(|&&id| id >= size) {
            return Err(Error::Vocab(format!(
                "special id {bad} is not below vocabulary size {size}"
            )));
        }
        // At least one ordinary token must exist besides the five roles.
        if (size as usize) < sorted.len() + 1 {
            return Err(Error::Vocab(format!(
                "vocabulary of size {size} has no non-special tokens"
            )));
        }
        Ok(Self {
            size,
            special,
            special_sorted: sorted,
            surface: None,
        })
    }

    /// Vocabulary with the default special ids `pad=0 unk=1 cls=2 sep=3 mask=4`.
    pub fn with_size(size: u32) -> Result<Self> {
        Self::new(size, SpecialTokens::default())
    }

    /// Attaches an id-to-surface table for debugging output.
    pub fn with_surface(mut self, surface: Vec<String>) -> Result<Self> {
        if surface.len() != self.size as usize {
            return Err(Error::Vocab(format!(
                "surface table has {} entries for vocabulary of size {}",
                surface.len(),
                self.size
            )));
        }
        self.surface = Some(surface);
        Ok(self)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn special(&self) -> &SpecialTokens {
        &self.special
    }

    pub fn mask_id(&self) -> TokenId {
        self.special.mask
    }

    pub fn unk_id(&self) -> TokenId {
        self.special.unk
    }

    pub fn pad_id(&self) -> TokenId {
        self.special.pad
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special_sorted.contains(&id)
    }

    pub fn special_count(&self) -> usize {
        self.special_sorted.len()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id < self.size
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surface
            .as_ref()
            .and_then(|s| s.get(id as usize))
            .map(String::as_str)
    }
}

/// A single document: a non-empty run of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    tokens: TokenSeq,
}

impl Document {
    pub fn new(tokens: TokenSeq, vocab: &Vocab) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidParam("document must not be empty".into()));
        }
        if let Some((i, &id)) = tokens.iter().enumerate().find(|(_, &t)| !vocab.contains(t)) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: vocab.size(),
                offset: i as u64,
            });
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An ordered, non-empty collection of documents over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    vocab: Vocab,
    skipped_empty: u64,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocab: Vocab) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::InvalidParam("corpus has no documents".into()));
        }
        for (d, doc) in documents.iter().enumerate() {
            if let Some(&id) = doc.tokens().iter().find(|&&t| !vocab.contains(t)) {
                return Err(Error::InvalidParam(format!(
                    "document {d} holds token {id}, outside vocabulary of size {}",
                    vocab.size()
                )));
            }
        }
        Ok(Self {
            documents,
            vocab,
            skipped_empty: 0,
        })
    }

    /// Builds a corpus from raw token vectors, validating each document.
    pub fn from_token_lists(docs: Vec<TokenSeq>, vocab: Vocab) -> Result<Self> {
        let documents = docs
            .into_iter()
            .map(|d| Document::new(d, &vocab))
            .collect::<Result<Vec<_>>>()?;
        Self::new(documents, vocab)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Number of zero-length documents dropped while loading.
    pub fn skipped_empty(&self) -> u64 {
        self.skipped_empty
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Serializes to the `RTDC` token-stream format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.token_count() * 4 + self.documents.len() * 8);
        out.extend_from_slice(CORPUS_MAGIC);
        put_u16(&mut out, CORPUS_VERSION);
        put_u32(&mut out, self.vocab.size());
        put_u64(&mut out, self.documents.len() as u64);
        for doc in &self.documents {
            put_u64(&mut out, doc.len() as u64);
            for &t in doc.tokens() {
                put_u32(&mut out, t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], vocab: Vocab) -> Result<Self> {
        const FMT: &str = "token-stream";
        if bytes.is_empty() {
            return Err(Error::format(FMT, "empty file"));
        }
        let mut r = ByteReader::new(bytes, FMT);
        r.magic(CORPUS_MAGIC)?;
        let version = r.u16()?;
        if version != CORPUS_VERSION {
            return Err(Error::Version {
                format: FMT,
                found: version,
                expected: CORPUS_VERSION,
            });
        }
        let file_vocab = r.u32()?;
        if file_vocab != vocab.size() {
            return Err(Error::VocabMismatch {
                found: file_vocab,
                expected: vocab.size(),
            });
        }
        let doc_count = r.u64()?;
        let mut documents = Vec::new();
        let mut skipped_empty = 0;
        for _ in 0..doc_count {
            let len = r.u64()?;
            if len as u128 * 4 > r.remaining() as u128 {
                return Err(Error::format(
                    FMT,
                    format!(
                        "document length {len} at byte offset {} exceeds remaining file",
                        r.offset() - 8
                    ),
                ));
            }
            if len == 0 {
                skipped_empty += 1;
                continue;
            }
            let mut tokens = Vec::with_capacity(len as usize);
            for _ in 0..len {
                let offset = r.offset();
                let id = r.u32()?;
                if id >= vocab.size() {
                    return Err(Error::TokenOutOfRange {
                        id,
                        vocab: vocab.size(),
                        offset,
                    });
                }
                tokens.push(id);
            }
            documents.push(Document { tokens });
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                FMT,
                format!("{} trailing bytes after last document", r.remaining()),
            ));
        }
        let mut corpus = Self::new(documents, vocab)?;
        corpus.skipped_empty = skipped_empty;
        Ok(corpus)
    }

    /// SHA-256-derived 64-bit digest of the serialized corpus.
    pub fn digest(&self) -> u64 {
        codec::digest64(&self.to_bytes())
    }
}

/// Reads a corpus in the `RTDC` token-stream format.
pub fn load_corpus(path: &Path, vocab: Vocab) -> Result<Corpus> {
    let bytes = codec::read_file(path)?;
    Corpus::from_bytes(&bytes, vocab)
}

/// Vocabulary size recorded in a token-stream file header.
pub fn corpus_vocab_size(path: &Path) -> Result<u32> {
    use std::io::Read;
    let mut head = [0u8; 10];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut head).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("token-stream", "truncated header"),
        _ => Error::io(path, e),
    })?;
    let mut r = ByteReader::new(&head, "token-stream");
    r.magic(CORPUS_MAGIC)?;
    let version = r.u16()?;
    if version != CORPUS_VERSION {
        return Err(Error::Version {
            format: "token-stream",
            found: version,
            expected: CORPUS_VERSION,
        });
    }
    r.u32()
}

/// Writes a corpus in the `RTDC` token-stream format.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Per-token occurrence counts over a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    counts: Vec<u64>,
    total: u64,
}

impl FreqTable {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptySupport("frequency table has no counts".into()));
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `(token, count)` pairs with non-zero count, most frequent first; ties by ascending id.
    pub fn ranked(&self) -> Vec<(TokenId, u64)> {
        let mut ranked: Vec<_> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t as TokenId, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    /// Shannon entropy of the empirical distribution, in nats.
    pub fn entropy(&self) -> f64 {
        let total = self.total as f64;
        self.counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum()
    }
}

pub fn build_freq_table(corpus: &Corpus, exclude_special: bool) -> Result<FreqTable> {
    let vocab = corpus.vocab();
    let mut counts = vec![0u64; vocab.len()];
    for &t in corpus.documents().iter().flat_map(|d| d.tokens()) {
        counts[t as usize] += 1;
    }
    if exclude_special {
        for id in vocab.special().ids() {
            counts[id as usize] = 0;
        }
    }
    FreqTable::from_counts(counts).map_err(|_| {
        Error::EmptySupport(if exclude_special {
            "corpus contains only special tokens".into()
        } else {
            "corpus contains no tokens".into()
        })
    })
}

/// How documents are cut into fixed-length training sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackingPolicy {
    /// Tails shorter than this are dropped instead of padded.
    pub min_tail: usize,
}

impl Default for PackingPolicy {
    fn default() -> Self {
        Self { min_tail: 8 }
    }
}

/// Iterator over fixed-length sequences, each cut from a single document.
///
/// Documents are split into greedy non-overlapping windows from the start.
/// A tail shorter than `seq_len` is padded at the end with PAD when it has at
/// least `policy.min_tail` tokens and dropped otherwise.
#[derive(Debug, Clone)]
pub struct TrainingSequences<'a> {
    corpus: &'a Corpus,
    seq_len: usize,
    policy: PackingPolicy,
    doc: usize,
    offset: usize,
    dropped_tails: u64,
}

impl TrainingSequences<'_> {
    /// Tails dropped so far for being shorter than `min_tail`.
    pub fn dropped_tails(&self) -> u64 {
        self.dropped_tails
    }
}

impl Iterator for TrainingSequences<'_> {
    type Item = TokenSeq;

    fn next(&mut self) -> Option<TokenSeq> {
        let docs = self.corpus.documents();
        while self.doc < docs.len() {
            let tokens = docs[self.doc].tokens();
            let rest = &tokens[self.offset.min(tokens.len())..];
            if rest.is_empty() {
                self.doc += 1;
                self.offset = 0;
                continue;
            }
            if rest.len() >= self.seq_len {
                self.offset += self.seq_len;
                return Some(rest[..self.seq_len].to_vec());
            }
            self.doc += 1;
            self.offset = 0;
            if rest.len() < self.policy.min_tail {
                self.dropped_tails += 1;
                continue;
            }
            let mut seq = Vec::with_capacity(self.seq_len);
            seq.extend_from_slice(rest);
            seq.resize(self.seq_len, self.corpus.vocab().pad_id());
            return Some(seq);
        }
        None
    }
}

pub fn sample_training_sequences(
    corpus: &Corpus,
    seq_len: usize,
    policy: PackingPolicy,
) -> Result<TrainingSequences<'_>> {
    if seq_len < 2 {
        return Err(Error::InvalidParam(format!(
            "seq_len must be at least 2, got {seq_len}"
        )));
    }
    Ok(TrainingSequences {
        corpus,
        seq_len,
        policy,
        doc: 0,
        offset: 0,
        dropped_tails: 0,
    })
}

//! Run configuration for epoch dumps: a TOML file with flag overrides.
//!
//! ```toml
//! corpus = "corpus.rtdc"
//! seed = 1
//! epochs = 3
//! seq_len = 128
//! mask_ratio = 0.15
//! out = "dump"
//!
//! [vocab]          # optional; size defaults to the corpus header
//! size = 30000
//!
//! [provider]
//! kind = "smoothed_one_hot"
//! alpha = 0.35
//!
//! [curriculum]
//! kind = "exp_decay_t"
//! T0 = 2.0
//! tau = 0.1
//! ```
//!
//! Relative paths in a config file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SpecialTokens, Vocab};
use crate::curriculum::{inline_table, CurriculumConfig};
use crate::error::{Error, Result};

fn default_true() -> bool {
    true
}

/// Which replacement distribution to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    Uniform {
        #[serde(default)]
        exclude_special: bool,
    },
    /// Unigram distribution of the corpus being dumped.
    TermFreq {
        #[serde(default = "default_true")]
        exclude_special: bool,
    },
    SmoothedOneHot {
        alpha: f64,
        #[serde(default)]
        exclude_special: bool,
    },
    FileLogits {
        path: PathBuf,
    },
    LogInterp {
        a: Box<ProviderSpec>,
        b: Box<ProviderSpec>,
    },
}

impl ProviderSpec {
    /// Parses `kind[:key=value,...]`, e.g. `smoothed_one_hot:alpha=0.35`.
    pub fn parse_inline(spec: &str) -> Result<Self> {
        let table = inline_table(spec)?;
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("provider: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub size: Option<u32>,
    #[serde(default)]
    pub pad: Option<u32>,
    #[serde(default)]
    pub unk: Option<u32>,
    #[serde(default)]
    pub cls: Option<u32>,
    #[serde(default)]
    pub sep: Option<u32>,
    #[serde(default)]
    pub mask: Option<u32>,
}

impl VocabSpec {
    pub fn special(&self) -> SpecialTokens {
        let d = SpecialTokens::default();
        SpecialTokens {
            pad: self.pad.unwrap_or(d.pad),
            unk: self.unk.unwrap_or(d.unk),
            cls: self.cls.unwrap_or(d.cls),
            sep: self.sep.unwrap_or(d.sep),
            mask: self.mask.unwrap_or(d.mask),
        }
    }

    /// Builds the vocabulary, taking the size from `fallback_size` when unset.
    pub fn build(&self, fallback_size: u32) -> Result<Vocab> {
        Vocab::new(self.size.unwrap_or(fallback_size), self.special())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub vocab: Option<VocabSpec>,
    pub provider: ProviderSpec,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default = "RunConfig::default_mask_ratio")]
    pub mask_ratio: f64,
    #[serde(default = "RunConfig::default_seq_len")]
    pub seq_len: u32,
    pub epochs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "RunConfig::default_out")]
    pub out: PathBuf,
    /// Replace `gamma(u)` of the provider's input tokens with UNK.
    #[serde(default)]
    pub drop_tokens: bool,
    /// Examples per shard in each epoch file; 0 for a single shard.
    #[serde(default)]
    pub shard_size: u64,
    /// Document tails shorter than this are dropped rather than padded.
    #[serde(default = "RunConfig::default_min_tail")]
    pub min_tail: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<u32>,
    pub seq_len: Option<u32>,
    pub mask_ratio: Option<f64>,
    pub provider: Option<String>,
    pub curriculum: Option<String>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn as_toml(&self) -> Result<toml::Table> {
        let mut t = toml::Table::new();
        let path = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
        if let Some(p) = &self.corpus {
            t.insert("corpus".into(), path(p));
        }
        if let Some(v) = self.seed {
            let v = i64::try_from(v)
                .map_err(|_| Error::Config(format!("seed {v} is too large for a config value")))?;
            t.insert("seed".into(), v.into());
        }
        if let Some(v) = self.epochs {
            t.insert("epochs".into(), i64::from(v).into());
        }
        if let Some(v) = self.seq_len {
            t.insert("seq_len".into(), i64::from(v).into());
        }
        if let Some(v) = self.mask_ratio {
            t.insert("mask_ratio".into(), v.into());
        }
        if let Some(p) = &self.out {
            t.insert("out".into(), path(p));
        }
        if let Some(s) = &self.provider {
            let spec = ProviderSpec::parse_inline(s)?;
            t.insert("provider".into(), toml::Value::try_from(spec).map_err(|e| Error::Config(e.to_string()))?);
        }
        if let Some(s) = &self.curriculum {
            let c = CurriculumConfig::parse_inline(s)?;
            t.insert("curriculum".into(), toml::Value::try_from(c).map_err(|e| Error::Config(e.to_string()))?);
        }
        Ok(t)
    }
}

fn resolve_str(base: &Path, v: &mut toml::Value) {
    if let Some(s) = v.as_str() {
        if !Path::new(s).is_absolute() {
            *v = base.join(s).to_string_lossy().into_owned().into();
        }
    }
}

/// Rewrites relative path values of a raw config table against `base`.
fn resolve_paths(t: &mut toml::Table, base: &Path) {
    for key in ["corpus", "out"] {
        if let Some(v) = t.get_mut(key) {
            resolve_str(base, v);
        }
    }
    fn provider(v: &mut toml::Value, base: &Path) {
        let Some(t) = v.as_table_mut() else { return };
        if let Some(p) = t.get_mut("path") {
            resolve_str(base, p);
        }
        for key in ["a", "b"] {
            if let Some(inner) = t.get_mut(key) {
                provider(inner, base);
            }
        }
    }
    if let Some(v) = t.get_mut("provider") {
        provider(v, base);
    }
}

impl RunConfig {
    fn default_mask_ratio() -> f64 {
        0.15
    }

    fn default_seq_len() -> u32 {
        512
    }

    fn default_out() -> PathBuf {
        PathBuf::from("dump")
    }

    fn default_min_tail() -> usize {
        8
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any), applies `overrides`, and validates.
    ///
    /// Paths from the file are taken relative to its directory; override
    /// paths are used as given.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut t: toml::Table = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                resolve_paths(&mut t, p.parent().unwrap_or(Path::new(".")));
                t
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides.as_toml()? {
            table.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("`epochs` must be positive".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config(format!("`seq_len` must be at least 2, got {}", self.seq_len)));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("`mask_ratio` must lie in (0, 1), got {}", self.mask_ratio)));
        }
        if let Some(n) = self.curriculum.total_epochs {
            if n != self.epochs {
                return Err(Error::Config(format!(
                    "curriculum total_epochs {n} disagrees with epochs {}",
                    self.epochs
                )));
            }
        }
        self.curriculum.schedule::<f64>().map_err(|e| match e {
            Error::InvalidParam(m) => Error::Config(m),
            e => e,
        })?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

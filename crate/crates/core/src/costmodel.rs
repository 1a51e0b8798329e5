//! FLOPs, parameter and memory accounting for a main model trained alongside
//! an auxiliary model that is trained, run for inference only, or replaced by
//! an offline dump.
//!
//! All FLOPs figures are per single sequence of `seq_len` tokens. The forward
//! pass counts attention and feed-forward blocks plus the output logits; the
//! input embedding lookup is not counted. Backward is twice the forward.
//!
//! Parameter breakdown:
//!
//! | part | count |
//! |---|---|
//! | token embedding | `vocab · d` |
//! | embedding LayerNorm | `2d` |
//! | relative positions | `rel_pos_bins · heads` |
//! | per layer, attention | `4 · d · (key_size · heads) + 3 · key_size · heads + d` |
//! | per layer, feed-forward | `2 · d · ffn + ffn + d` |
//! | per layer, two LayerNorms | `4d` |
//! | discriminator head | `d² + d` (dense) `+ d` (projection) `+ 1` |
//! | generator head | `d² + d` (dense) `+ 2d` (LayerNorm) `+ vocab` (output bias) |
//!
//! Memory uses `GB = 10⁹` bytes. A trained model holds `bytes_per_trained_param`
//! per parameter (weights, gradients and optimizer state) plus one stored
//! activation of width `d` per token per layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output head on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Binary replaced/original classifier.
    #[default]
    Discriminator,
    /// Masked-token prediction over the vocabulary.
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(alias = "depth")]
    pub layers: u64,
    #[serde(alias = "hidden_size")]
    pub d_model: u64,
    pub ffn_width: u64,
    #[serde(alias = "attention_heads")]
    pub heads: u64,
    /// Defaults to `d_model / heads`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_size: Option<u64>,
    pub vocab: u64,
    pub seq_len: u64,
    #[serde(default)]
    pub rel_pos_bins: u64,
    #[serde(default)]
    pub head: HeadKind,
}

pub const DEFAULT_VOCAB: u64 = 128_000;
pub const DEFAULT_SEQ_LEN: u64 = 512;
pub const DEFAULT_REL_POS_BINS: u64 = 32;

impl ModelConfig {
    fn preset(layers: u64, d_model: u64, ffn_width: u64, heads: u64, head: HeadKind) -> Self {
        Self {
            layers,
            d_model,
            ffn_width,
            heads,
            key_size: None,
            vocab: DEFAULT_VOCAB,
            seq_len: DEFAULT_SEQ_LEN,
            rel_pos_bins: DEFAULT_REL_POS_BINS,
            head,
        }
    }

    pub fn base_main() -> Self {
        Self::preset(12, 768, 3072, 12, HeadKind::Discriminator)
    }

    pub fn base_aux() -> Self {
        Self::preset(4, 768, 3072, 12, HeadKind::Generator)
    }

    pub fn large_main() -> Self {
        Self::preset(24, 1024, 4096, 16, HeadKind::Discriminator)
    }

    pub fn large_aux() -> Self {
        Self::preset(6, 1024, 4096, 16, HeadKind::Generator)
    }

    pub fn key_size(&self) -> u64 {
        self.key_size.unwrap_or(self.d_model / self.heads.max(1))
    }

    /// Total attention width, `key_size · heads`.
    pub fn attn_width(&self) -> u64 {
        self.key_size() * self.heads
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("ffn_width", self.ffn_width),
            ("heads", self.heads),
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model `{name}` must be positive")));
            }
        }
        match self.key_size {
            Some(0) => Err(Error::Config("model `key_size` must be positive".into())),
            None if self.d_model % self.heads != 0 => Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}; set key_size explicitly",
                self.d_model, self.heads
            ))),
            _ => Ok(()),
        }
    }

    /// Layer-dependent part of the forward FLOPs for one layer.
    pub fn layer_flops(&self) -> u64 {
        let (s, d, f, h, a) = (
            self.seq_len,
            self.d_model,
            self.ffn_width,
            self.heads,
            self.attn_width(),
        );
        let qkv = 2 * 3 * s * d * a;
        let scores = 2 * s * s * a;
        let softmax = 3 * h * s * s;
        let reduce = 2 * s * s * a;
        let project = 2 * s * a * d;
        let dense = 2 * s * (2 * d * f);
        qkv + scores + softmax + reduce + project + dense
    }

    pub fn output_logits_flops(&self) -> u64 {
        2 * self.seq_len * self.d_model * self.vocab
    }

    pub fn embedding_params(&self) -> u64 {
        self.vocab * self.d_model
    }

    pub fn layer_params(&self) -> u64 {
        let (d, f, a) = (self.d_model, self.ffn_width, self.attn_width());
        let attention = 4 * d * a + 3 * a + d;
        let ffn = 2 * d * f + f + d;
        let norms = 2 * 2 * d;
        attention + ffn + norms
    }

    pub fn head_params(&self) -> u64 {
        let d = self.d_model;
        match self.head {
            HeadKind::Discriminator => d * d + d + d + 1,
            HeadKind::Generator => d * d + d + 2 * d + self.vocab,
        }
    }
}

/// Forward FLOPs for one sequence.
pub fn forward_flops(cfg: &ModelConfig) -> u64 {
    cfg.layers * cfg.layer_flops() + cfg.output_logits_flops()
}

/// Forward plus backward, the latter counted as twice the forward.
pub fn training_flops(cfg: &ModelConfig) -> u64 {
    3 * forward_flops(cfg)
}

pub fn param_count(cfg: &ModelConfig, include_embedding: bool) -> u64 {
    let body = 2 * cfg.d_model
        + cfg.rel_pos_bins * cfg.heads
        + cfg.layers * cfg.layer_params()
        + cfg.head_params();
    if include_embedding {
        body + cfg.embedding_params()
    } else {
        body
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    /// Trained jointly; its embedding is shared with the main model and not counted again.
    TrainedSharedEmbed,
    /// Fixed; forward passes only.
    #[default]
    InferenceOnly,
    /// Replaced by pre-generated data; no runtime cost.
    Offline,
}

impl AuxMode {
    pub fn name(self) -> &'static str {
        match self {
            AuxMode::TrainedSharedEmbed => "trained_shared_embed",
            AuxMode::InferenceOnly => "inference_only",
            AuxMode::Offline => "offline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSetup {
    pub batch_size: u64,
    pub bytes_per_activation: u64,
    pub bytes_per_trained_param: u64,
    pub bytes_per_inference_param: u64,
    pub aux_mode: AuxMode,
}

impl Default for TrainSetup {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            bytes_per_activation: 2,
            bytes_per_trained_param: 20,
            bytes_per_inference_param: 2,
            aux_mode: AuxMode::InferenceOnly,
        }
    }
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("bytes_per_activation", self.bytes_per_activation),
            ("bytes_per_trained_param", self.bytes_per_trained_param),
            ("bytes_per_inference_param", self.bytes_per_inference_param),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("setup `{name}` must be positive")));
            }
        }
        Ok(())
    }
}

/// Cost of one model under one usage mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct ModelCost {
    pub forward_flops: u64,
    pub backward_flops: u64,
    /// FLOPs charged per sequence: forward + backward when trained, forward only for inference.
    pub training_flops: u64,
    pub param_count: u64,
    pub param_bytes: u64,
    pub activation_bytes: u64,
    pub total_bytes: u64,
}

impl ModelCost {
    fn add(self, o: Self) -> Self {
        Self {
            forward_flops: self.forward_flops + o.forward_flops,
            backward_flops: self.backward_flops + o.backward_flops,
            training_flops: self.training_flops + o.training_flops,
            param_count: self.param_count + o.param_count,
            param_bytes: self.param_bytes + o.param_bytes,
            activation_bytes: self.activation_bytes + o.activation_bytes,
            total_bytes: self.total_bytes + o.total_bytes,
        }
    }
}

fn trained_cost(cfg: &ModelConfig, setup: &TrainSetup, counted_params: u64) -> ModelCost {
    let fwd = forward_flops(cfg);
    let param_bytes = counted_params * setup.bytes_per_trained_param;
    let activation_bytes =
        setup.bytes_per_activation * setup.batch_size * cfg.seq_len * cfg.d_model * cfg.layers;
    ModelCost {
        forward_flops: fwd,
        backward_flops: 2 * fwd,
        training_flops: 3 * fwd,
        param_count: counted_params,
        param_bytes,
        activation_bytes,
        total_bytes: param_bytes + activation_bytes,
    }
}

/// Cost of the main model (always trained) and the auxiliary model under `mode`.
pub fn model_costs(
    main: &ModelConfig,
    aux: &ModelConfig,
    setup: &TrainSetup,
    mode: AuxMode,
) -> (ModelCost, ModelCost) {
    let main_cost = trained_cost(main, setup, param_count(main, true));
    let aux_cost = match mode {
        AuxMode::TrainedSharedEmbed => trained_cost(aux, setup, param_count(aux, false)),
        AuxMode::InferenceOnly => {
            let params = param_count(aux, true);
            let fwd = forward_flops(aux);
            let param_bytes = params * setup.bytes_per_inference_param;
            ModelCost {
                forward_flops: fwd,
                backward_flops: 0,
                training_flops: fwd,
                param_count: params,
                param_bytes,
                activation_bytes: 0,
                total_bytes: param_bytes,
            }
        }
        AuxMode::Offline => ModelCost::default(),
    };
    (main_cost, aux_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub aux_mode: AuxMode,
    pub main: ModelCost,
    pub aux: ModelCost,
    pub total: ModelCost,
}

/// Costs for `setup.aux_mode`.
pub fn memory_report(main: &ModelConfig, aux: &ModelConfig, setup: &TrainSetup) -> Result<CostReport> {
    main.validate()?;
    aux.validate()?;
    setup.validate()?;
    let (m, a) = model_costs(main, aux, setup, setup.aux_mode);
    Ok(CostReport {
        aux_mode: setup.aux_mode,
        main: m,
        aux: a,
        total: m.add(a),
    })
}

/// A jointly trained auxiliary model against the cheaper mode in `setup`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub original: CostReport,
    pub fast: CostReport,
}

pub fn compare(main: &ModelConfig, aux: &ModelConfig, setup: &TrainSetup) -> Result<Comparison> {
    let original = memory_report(
        main,
        aux,
        &TrainSetup {
            aux_mode: AuxMode::TrainedSharedEmbed,
            ..*setup
        },
    )?;
    let fast = memory_report(main, aux, setup)?;
    Ok(Comparison { original, fast })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratios {
    pub compute_ratio: f64,
    pub memory_ratio: f64,
    pub aux_compute_ratio: f64,
    pub aux_memory_ratio: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fast totals divided by original totals.
pub fn overall_ratios(c: &Comparison) -> Ratios {
    Ratios {
        compute_ratio: ratio(c.fast.total.training_flops, c.original.total.training_flops),
        memory_ratio: ratio(c.fast.total.total_bytes, c.original.total.total_bytes),
        aux_compute_ratio: ratio(c.fast.aux.training_flops, c.original.aux.training_flops),
        aux_memory_ratio: ratio(c.fast.aux.total_bytes, c.original.aux.total_bytes),
    }
}

/// One row of an architecture table: a main model and a shallower auxiliary
/// model with the same per-layer shape.
///
/// ```toml
/// depth_main = 12
/// depth_aux = 4
/// hidden_size = 768
/// ffn_width = 3072
/// attention_heads = 12
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureRow {
    pub depth_main: u64,
    pub depth_aux: u64,
    pub hidden_size: u64,
    pub ffn_width: u64,
    pub attention_heads: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_size: Option<u64>,
    #[serde(default = "default_vocab")]
    pub vocab: u64,
    #[serde(default = "default_seq_len")]
    pub seq_len: u64,
    #[serde(default = "default_rel_pos_bins")]
    pub rel_pos_bins: u64,
}

fn default_vocab() -> u64 {
    DEFAULT_VOCAB
}

fn default_seq_len() -> u64 {
    DEFAULT_SEQ_LEN
}

fn default_rel_pos_bins() -> u64 {
    DEFAULT_REL_POS_BINS
}

impl ArchitectureRow {
    pub fn base() -> Self {
        Self::from_pair(&ModelConfig::base_main(), 4)
    }

    pub fn large() -> Self {
        Self::from_pair(&ModelConfig::large_main(), 6)
    }

    fn from_pair(main: &ModelConfig, depth_aux: u64) -> Self {
        Self {
            depth_main: main.layers,
            depth_aux,
            hidden_size: main.d_model,
            ffn_width: main.ffn_width,
            attention_heads: main.heads,
            key_size: main.key_size,
            vocab: main.vocab,
            seq_len: main.seq_len,
            rel_pos_bins: main.rel_pos_bins,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "base" => Ok(Self::base()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!(
                "unknown architecture preset `{other}` (expected base or large)"
            ))),
        }
    }

    /// `(main, aux)` model configs.
    pub fn models(&self) -> (ModelConfig, ModelConfig) {
        let model = |layers, head| ModelConfig {
            layers,
            d_model: self.hidden_size,
            ffn_width: self.ffn_width,
            heads: self.attention_heads,
            key_size: self.key_size,
            vocab: self.vocab,
            seq_len: self.seq_len,
            rel_pos_bins: self.rel_pos_bins,
            head,
        };
        (
            model(self.depth_main, HeadKind::Discriminator),
            model(self.depth_aux, HeadKind::Generator),
        )
    }
}

/// Cost-model input file: an architecture row plus an optional `[setup]` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostConfig {
    pub arch: ArchitectureRow,
    pub setup: TrainSetup,
}

impl CostConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let err = |e: toml::de::Error| Error::Config(format!("cost config: {e}"));
        let mut table: toml::Table = toml::from_str(text).map_err(err)?;
        let setup = match table.remove("setup") {
            Some(v) => v.try_into().map_err(err)?,
            None => TrainSetup::default(),
        };
        let arch = toml::Value::Table(table).try_into().map_err(err)?;
        Ok(Self { arch, setup })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within(x: f64, target: f64, rel: f64) -> bool {
        ((x - target) / target).abs() <= rel
    }

    #[test]
    fn base_flops() {
        let (main, aux) = ArchitectureRow::base().models();
        assert!(within(forward_flops(&main) as f64 / 1e9, 197.3, 0.005));
        assert!(within(training_flops(&main) as f64 / 1e9, 591.9, 0.005));
        assert!(within(forward_flops(&aux) as f64 / 1e9, 132.9, 0.005));
        assert!(within(training_flops(&aux) as f64 / 1e9, 398.6, 0.005));
        assert_eq!(training_flops(&main), 3 * forward_flops(&main));
    }

    #[test]
    fn params_breakdown() {
        let (main, aux) = ArchitectureRow::base().models();
        assert_eq!(main.embedding_params(), 98_304_000);
        assert_eq!(main.layer_params(), 7_087_872);
        assert!(within(param_count(&main, true) as f64, 184e6, 0.01));
        assert!(within(param_count(&aux, true) as f64, 127e6, 0.01));
        assert_eq!(
            param_count(&aux, true) - param_count(&aux, false),
            aux.embedding_params()
        );
    }

    #[test]
    fn offline_aux_is_free() {
        let (main, aux) = ArchitectureRow::large().models();
        let setup = TrainSetup {
            aux_mode: AuxMode::Offline,
            ..TrainSetup::default()
        };
        let r = memory_report(&main, &aux, &setup).unwrap();
        assert_eq!(r.aux, ModelCost::default());
        assert_eq!(r.total, r.main);
    }

    #[test]
    fn doubling_layers() {
        let (main, _) = ArchitectureRow::base().models();
        let double = ModelConfig {
            layers: main.layers * 2,
            ..main
        };
        let setup = TrainSetup::default();
        assert_eq!(
            forward_flops(&double) - double.output_logits_flops(),
            2 * (forward_flops(&main) - main.output_logits_flops())
        );
        let a = trained_cost(&main, &setup, 0).activation_bytes;
        let b = trained_cost(&double, &setup, 0).activation_bytes;
        assert_eq!(b, 2 * a);
    }

    #[test]
    fn monotone_in_every_dimension() {
        let (main, aux) = ArchitectureRow::base().models();
        let setup = TrainSetup::default();
        let cost = |m: &ModelConfig, s: &TrainSetup| {
            let c = compare(m, &aux, s).unwrap();
            [
                forward_flops(m),
                param_count(m, true),
                c.original.total.total_bytes,
                c.fast.total.total_bytes,
                c.original.total.training_flops,
            ]
        };
        let base = cost(&main, &setup);
        let bumps = [
            ModelConfig { layers: main.layers + 1, ..main },
            ModelConfig { d_model: main.d_model + 12, ..main },
            ModelConfig { ffn_width: main.ffn_width + 1, ..main },
            ModelConfig { vocab: main.vocab + 1, ..main },
            ModelConfig { seq_len: main.seq_len + 1, ..main },
        ];
        for m in &bumps {
            let c = cost(m, &setup);
            assert!(c.iter().zip(&base).all(|(x, y)| x >= y), "{m:?}");
        }
        let bigger = TrainSetup { batch_size: 4096, ..setup };
        let c = cost(&main, &bigger);
        assert!(c.iter().zip(&base).all(|(x, y)| x >= y));
    }

    #[test]
    fn config_parsing() {
        let cfg = CostConfig::from_toml_str(
            "depth_main = 12\ndepth_aux = 4\nhidden_size = 768\nffn_width = 3072\nattention_heads = 12\n\n[setup]\naux_mode = \"offline\"\n",
        )
        .unwrap();
        assert_eq!(cfg.arch, ArchitectureRow::base());
        assert_eq!(cfg.setup.aux_mode, AuxMode::Offline);
        assert_eq!(cfg.setup.batch_size, 2048);
        assert!(CostConfig::from_toml_str("depth_main = 12").is_err());
        let bad = ModelConfig { heads: 7, ..ModelConfig::base_main() };
        assert!(bad.validate().is_err());
    }
}

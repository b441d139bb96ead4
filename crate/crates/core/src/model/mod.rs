//! The two-branch grounding scorer.
//!
//! * visiolinguistic branch: `e_vw = MLP([pool(views) ; sentence])`
//! * voxel-language branch: a pre-norm transformer encoder over
//!   `[CLS ; words ; factor tokens]`, `e_ow = Linear(CLS_out)`
//! * scorer: `sigmoid(MLP([e_vw ; e_ow]))`
//!
//! Every parameter has an analytic gradient; the feature inputs are constants.

mod checkpoint;
mod layers;
mod network;
mod params;
mod transformer;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::features::ArchiveError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::sigmoid;
pub use network::{
    batch_loss, forward_instance, gradients, predict, score, score_candidate,
    visiolinguistic_forward, voxel_language_forward, CandidateInputs, ScorePair, TIE_TOLERANCE,
};
pub use params::{init_params, EncoderLayer, LayerNorm, Linear, Mlp, ParameterSet, VoxelLanguage};
pub use transformer::{transformer_encode, transformer_encode_with_attention};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("width mismatch in {what}: expected {expected}, got {found}")]
    Width {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Input(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Which pathway feeds the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Both branches.
    Full,
    /// Sentence and pooled views only (no geometry).
    VisiolinguisticOnly,
    /// Visiolinguistic branch plus max-pooled factor tokens, no transformer.
    MlpFusion,
    /// Transformer branch only (no view embeddings).
    VoxelOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::VisiolinguisticOnly,
        Variant::MlpFusion,
        Variant::VoxelOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::VisiolinguisticOnly => "visiolinguistic_only",
            Variant::MlpFusion => "mlp_fusion",
            Variant::VoxelOnly => "voxel_only",
        }
    }

    pub fn uses_views(self) -> bool {
        self != Variant::VoxelOnly
    }

    pub fn uses_transformer(self) -> bool {
        matches!(self, Variant::Full | Variant::VoxelOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let allowed: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                format!("unknown variant {s:?}; allowed: {}", allowed.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Mean,
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            other => Err(format!("unknown pooling {other:?}; allowed: max, mean")),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_view: usize,
    pub d_text: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub mlp_hidden: usize,
    pub fusion_dim: usize,
    pub variant: Variant,
    /// Longer descriptions are truncated.
    pub max_words: usize,
    pub word_positions: bool,
    pub factor_positions: bool,
    pub view_pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_view: 512,
            d_text: 512,
            d_model: 512,
            n_heads: 8,
            n_layers: 2,
            d_ff: 1024,
            mlp_hidden: 512,
            fusion_dim: 512,
            variant: Variant::Full,
            max_words: 32,
            word_positions: true,
            factor_positions: false,
            view_pooling: Pooling::Max,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_v", self.d_view),
            ("d_t", self.d_text),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("mlp_hidden", self.mlp_hidden),
            ("fusion_dim", self.fusion_dim),
            ("max_words", self.max_words),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.n_layers == 0 && self.variant.uses_transformer() {
            return Err(ModelError::Config("n_layers must be at least 1".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the scorer input for the configured variant.
    pub fn score_input_dim(&self) -> usize {
        match self.variant {
            Variant::Full => 2 * self.fusion_dim,
            Variant::VisiolinguisticOnly | Variant::VoxelOnly => self.fusion_dim,
            Variant::MlpFusion => self.fusion_dim + crate::voxel::TOKEN_WIDTH,
        }
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        [
            ("d_v", self.d_view.to_string()),
            ("d_t", self.d_text.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("fusion_dim", self.fusion_dim.to_string()),
            ("variant", self.variant.to_string()),
            ("max_words", self.max_words.to_string()),
            ("word_positions", self.word_positions.to_string()),
            ("factor_positions", self.factor_positions.to_string()),
            ("view_pooling", self.view_pooling.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key=value` setting (key without the `model.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num(key: &str, v: &str) -> Result<usize, String> {
            v.parse().map_err(|_| format!("{key}: expected an integer, got {v:?}"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            v.parse().map_err(|_| format!("{key}: expected true/false, got {v:?}"))
        }
        match key {
            "d_v" => self.d_view = num(key, value)?,
            "d_t" => self.d_text = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "n_layers" => self.n_layers = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "mlp_hidden" => self.mlp_hidden = num(key, value)?,
            "fusion_dim" => self.fusion_dim = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "max_words" => self.max_words = num(key, value)?,
            "word_positions" => self.word_positions = flag(key, value)?,
            "factor_positions" => self.factor_positions = flag(key, value)?,
            "view_pooling" => self.view_pooling = value.parse()?,
            other => return Err(format!("unknown key model.{other}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_round_trip() {
        let mut c = ModelConfig {
            variant: Variant::MlpFusion,
            factor_positions: true,
            view_pooling: Pooling::Mean,
            d_model: 48,
            ..ModelConfig::default()
        };
        let mut d = ModelConfig::default();
        for (k, v) in c.to_key_values() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
        c.n_heads = 5;
        assert!(c.validate().is_err());
        assert!(d.set("bogus", "1").is_err());
    }

    #[test]
    fn unknown_variant_lists_allowed() {
        let err = "transformer".parse::<Variant>().unwrap_err();
        for v in Variant::ALL {
            assert!(err.contains(v.as_str()));
        }
    }
}

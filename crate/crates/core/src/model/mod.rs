//! Desk-scale transformer classifier over encoded sessions.
//!
//! Four embedding tables (token, token position, token type, page
//! position) are summed and fed through pre-LayerNorm blocks whose
//! attention is either full or sliding-window with a global [CLS]. The
//! `Longformer` variant drops the token-type and page-position tables from
//! the sum, which is exactly the ablation the plus variant is measured
//! against. Forward, backward, and Adam are explicit; no autograd.

pub mod attention;
pub mod backward;
pub mod checkpoint;
pub mod forward;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{attention, attention_banded, AttnPattern};
pub use backward::loss_and_grad;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{forward, softmax5, ForwardTrace};
pub use params::{init_params, LayerParams, ModelParams};
pub use scalar::Scalar;
pub use tensor::Matrix;
pub use train::{grid_search, predict, train, EpochStats, GridCell, TrainHistory, TrainOptions};

use crate::session::DataError;
use crate::vocab::TokenizerError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    Config(String),
    #[error("input out of range: {0}")]
    InputRange(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("corpus has no {0} split")]
    MissingSplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Token + position + token-type + page-position embeddings.
    LongformerPlus,
    /// Token + position embeddings only.
    Longformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Full,
    SlidingGlobal,
}

/// How sliding-window attention is computed: dense scores with -inf on
/// masked pairs (reference), or only the allowed band (fast path; must
/// match the reference within 1e-6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionImpl {
    MaskedFull,
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Vocabulary size V_w; set from the built vocabulary before init.
    pub vocab_size: usize,
    pub d_model: usize,
    /// Maximum tokens per sequence (rows of the token-position table).
    pub max_tokens: usize,
    /// Maximum pages per sequence (rows of the page-position table).
    pub max_pages: usize,
    pub layers: usize,
    pub heads: usize,
    /// Sliding window width w; token i attends j when |i-j| <= w/2.
    pub window: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub variant: ModelVariant,
    pub attention_mode: AttentionMode,
    pub attention_impl: AttentionImpl,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk defaults; max tokens/pages follow the fixed 1024/50 budgets.
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_model: 64,
            max_tokens: 1024,
            max_pages: 50,
            layers: 2,
            heads: 4,
            window: 64,
            ffn_mult: 4,
            dropout: 0.1,
            variant: ModelVariant::LongformerPlus,
            attention_mode: AttentionMode::SlidingGlobal,
            attention_impl: AttentionImpl::MaskedFull,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} (< 4 reserved ids)", self.vocab_size));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.window == 0 || !self.window.is_multiple_of(2) {
            return fail(format!("window {} must be positive and even", self.window));
        }
        if self.layers == 0 || self.ffn_mult == 0 {
            return fail("layers and ffn_mult must be positive".into());
        }
        if self.max_tokens == 0 || self.max_pages == 0 {
            return fail("max_tokens and max_pages must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

//! Contextual encoder plugins and the adapter that turns a sub-branch into
//! the fixed-size representation of its target instance.

mod adapter;
mod context_mix;
mod summarizer;

pub use adapter::{
    budget, concat_subbranch, encode_target, scatter_target_grad, EncoderSpec, Segment, TargetRepresentation,
    TokenizedBranch, TruncationReport,
};
pub use context_mix::{ContextMixConfig, ContextMixEncoder};
pub use summarizer::{default_summarizer, HeadTailSummarizer, Summarizer};

use std::path::PathBuf;
use std::sync::Mutex;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const SEP_ID: TokenId = 1;
pub const MASK_ID: TokenId = 2;

/// A token with its character offsets `[start, end)` in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("tokenizer failed: {0}")]
    TokenizerFailure(String),
    #[error("encoder failed: {0}")]
    EncoderFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty sub-branch")]
    EmptyBranch,
    #[error("unknown encoder plugin `{0}`")]
    UnknownPlugin(String),
    #[error("bad encoder configuration: {0}")]
    BadConfig(String),
}

/// Contract for a pretrained contextual encoder.
///
/// `encode` maps `l` token ids to an `l × h` matrix. Its internal embeddings
/// (token, segment, position) are not visible to callers. Encoders that
/// can be fine-tuned expose flat parameter slices and a `backward` that
/// accumulates parameter gradients in the same slice order.
pub trait Encoder: Send + Sync {
    fn name(&self) -> &str;

    fn hidden_size(&self) -> usize;

    fn sep_id(&self) -> TokenId {
        SEP_ID
    }

    fn mask_id(&self) -> TokenId {
        MASK_ID
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, EncoderError>;

    fn encode(&self, ids: &[TokenId]) -> Result<Array2<f64>, EncoderError>;

    /// Whether `encode` may be called from several threads at once.
    fn reentrant(&self) -> bool {
        true
    }

    /// Everything needed to rebuild this encoder through the registry.
    fn descriptor(&self) -> EncoderDescriptor;

    fn parameters(&self) -> Vec<&[f64]> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }

    /// Accumulate `dL/dθ` given `dL/dH` for the last `encode(ids)`.
    fn backward(
        &self,
        _ids: &[TokenId],
        _grad_hidden: ArrayView2<'_, f64>,
        _grads: &mut [Vec<f64>],
    ) -> Result<(), EncoderError> {
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn Encoder>;
}

impl Clone for Box<dyn Encoder> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Name plus plugin-specific configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub name: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Default for EncoderDescriptor {
    fn default() -> Self {
        EncoderDescriptor {
            name: ContextMixEncoder::NAME.to_string(),
            config: serde_json::to_value(ContextMixConfig::default()).expect("serializes"),
        }
    }
}

/// Build an encoder plugin by name.
pub fn build_encoder(desc: &EncoderDescriptor) -> Result<Box<dyn Encoder>, EncoderError> {
    match desc.name.as_str() {
        ContextMixEncoder::NAME => {
            let cfg: ContextMixConfig = if desc.config.is_null() {
                ContextMixConfig::default()
            } else {
                serde_json::from_value(desc.config.clone()).map_err(|e| EncoderError::BadConfig(e.to_string()))?
            };
            Ok(Box::new(ContextMixEncoder::new(cfg)?))
        }
        other => Err(EncoderError::UnknownPlugin(other.to_string())),
    }
}

pub const CACHE_ENV: &str = "BRANCHSTANCE_CACHE";

/// Resolve an encoder artifact name against `$BRANCHSTANCE_CACHE`
/// (default `~/.cache/branchstance`). Absolute paths pass through.
pub fn artifact_path(name: &str) -> PathBuf {
    let p = PathBuf::from(name);
    if p.is_absolute() {
        return p;
    }
    let base = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| {
        std::env::var_os("HOME")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(".cache")
            .join("branchstance")
    });
    base.join(p)
}

/// Shared handle that serializes calls into non-reentrant plugins.
pub struct EncoderHandle {
    inner: Box<dyn Encoder>,
    gate: Option<Mutex<()>>,
}

impl EncoderHandle {
    pub fn new(inner: Box<dyn Encoder>) -> EncoderHandle {
        let gate = if inner.reentrant() { None } else { Some(Mutex::new(())) };
        EncoderHandle { inner, gate }
    }

    pub fn get(&self) -> &dyn Encoder {
        self.inner.as_ref()
    }

    pub fn get_mut(&mut self) -> &mut dyn Encoder {
        self.inner.as_mut()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<Token>, EncoderError> {
        let _g = self.gate.as_ref().map(|m| m.lock().unwrap_or_else(|e| e.into_inner()));
        self.inner.tokenize(text)
    }

    pub fn encode(&self, ids: &[TokenId]) -> Result<Array2<f64>, EncoderError> {
        let _g = self.gate.as_ref().map(|m| m.lock().unwrap_or_else(|e| e.into_inner()));
        self.inner.encode(ids)
    }
}

impl Clone for EncoderHandle {
    fn clone(&self) -> Self {
        EncoderHandle::new(self.inner.clone_box())
    }
}

impl std::fmt::Debug for EncoderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderHandle")
            .field("name", &self.inner.name())
            .field("hidden_size", &self.inner.hidden_size())
            .finish()
    }
}

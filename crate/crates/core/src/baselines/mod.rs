//! Comparison models: a linear SVM over n-grams, a convolutional text
//! classifier on static word vectors, a target-attentive BiLSTM, and the
//! encoder fine-tuned on the target instance alone.

mod embeddings;
mod ngram;
mod segment;
mod svm;
mod tan;
mod textcnn;

pub use embeddings::StaticEmbeddings;
pub use ngram::{ngram_strings, NgramSpec, NgramVectorizer, SparseVec};
pub use segment::{DictionarySegmenter, FallbackSegmenter, Segmenter, SegmenterError, SegmenterSpec, Word};
pub use svm::{train_binary, LinearBinary, SvmBaseline, SvmConfig, SVM_FAMILY};
pub use tan::{LstmParams, Tan, TanConfig, TanParams, TAN_FAMILY};
pub use textcnn::{TextCnn, TextCnnConfig, TEXTCNN_FAMILY};

use crate::encoder::EncoderHandle;
use crate::model::{ModelError, StanceModel};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
    #[error("embeddings: {0}")]
    Embeddings(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The encoder with only a pooled linear layer, seeing the target alone.
pub fn finetuned_encoder(encoder: EncoderHandle, init_seed: u64) -> Result<StanceModel, ModelError> {
    StanceModel::finetuned_encoder_baseline(encoder, init_seed)
}

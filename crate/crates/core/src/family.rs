//! One entry point to build, train, save and load every model family.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    DictionarySegmenter, FallbackSegmenter, Segmenter, SegmenterSpec, StaticEmbeddings, SvmBaseline, SvmConfig, Tan,
    TanConfig, TextCnn, TextCnnConfig, SVM_FAMILY, TAN_FAMILY, TEXTCNN_FAMILY,
};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::encoder::{build_encoder, EncoderDescriptor, EncoderHandle};
use crate::ingest::Dataset;
use crate::model::{ModelConfig, ModelError, StanceModel, Variant};
use crate::stance::StanceDistribution;
use crate::thread::{ContextLimit, SubBranch};
use crate::train::{train, StancePredictor, TrainConfig, TrainError, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Branch,
    NoSr,
    NoCfe,
    Svm,
    Textcnn,
    Tan,
    Encoder,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 7] = [
        ModelFamily::Branch,
        ModelFamily::NoSr,
        ModelFamily::NoCfe,
        ModelFamily::Svm,
        ModelFamily::Textcnn,
        ModelFamily::Tan,
        ModelFamily::Encoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Branch => "branch",
            ModelFamily::NoSr => "no_sr",
            ModelFamily::NoCfe => "no_cfe",
            ModelFamily::Svm => "svm",
            ModelFamily::Textcnn => "textcnn",
            ModelFamily::Tan => "tan",
            ModelFamily::Encoder => "encoder",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelFamily::ALL.into_iter().find(|f| f.as_str() == norm).ok_or_else(|| {
            format!("unknown model `{s}` (expected one of branch, no_sr, no_cfe, svm, textcnn, tan, encoder)")
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FamilyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Resource(String),
}

impl From<FamilyError> for TrainError {
    fn from(e: FamilyError) -> TrainError {
        match e {
            FamilyError::Train(t) => t,
            FamilyError::Model(m) => TrainError::Model(m),
            FamilyError::Checkpoint(c) => TrainError::Model(ModelError::Checkpoint(c)),
            FamilyError::Resource(r) => TrainError::Config(r),
        }
    }
}

/// Everything a run needs; each section has working defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub encoder: EncoderDescriptor,
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub textcnn: TextCnnConfig,
    pub tan: TanConfig,
    /// Static word vectors for the word-level baselines. Without them,
    /// seeded random vectors over the training vocabulary are used.
    pub embeddings: Option<PathBuf>,
    /// Dimension of those random vectors.
    pub random_embedding_dim: usize,
    /// Dictionary for word segmentation; without it the fallback segmenter
    /// (one unit per CJK character) is used.
    pub word_list: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            encoder: EncoderDescriptor::default(),
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
            textcnn: TextCnnConfig::default(),
            tan: TanConfig::default(),
            embeddings: None,
            random_embedding_dim: 64,
            word_list: None,
        }
    }
}

impl RunConfig {
    pub fn segmenter(&self) -> Result<Arc<dyn Segmenter>, FamilyError> {
        match &self.word_list {
            Some(p) => Ok(Arc::new(DictionarySegmenter::load(p).map_err(|e| FamilyError::Resource(e.to_string()))?)),
            None => Ok(Arc::new(FallbackSegmenter)),
        }
    }

    pub fn encoder_handle(&self) -> Result<EncoderHandle, FamilyError> {
        Ok(EncoderHandle::new(build_encoder(&self.encoder).map_err(ModelError::from)?))
    }

    fn static_embeddings(
        &self,
        train: &Dataset,
        seg: &dyn Segmenter,
        seed: u64,
    ) -> Result<StaticEmbeddings, FamilyError> {
        if let Some(p) = &self.embeddings {
            return StaticEmbeddings::load(p).map_err(|e| FamilyError::Resource(e.to_string()));
        }
        log::warn!("no embeddings configured; using random vectors over the training vocabulary");
        let mut vocab = BTreeSet::new();
        for t in &train.threads {
            for i in t.preorder() {
                let words = seg.segment(&i.text).map_err(|e| FamilyError::Resource(e.to_string()))?;
                vocab.extend(words.into_iter().map(|w| w.text));
            }
        }
        vocab.extend(
            seg.segment(&self.tan.target_phrase)
                .map_err(|e| FamilyError::Resource(e.to_string()))?
                .into_iter()
                .map(|w| w.text),
        );
        let words: Vec<&str> = vocab.iter().map(String::as_str).collect();
        Ok(StaticEmbeddings::random(&words, self.random_embedding_dim.max(1), seed))
    }

    /// Head configuration for one of the encoder-based families.
    pub fn model_config(&self, family: ModelFamily) -> ModelConfig {
        let mut m = self.model.clone();
        match family {
            ModelFamily::Branch => m.variant = Variant::Full,
            ModelFamily::NoSr => m.variant = Variant::NoSr,
            ModelFamily::NoCfe => m.variant = Variant::NoCfe,
            ModelFamily::Encoder => {
                m.variant = Variant::NoCfe;
                m.context_k = ContextLimit::Ancestors(0);
            }
            _ => {}
        }
        m
    }
}

/// A trained model of any family.
#[derive(Clone)]
pub enum AnyModel {
    Stance(StanceModel),
    Svm(SvmBaseline),
    TextCnn(TextCnn),
    Tan(Tan),
}

impl AnyModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            AnyModel::Stance(m) => {
                let c = m.config();
                match c.variant {
                    Variant::Full => ModelFamily::Branch,
                    Variant::NoSr => ModelFamily::NoSr,
                    Variant::NoCfe if c.context_k == ContextLimit::Ancestors(0) => ModelFamily::Encoder,
                    Variant::NoCfe => ModelFamily::NoCfe,
                }
            }
            AnyModel::Svm(_) => ModelFamily::Svm,
            AnyModel::TextCnn(_) => ModelFamily::Textcnn,
            AnyModel::Tan(_) => ModelFamily::Tan,
        }
    }

    pub fn as_stance_model(&self) -> Option<&StanceModel> {
        match self {
            AnyModel::Stance(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            AnyModel::Stance(m) => m.to_checkpoint(),
            AnyModel::Svm(m) => m.to_checkpoint(),
            AnyModel::TextCnn(m) => m.to_checkpoint(),
            AnyModel::Tan(m) => m.to_checkpoint(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), FamilyError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Dispatch on the family recorded in the header.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<AnyModel, FamilyError> {
        let seg = || -> Arc<dyn Segmenter> {
            match serde_json::from_value::<Option<SegmenterSpec>>(c.header.extra["segmenter_spec"].clone()) {
                Ok(Some(spec)) => spec.build(),
                _ => {
                    log::warn!("checkpoint does not describe its segmenter; using the fallback");
                    Arc::new(FallbackSegmenter)
                }
            }
        };
        Ok(match c.header.family.as_str() {
            crate::model::FAMILY => AnyModel::Stance(StanceModel::from_checkpoint(c)?),
            SVM_FAMILY => AnyModel::Svm(SvmBaseline::from_checkpoint(c, seg())?),
            TEXTCNN_FAMILY => AnyModel::TextCnn(TextCnn::from_checkpoint(c, seg())?),
            TAN_FAMILY => AnyModel::Tan(Tan::from_checkpoint(c, seg())?),
            other => return Err(CheckpointError::VersionMismatch(format!("unknown model family `{other}`")).into()),
        })
    }

    pub fn load(path: &Path) -> Result<AnyModel, FamilyError> {
        AnyModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl StancePredictor for AnyModel {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
        match self {
            AnyModel::Stance(m) => m.predict_branch(b),
            AnyModel::Svm(m) => m.predict_branch(b),
            AnyModel::TextCnn(m) => m.predict_branch(b),
            AnyModel::Tan(m) => m.predict_branch(b),
        }
    }
}

/// Train one model of `family` on `ds`.
///
/// Initialisation seeds are offset by `cfg.train.seed` so repetitions with
/// different training seeds also start from different weights.
pub fn fit(family: ModelFamily, ds: &Dataset, cfg: &RunConfig) -> Result<(AnyModel, Option<TrainLog>), FamilyError> {
    let seed = cfg.train.seed;
    match family {
        ModelFamily::Branch | ModelFamily::NoSr | ModelFamily::NoCfe | ModelFamily::Encoder => {
            let mut mc = cfg.model_config(family);
            mc.init_seed = mc.init_seed.wrapping_add(seed);
            let mut m = StanceModel::new(mc, cfg.encoder_handle()?)?;
            let log = train(&mut m, ds, &cfg.train)?;
            Ok((AnyModel::Stance(m), Some(log)))
        }
        ModelFamily::Svm => {
            let sc = SvmConfig { seed: cfg.svm.seed.wrapping_add(seed), ..cfg.svm.clone() };
            let m = SvmBaseline::fit_dataset(ds, sc, cfg.segmenter()?).map_err(|e| match e {
                crate::baselines::BaselineError::EmptyTrainSet => FamilyError::Train(TrainError::EmptyTrainSet),
                other => FamilyError::Resource(other.to_string()),
            })?;
            Ok((AnyModel::Svm(m), None))
        }
        ModelFamily::Textcnn => {
            let seg = cfg.segmenter()?;
            let emb = Arc::new(cfg.static_embeddings(ds, seg.as_ref(), seed)?);
            let tc = TextCnnConfig { init_seed: cfg.textcnn.init_seed.wrapping_add(seed), ..cfg.textcnn.clone() };
            let lr = tc.learning_rate;
            let mut m = TextCnn::new(tc, emb, seg)?;
            let log = train(&mut m, ds, &TrainConfig { head_lr: lr, ..cfg.train.clone() })?;
            Ok((AnyModel::TextCnn(m), Some(log)))
        }
        ModelFamily::Tan => {
            let seg = cfg.segmenter()?;
            let emb = Arc::new(cfg.static_embeddings(ds, seg.as_ref(), seed)?);
            let tc = TanConfig { init_seed: cfg.tan.init_seed.wrapping_add(seed), ..cfg.tan.clone() };
            let lr = tc.learning_rate;
            let mut m = Tan::new(tc, emb, seg)?;
            let log = train(&mut m, ds, &TrainConfig { head_lr: lr, ..cfg.train.clone() })?;
            Ok((AnyModel::Tan(m), Some(log)))
        }
    }
}

/// Repeated-run experiment for one family: `cfg.train.repetitions` models
/// trained with seeds `seed, seed + 1, ...`, each scored on `test`.
pub fn experiment(
    family: ModelFamily,
    train_ds: &Dataset,
    test: &Dataset,
    cfg: &RunConfig,
) -> Result<crate::train::EvalReport, TrainError> {
    crate::train::run_experiment(
        |d, tc| Ok(fit(family, d, &RunConfig { train: tc.clone(), ..cfg.clone() })?.0),
        train_ds,
        test,
        &cfg.train,
    )
}

/// The context-limit sweep for the full model.
pub fn sweep(
    ks: &[ContextLimit],
    train_ds: &Dataset,
    test: &Dataset,
    cfg: &RunConfig,
) -> Result<Vec<crate::train::SweepEntry>, TrainError> {
    crate::train::partial_context_sweep(
        ks,
        |k, d, tc| {
            let mut rc = RunConfig { train: tc.clone(), ..cfg.clone() };
            rc.model.context_k = k;
            Ok(fit(ModelFamily::Branch, d, &rc)?.0)
        },
        train_ds,
        test,
        &cfg.train,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_corpus, PlantedConfig};

    #[test]
    fn family_names_round_trip() {
        for f in ModelFamily::ALL {
            assert_eq!(f.as_str().parse::<ModelFamily>().unwrap(), f);
        }
        assert_eq!("No-SR".parse::<ModelFamily>().unwrap(), ModelFamily::NoSr);
        assert!("bert".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn every_family_trains_saves_and_loads() {
        let ds = planted_corpus(&PlantedConfig { threads: 6, ..Default::default() }, 1);
        let mut cfg = RunConfig::default();
        cfg.train.max_batches = 2;
        cfg.train.eval_every_batches = 1;
        cfg.tan.hidden = 4;
        cfg.random_embedding_dim = 8;
        cfg.svm.cs = vec![1.0];
        let dir = tempfile::tempdir().unwrap();
        for f in ModelFamily::ALL {
            let (m, _) = fit(f, &ds, &cfg).unwrap();
            assert_eq!(m.family(), f);
            let path = dir.path().join(format!("{f}.ckpt"));
            m.save(&path).unwrap();
            let back = AnyModel::load(&path).unwrap();
            assert_eq!(back.family(), f);
            let b = &ds.examples()[0].branch;
            assert_eq!(back.predict_branch(b).unwrap(), m.predict_branch(b).unwrap(), "{f}");
        }
    }
}

use std::sync::Arc;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embeddings::StaticEmbeddings;
use super::segment::Segmenter;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::encoder::TargetRepresentation;
use crate::model::{cross_entropy, head_backward, head_forward, HeadParams, ModelConfig, ModelError, Variant};
use crate::stance::{Stance, StanceDistribution};
use crate::thread::SubBranch;
use crate::train::{ParamGroup, StancePredictor, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextCnnConfig {
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    /// Words kept (or zero-padded to) per instance.
    pub padding: usize,
    pub dropout: f64,
    pub init_seed: u64,
    /// Adam step size; these models train from scratch and use a larger one.
    pub learning_rate: f64,
}

impl Default for TextCnnConfig {
    fn default() -> Self {
        TextCnnConfig {
            filter_sizes: vec![2, 3, 4],
            filters_per_size: 32,
            padding: 64,
            dropout: 0.5,
            init_seed: 0,
            learning_rate: 5e-4,
        }
    }
}

impl TextCnnConfig {
    fn as_model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: Variant::Full,
            filter_sizes: self.filter_sizes.clone(),
            filters_per_size: self.filters_per_size,
            d: self.padding,
            dropout: self.dropout,
            init_seed: self.init_seed,
            ..ModelConfig::default()
        }
    }
}

/// Static word vectors of the target instance through the convolutional head.
#[derive(Clone)]
pub struct TextCnn {
    pub config: TextCnnConfig,
    pub head: HeadParams,
    embeddings: Arc<StaticEmbeddings>,
    segmenter: Arc<dyn Segmenter>,
}

pub const TEXTCNN_FAMILY: &str = "textcnn";

impl TextCnn {
    pub fn new(
        config: TextCnnConfig,
        embeddings: Arc<StaticEmbeddings>,
        segmenter: Arc<dyn Segmenter>,
    ) -> Result<TextCnn, ModelError> {
        let mc = config.as_model_config();
        mc.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let head = HeadParams::init(&mc, embeddings.dim, &mut rng);
        Ok(TextCnn { config, head, embeddings, segmenter })
    }

    pub fn embeddings(&self) -> &StaticEmbeddings {
        &self.embeddings
    }

    /// Segment, look up and pad or cut to `padding` rows.
    pub fn represent(&self, text: &str) -> Result<TargetRepresentation, ModelError> {
        let words = self.segmenter.segment(text).map_err(|e| ModelError::Other(e.to_string()))?;
        let rows = self.embeddings.rows(words.iter().map(|w| w.text.as_str()));
        Ok(TargetRepresentation::from_rows(rows.view(), self.config.padding))
    }

    pub fn predict_text(&self, text: &str) -> Result<StanceDistribution, ModelError> {
        Ok(head_forward(&self.head, &self.represent(text)?, None)?.probs)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(TEXTCNN_FAMILY, serde_json::to_value(&self.config).expect("serializes"));
        c.header.hidden_size = Some(self.embeddings.dim);
        c.header.extra = serde_json::json!({ "words": self.embeddings.words(), "segmenter": self.segmenter.name(), "segmenter_spec": self.segmenter.spec() });
        for ((name, shape), data) in self.head.names().into_iter().zip(self.head.tensors()) {
            c.push(&name, &shape, data);
        }
        let v = &self.embeddings.vectors;
        c.push("embeddings", &[v.nrows(), v.ncols()], v.as_slice().expect("standard layout"));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, segmenter: Arc<dyn Segmenter>) -> Result<TextCnn, ModelError> {
        c.expect_family(TEXTCNN_FAMILY)?;
        let corrupt = |e: serde_json::Error| CheckpointError::Corrupt(e.to_string());
        let config: TextCnnConfig = serde_json::from_value(c.header.config.clone()).map_err(corrupt)?;
        let words: Vec<String> = serde_json::from_value(c.header.extra["words"].clone()).map_err(corrupt)?;
        let (shape, data) = c.tensor("embeddings")?;
        if shape.len() != 2 || shape[0] != words.len() {
            return Err(CheckpointError::Corrupt("embedding table shape".into()).into());
        }
        let vectors = Array2::from_shape_vec((shape[0], shape[1]), data.to_vec()).expect("shape checked");
        let emb = StaticEmbeddings::new(words, vectors).map_err(|e| ModelError::Other(e.to_string()))?;
        let mut m = TextCnn::new(config, Arc::new(emb), segmenter)?;
        let names = m.head.names();
        for ((name, shape), dst) in names.into_iter().zip(m.head.tensors_mut()) {
            dst.copy_from_slice(c.tensor_shaped(&name, &shape)?);
        }
        Ok(m)
    }
}

impl StancePredictor for TextCnn {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
        self.predict_text(&b.target().text)
    }
}

impl Trainable for TextCnn {
    type Input = TargetRepresentation;

    fn prepare(&self, b: &SubBranch) -> Result<TargetRepresentation, ModelError> {
        self.represent(&b.target().text)
    }

    fn predict_input(&self, x: &TargetRepresentation) -> Result<StanceDistribution, ModelError> {
        Ok(head_forward(&self.head, x, None)?.probs)
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        vec![ParamGroup::Head; self.head.tensors().len()]
    }

    fn parameters(&self) -> Vec<&[f64]> {
        self.head.tensors()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.head.tensors_mut()
    }

    fn gradient(
        &self,
        x: &TargetRepresentation,
        gold: Stance,
        rng: &mut dyn RngCore,
        grads: &mut [Vec<f64>],
    ) -> Result<f64, ModelError> {
        let fwd = head_forward(&self.head, x, Some((self.config.dropout, rng)))?;
        let mut g = self.head.zeros_like();
        head_backward(&self.head, x, &fwd, gold, &mut g);
        for (dst, src) in grads.iter_mut().zip(g.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        Ok(cross_entropy(&fwd.probs, gold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::FallbackSegmenter;

    fn model() -> TextCnn {
        let emb = StaticEmbeddings::random(&["讚", "好", "抵", "制"], 6, 1);
        TextCnn::new(TextCnnConfig::default(), Arc::new(emb), Arc::new(FallbackSegmenter)).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let mut m = model();
        m.head.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        let p = m.predict_text("讚好").unwrap();
        assert!(p.probs.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn padding_is_sixty_four_rows() {
        let m = model();
        let long: String = "讚".repeat(100);
        let r = m.represent(&long).unwrap();
        assert_eq!((r.d(), r.valid_rows), (64, 64));
        let r = m.represent("讚好").unwrap();
        assert_eq!((r.d(), r.valid_rows), (64, 2));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let back = TextCnn::from_checkpoint(&m.to_checkpoint(), Arc::new(FallbackSegmenter)).unwrap();
        assert_eq!(back.predict_text("抵制 好").unwrap(), m.predict_text("抵制 好").unwrap());
    }
}

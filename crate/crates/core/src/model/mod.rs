//! The stance head: convolutional features over the target's token
//! vectors followed by a softmax classifier, plus the two ablations.

mod cfe;

pub use cfe::{
    classify, classify_backward, classify_forward, conv_backward, conv_features, conv_forward, cross_entropy,
    dropout_mask, global_average_pool, Classifier, ConvBank, ConvTrace,
};

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::encoder::{
    budget, build_encoder, concat_subbranch, encode_target, scatter_target_grad, EncoderError, EncoderHandle,
    EncoderSpec, HeadTailSummarizer, Summarizer, TargetRepresentation, TokenId, TokenizedBranch,
};
use crate::stance::{Stance, StanceDistribution, NUM_CLASSES};
use crate::thread::{ContextLimit, SubBranch, ThreadError};
use crate::train::{ParamGroup, StancePredictor, Trainable};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Thread(#[from] ThreadError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Sub-branch context and convolutional features.
    Full,
    /// The target instance alone.
    NoSr,
    /// Average-pooled encoder output straight into the classifier.
    NoCfe,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "branch" => Ok(Variant::Full),
            "no_sr" | "no-sr" => Ok(Variant::NoSr),
            "no_cfe" | "no-cfe" => Ok(Variant::NoCfe),
            _ => Err(format!("unknown variant `{s}` (expected full, no_sr or no_cfe)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    /// Rows of the target representation after padding or cutting.
    pub d: usize,
    pub dropout: f64,
    pub context_k: ContextLimit,
    pub encoder_spec: EncoderSpec,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            filter_sizes: vec![2, 3, 4],
            filters_per_size: 32,
            d: 64,
            dropout: 0.5,
            context_k: ContextLimit::Unbounded,
            encoder_spec: EncoderSpec::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.variant != Variant::NoCfe {
            if self.filter_sizes.is_empty() || self.filters_per_size == 0 {
                return bad("need at least one filter".into());
            }
            if let Some(&k) = self.filter_sizes.iter().find(|&&k| k == 0 || k > self.d) {
                return bad(format!("filter size {k} outside 1..={}", self.d));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.encoder_spec.max_input_tokens < 2 {
            return bad("max_input_tokens must be at least 2".into());
        }
        Ok(())
    }

    /// Feature length `p` fed to the classifier.
    pub fn feature_len(&self, hidden: usize) -> usize {
        match self.variant {
            Variant::NoCfe => hidden,
            _ => self.filters_per_size * self.filter_sizes.len(),
        }
    }

    /// Context limit actually applied; the no-context ablation forces zero.
    pub fn effective_context(&self) -> ContextLimit {
        match self.variant {
            Variant::NoSr => ContextLimit::Ancestors(0),
            _ => self.context_k,
        }
    }
}

/// Trainable head parameters. `banks` is empty for the no-CFE variant.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub banks: Vec<ConvBank>,
    pub classifier: Classifier,
}

impl HeadParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, hidden: usize, rng: &mut impl Rng) -> HeadParams {
        let mut fill = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a);
            (0..n).map(|_| rng.sample(u)).collect()
        };
        let banks: Vec<ConvBank> = if cfg.variant == Variant::NoCfe {
            Vec::new()
        } else {
            cfg.filter_sizes
                .iter()
                .map(|&k| {
                    let n = cfg.filters_per_size;
                    let w = fill(k * hidden, n, n * k * hidden);
                    ConvBank {
                        weights: Array3::from_shape_vec((n, k, hidden), w).expect("shape"),
                        bias: Array1::zeros(n),
                    }
                })
                .collect()
        };
        let p = cfg.feature_len(hidden);
        let w = fill(p, NUM_CLASSES, NUM_CLASSES * p);
        HeadParams {
            banks,
            classifier: Classifier {
                w: Array2::from_shape_vec((NUM_CLASSES, p), w).expect("shape"),
                b: Array1::zeros(NUM_CLASSES),
            },
        }
    }

    pub fn zeros_like(&self) -> HeadParams {
        HeadParams {
            banks: self.banks.iter().map(|b| ConvBank::zeros(b.n(), b.k(), b.h())).collect(),
            classifier: Classifier::zeros(self.classifier.input_len()),
        }
    }

    /// Flat views in a fixed order: each bank's weights then bias, then
    /// classifier weights and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.banks {
            out.push(b.weights.as_slice().expect("standard layout"));
            out.push(b.bias.as_slice().expect("standard layout"));
        }
        out.push(self.classifier.w.as_slice().expect("standard layout"));
        out.push(self.classifier.b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.banks {
            out.push(b.weights.as_slice_mut().expect("standard layout"));
            out.push(b.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.classifier.w.as_slice_mut().expect("standard layout"));
        out.push(self.classifier.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for b in &self.banks {
            out.push((format!("conv{}.weight", b.k()), b.weights.shape().to_vec()));
            out.push((format!("conv{}.bias", b.k()), b.bias.shape().to_vec()));
        }
        out.push(("classifier.weight".into(), self.classifier.w.shape().to_vec()));
        out.push(("classifier.bias".into(), self.classifier.b.shape().to_vec()));
        out
    }
}

/// Intermediate values of one head forward pass.
#[derive(Debug, Clone)]
pub struct HeadForward {
    pub features: Array1<f64>,
    pub trace: Option<ConvTrace>,
    pub mask: Option<Array1<f64>>,
    pub zhat: Array1<f64>,
    pub probs: StanceDistribution,
}

/// Features then classifier on a target representation.
pub fn head_forward(
    params: &HeadParams,
    rep: &TargetRepresentation,
    dropout: Option<(f64, &mut dyn RngCore)>,
) -> Result<HeadForward, ModelError> {
    let (features, trace) = if params.banks.is_empty() {
        (global_average_pool(rep.matrix.view(), rep.valid_rows), None)
    } else {
        let (z, t) = conv_forward(rep.matrix.view(), &params.banks)?;
        (z, Some(t))
    };
    let mask = dropout.map(|(rate, rng)| dropout_mask(features.len(), rate, rng));
    let (probs, zhat) = classify_forward(features.view(), &params.classifier, mask.as_ref())?;
    Ok(HeadForward { features, trace, mask, zhat, probs })
}

/// Cross-entropy gradients of the head; returns `dL/drep` (d × h).
pub fn head_backward(
    params: &HeadParams,
    rep: &TargetRepresentation,
    fwd: &HeadForward,
    gold: Stance,
    grad: &mut HeadParams,
) -> Array2<f64> {
    let dz =
        classify_backward(&fwd.zhat, fwd.mask.as_ref(), &fwd.probs, gold, &params.classifier, &mut grad.classifier);
    let mut drep = Array2::zeros(rep.matrix.dim());
    match &fwd.trace {
        Some(trace) => {
            conv_backward(rep.matrix.view(), &params.banks, trace, dz.view(), &mut grad.banks, Some(&mut drep))
        }
        None => {
            let valid = rep.valid_rows.min(drep.nrows());
            if valid > 0 {
                let share = &dz / valid as f64;
                for r in 0..valid {
                    drep.row_mut(r).assign(&share);
                }
            }
        }
    }
    drep
}

/// Sub-branch encoder plus stance head.
#[derive(Clone)]
pub struct StanceModel {
    config: ModelConfig,
    encoder: EncoderHandle,
    head: HeadParams,
    summarizer: Arc<dyn Summarizer>,
}

impl std::fmt::Debug for StanceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StanceModel")
            .field("config", &self.config)
            .field("encoder", &self.encoder)
            .field("summarizer", &self.summarizer.name())
            .finish()
    }
}

pub const FAMILY: &str = "branch";

impl StanceModel {
    pub fn new(config: ModelConfig, encoder: EncoderHandle) -> Result<StanceModel, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let head = HeadParams::init(&config, encoder.get().hidden_size(), &mut rng);
        Ok(StanceModel { config, encoder, head, summarizer: Arc::new(HeadTailSummarizer) })
    }

    /// The context-free encoder baseline: target alone, average pooling.
    pub fn finetuned_encoder_baseline(encoder: EncoderHandle, init_seed: u64) -> Result<StanceModel, ModelError> {
        let config = ModelConfig {
            variant: Variant::NoCfe,
            context_k: ContextLimit::Ancestors(0),
            init_seed,
            ..ModelConfig::default()
        };
        StanceModel::new(config, encoder)
    }

    pub fn with_summarizer(mut self, s: Arc<dyn Summarizer>) -> StanceModel {
        self.summarizer = s;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &EncoderHandle {
        &self.encoder
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut HeadParams {
        &mut self.head
    }

    pub fn mask_id(&self) -> TokenId {
        self.encoder.get().mask_id()
    }

    /// Context slice, separator join and length budget.
    pub fn prepare(&self, b: &SubBranch) -> Result<TokenizedBranch, ModelError> {
        let b = b.partial(self.config.effective_context());
        let tb = concat_subbranch(&b, &self.encoder)?;
        Ok(budget(tb, self.summarizer.as_ref(), &self.config.encoder_spec, &self.encoder)?)
    }

    pub fn represent(&self, tb: &TokenizedBranch) -> Result<TargetRepresentation, ModelError> {
        Ok(encode_target(tb, &self.encoder, self.config.d)?)
    }

    /// Inference on an already tokenized branch (no dropout).
    pub fn predict_tokenized(&self, tb: &TokenizedBranch) -> Result<StanceDistribution, ModelError> {
        let rep = self.represent(tb)?;
        Ok(head_forward(&self.head, &rep, None)?.probs)
    }

    /// Predicted label (ties to the earliest class) and its distribution.
    pub fn predict(&self, b: &SubBranch) -> Result<(Stance, StanceDistribution), ModelError> {
        let p = self.predict_tokenized(&self.prepare(b)?)?;
        Ok((p.label(), p))
    }

    fn encoder_trainable(&self) -> bool {
        !self.encoder.get().parameters().is_empty()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(FAMILY, serde_json::to_value(&self.config).expect("config serializes"));
        c.header.encoder = Some(self.encoder.get().descriptor());
        c.header.hidden_size = Some(self.encoder.get().hidden_size());
        c.header.extra = serde_json::json!({ "summarizer": self.summarizer.name() });
        for ((name, shape), data) in self.head.names().into_iter().zip(self.head.tensors()) {
            c.push(&name, &shape, data);
        }
        for (i, p) in self.encoder.get().parameters().into_iter().enumerate() {
            c.push(&format!("encoder.{i}"), &[p.len()], p);
        }
        c
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Rebuild the encoder named in the checkpoint and restore all weights.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<StanceModel, ModelError> {
        let desc = c.header.encoder.clone().ok_or_else(|| CheckpointError::Corrupt("no encoder descriptor".into()))?;
        let enc = EncoderHandle::new(build_encoder(&desc)?);
        StanceModel::from_checkpoint_with_encoder(c, enc)
    }

    /// Restore onto a caller-supplied encoder; its hidden size must match.
    pub fn from_checkpoint_with_encoder(c: &Checkpoint, mut encoder: EncoderHandle) -> Result<StanceModel, ModelError> {
        c.expect_family(FAMILY)?;
        let config: ModelConfig =
            serde_json::from_value(c.header.config.clone()).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let h = encoder.get().hidden_size();
        if c.header.hidden_size != Some(h) {
            return Err(CheckpointError::VersionMismatch(format!(
                "checkpoint hidden size {:?}, encoder `{}` has {h}",
                c.header.hidden_size,
                encoder.get().name()
            ))
            .into());
        }
        let mut model = StanceModel::new(config, encoder.clone())?;
        let names = model.head.names();
        for ((name, shape), dst) in names.into_iter().zip(model.head.tensors_mut()) {
            dst.copy_from_slice(c.tensor_shaped(&name, &shape)?);
        }
        for (i, dst) in encoder.get_mut().parameters_mut().into_iter().enumerate() {
            let len = dst.len();
            dst.copy_from_slice(c.tensor_shaped(&format!("encoder.{i}"), &[len])?);
        }
        model.encoder = encoder;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<StanceModel, ModelError> {
        StanceModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl StancePredictor for StanceModel {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
        self.predict(b).map(|(_, p)| p)
    }
}

impl Trainable for StanceModel {
    type Input = TokenizedBranch;

    fn prepare(&self, b: &SubBranch) -> Result<TokenizedBranch, ModelError> {
        StanceModel::prepare(self, b)
    }

    fn predict_input(&self, x: &TokenizedBranch) -> Result<StanceDistribution, ModelError> {
        self.predict_tokenized(x)
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        let head = self.head.tensors().len();
        let enc = self.encoder.get().parameters().len();
        std::iter::repeat_n(ParamGroup::Head, head).chain(std::iter::repeat_n(ParamGroup::Encoder, enc)).collect()
    }

    fn parameters(&self) -> Vec<&[f64]> {
        let mut out = self.head.tensors();
        out.extend(self.encoder.get().parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.head.tensors_mut();
        out.extend(self.encoder.get_mut().parameters_mut());
        out
    }

    fn gradient(
        &self,
        x: &TokenizedBranch,
        gold: Stance,
        rng: &mut dyn RngCore,
        grads: &mut [Vec<f64>],
    ) -> Result<f64, ModelError> {
        let rep = self.represent(x)?;
        let fwd = head_forward(&self.head, &rep, Some((self.config.dropout, rng)))?;
        let mut g = self.head.zeros_like();
        let drep = head_backward(&self.head, &rep, &fwd, gold, &mut g);
        let n_head = g.tensors().len();
        for (dst, src) in grads[..n_head].iter_mut().zip(g.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        if self.encoder_trainable() {
            let full = scatter_target_grad(x, drep.view(), rep.valid_rows);
            self.encoder.get().backward(&x.ids, full.view(), &mut grads[n_head..])?;
        }
        Ok(cross_entropy(&fwd.probs, gold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ContextMixConfig, ContextMixEncoder};
    use crate::synthetic::demo_thread;

    fn encoder(h: usize) -> EncoderHandle {
        let cfg = ContextMixConfig { hidden_size: h, vocab_buckets: 512, ..ContextMixConfig::default() };
        EncoderHandle::new(Box::new(ContextMixEncoder::new(cfg).unwrap()))
    }

    fn small(variant: Variant) -> StanceModel {
        let cfg = ModelConfig { variant, filters_per_size: 4, d: 16, ..ModelConfig::default() };
        StanceModel::new(cfg, encoder(8)).unwrap()
    }

    #[test]
    fn no_sr_ignores_context() {
        let t = demo_thread();
        let m = small(Variant::NoSr);
        let b = t.sub_branch("c4").unwrap();
        let alone = SubBranch::new(vec![b.target().clone()]).unwrap();
        assert_eq!(m.predict(&b).unwrap(), m.predict(&alone).unwrap());
    }

    #[test]
    fn full_model_sees_context() {
        let t = demo_thread();
        let m = small(Variant::Full);
        let b = t.sub_branch("c4").unwrap();
        let alone = SubBranch::new(vec![b.target().clone()]).unwrap();
        assert_ne!(m.predict(&b).unwrap().1, m.predict(&alone).unwrap().1);
    }

    #[test]
    fn baseline_equals_no_sr_no_cfe() {
        let t = demo_thread();
        let a = StanceModel::finetuned_encoder_baseline(encoder(8), 3).unwrap();
        let cfg = ModelConfig {
            variant: Variant::NoCfe,
            context_k: ContextLimit::Ancestors(0),
            init_seed: 3,
            ..Default::default()
        };
        let b = StanceModel::new(cfg, encoder(8)).unwrap();
        for n in t.preorder() {
            let sb = t.sub_branch(&n.instance_id).unwrap();
            assert_eq!(a.predict(&sb).unwrap(), b.predict(&sb).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip_predictions() {
        let t = demo_thread();
        let m = small(Variant::Full);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bstk");
        m.save(&p).unwrap();
        let back = StanceModel::load(&p).unwrap();
        for n in t.preorder() {
            let sb = t.sub_branch(&n.instance_id).unwrap();
            assert_eq!(m.predict(&sb).unwrap(), back.predict(&sb).unwrap());
        }
    }

    #[test]
    fn hidden_size_mismatch() {
        let m = small(Variant::Full);
        let c = m.to_checkpoint();
        let err = StanceModel::from_checkpoint_with_encoder(&c, encoder(16)).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(CheckpointError::VersionMismatch(_))));
    }

    #[test]
    fn config_rejects_oversized_filter() {
        let cfg = ModelConfig { d: 3, ..ModelConfig::default() };
        assert!(matches!(StanceModel::new(cfg, encoder(8)), Err(ModelError::Config(_))));
    }
}

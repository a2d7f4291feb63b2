use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ngram::{NgramSpec, NgramVectorizer, SparseVec};
use super::segment::{FallbackSegmenter, Segmenter};
use super::BaselineError;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::model::ModelError;
use crate::stance::{Stance, StanceDistribution, NUM_CLASSES};
use crate::thread::SubBranch;
use crate::train::{macro_f1, StancePredictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub ngrams: NgramSpec,
    /// Candidate regularisation constants tried by cross-validation.
    pub cs: Vec<f64>,
    pub folds: usize,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            ngrams: NgramSpec::default(),
            cs: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            folds: 5,
            max_epochs: 1000,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// A linear binary classifier `w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBinary {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearBinary {
    pub fn decision(&self, x: &SparseVec) -> f64 {
        x.iter().map(|(i, v)| self.w[*i] * v).sum::<f64>() + self.b
    }
}

/// L2-regularised hinge-loss SVM by dual coordinate descent.
///
/// The bias is learned as the weight of a constant feature equal to 1, so
/// it is regularised together with `w`. `ys` are `+1` or `-1`.
pub fn train_binary(
    xs: &[SparseVec],
    ys: &[f64],
    dim: usize,
    c: f64,
    max_epochs: usize,
    tol: f64,
    seed: u64,
) -> LinearBinary {
    let n = xs.len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = xs.iter().map(|x| x.iter().map(|(_, v)| v * v).sum::<f64>() + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let y = ys[i];
            let g = y * (xs[i].iter().map(|(j, v)| w[*j] * v).sum::<f64>() + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y;
                for (j, v) in &xs[i] {
                    w[*j] += delta * v;
                }
                b += delta;
            }
        }
        if pg_max - pg_min < tol {
            break;
        }
    }
    LinearBinary { w, b }
}

/// One-vs-rest linear SVM over word and character n-grams of the target
/// instance text.
#[derive(Clone)]
pub struct SvmBaseline {
    pub vectorizer: NgramVectorizer,
    pub classifiers: Vec<LinearBinary>,
    pub c: f64,
    pub config: SvmConfig,
    segmenter: Arc<dyn Segmenter>,
}

impl std::fmt::Debug for SvmBaseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SvmBaseline").field("features", &self.vectorizer.len()).field("c", &self.c).finish()
    }
}

pub const SVM_FAMILY: &str = "svm";

fn fit_ovr(xs: &[SparseVec], ys: &[Stance], dim: usize, c: f64, cfg: &SvmConfig) -> Vec<LinearBinary> {
    (0..NUM_CLASSES)
        .map(|k| {
            let yk: Vec<f64> = ys.iter().map(|y| if y.index() == k { 1.0 } else { -1.0 }).collect();
            train_binary(xs, &yk, dim, c, cfg.max_epochs, cfg.tolerance, cfg.seed + k as u64)
        })
        .collect()
}

fn scores(cls: &[LinearBinary], x: &SparseVec) -> [f64; NUM_CLASSES] {
    let mut s = [0.0; NUM_CLASSES];
    for (k, c) in cls.iter().enumerate() {
        s[k] = c.decision(x);
    }
    s
}

impl SvmBaseline {
    /// Build the vocabulary on `texts`, choose `C` by k-fold cross-validation
    /// (ties to the smaller `C`), then refit on everything.
    pub fn fit(
        texts: &[&str],
        labels: &[Stance],
        cfg: SvmConfig,
        segmenter: Arc<dyn Segmenter>,
    ) -> Result<SvmBaseline, BaselineError> {
        if texts.is_empty() {
            return Err(BaselineError::EmptyTrainSet);
        }
        let vectorizer = NgramVectorizer::fit(texts.iter().copied(), cfg.ngrams.clone(), segmenter.as_ref())?;
        let xs: Vec<SparseVec> =
            texts.iter().map(|t| vectorizer.transform(t, segmenter.as_ref())).collect::<Result<_, _>>()?;
        let dim = vectorizer.len();
        let c = select_c(&xs, labels, dim, &cfg);
        let classifiers = fit_ovr(&xs, labels, dim, c, &cfg);
        Ok(SvmBaseline { vectorizer, classifiers, c, config: cfg, segmenter })
    }

    pub fn fit_dataset(
        ds: &crate::ingest::Dataset,
        cfg: SvmConfig,
        segmenter: Arc<dyn Segmenter>,
    ) -> Result<SvmBaseline, BaselineError> {
        let ex = ds.examples();
        let texts: Vec<&str> = ex.iter().map(|e| e.branch.target().text.as_str()).collect();
        let labels: Vec<Stance> = ex.iter().map(|e| e.label).collect();
        SvmBaseline::fit(&texts, &labels, cfg, segmenter)
    }

    pub fn decision_scores(&self, text: &str) -> Result<[f64; NUM_CLASSES], BaselineError> {
        let x = self.vectorizer.transform(text, self.segmenter.as_ref())?;
        Ok(scores(&self.classifiers, &x))
    }

    /// Softmax over the decision values; a ranking, not a calibrated probability.
    pub fn predict_text(&self, text: &str) -> Result<StanceDistribution, BaselineError> {
        Ok(StanceDistribution::from_logits(self.decision_scores(text)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(SVM_FAMILY, serde_json::to_value(&self.config).expect("serializes"));
        c.header.extra = serde_json::json!({
            "c": self.c,
            "segmenter": self.segmenter.name(),
            "segmenter_spec": self.segmenter.spec(),
            "vectorizer": self.vectorizer,
        });
        let dim = self.vectorizer.len();
        for (k, cls) in self.classifiers.iter().enumerate() {
            c.push(&format!("ovr{k}.weight"), &[dim], &cls.w);
            c.push(&format!("ovr{k}.bias"), &[1], &[cls.b]);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, segmenter: Arc<dyn Segmenter>) -> Result<SvmBaseline, CheckpointError> {
        c.expect_family(SVM_FAMILY)?;
        let corrupt = |e: serde_json::Error| CheckpointError::Corrupt(e.to_string());
        let config: SvmConfig = serde_json::from_value(c.header.config.clone()).map_err(corrupt)?;
        let vectorizer: NgramVectorizer =
            serde_json::from_value(c.header.extra["vectorizer"].clone()).map_err(corrupt)?;
        let cval = c.header.extra["c"].as_f64().ok_or_else(|| CheckpointError::Corrupt("missing C".into()))?;
        let dim = vectorizer.len();
        let classifiers = (0..NUM_CLASSES)
            .map(|k| {
                Ok(LinearBinary {
                    w: c.tensor_shaped(&format!("ovr{k}.weight"), &[dim])?.to_vec(),
                    b: c.tensor_shaped(&format!("ovr{k}.bias"), &[1])?[0],
                })
            })
            .collect::<Result<_, CheckpointError>>()?;
        Ok(SvmBaseline { vectorizer, classifiers, c: cval, config, segmenter })
    }

    pub fn with_fallback_segmenter(c: &Checkpoint) -> Result<SvmBaseline, CheckpointError> {
        SvmBaseline::from_checkpoint(c, Arc::new(FallbackSegmenter))
    }
}

fn select_c(xs: &[SparseVec], ys: &[Stance], dim: usize, cfg: &SvmConfig) -> f64 {
    let folds = cfg.folds.min(xs.len());
    if cfg.cs.len() == 1 || folds < 2 {
        return cfg.cs.first().copied().unwrap_or(1.0);
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut best = (f64::NEG_INFINITY, cfg.cs[0]);
    let mut cs = cfg.cs.clone();
    cs.sort_by(f64::total_cmp);
    for &c in &cs {
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for f in 0..folds {
            let (mut tx, mut ty) = (Vec::new(), Vec::new());
            let mut held = Vec::new();
            for (pos, &i) in idx.iter().enumerate() {
                if pos % folds == f {
                    held.push(i);
                } else {
                    tx.push(xs[i].clone());
                    ty.push(ys[i]);
                }
            }
            let cls = fit_ovr(&tx, &ty, dim, c, cfg);
            for i in held {
                golds.push(ys[i]);
                preds.push(StanceDistribution::from_logits(scores(&cls, &xs[i])).label());
            }
        }
        let f1 = macro_f1(&golds, &preds).unwrap_or(0.0);
        log::debug!("svm C={c}: cross-validated macro-F1 {f1:.4}");
        if f1 > best.0 {
            best = (f1, c);
        }
    }
    best.1
}

impl StancePredictor for SvmBaseline {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
        self.predict_text(&b.target().text).map_err(|e| ModelError::Other(e.to_string()))
    }
}

//! Training with early stopping, evaluation by macro-F1 overall and per
//! depth, repeated runs and the partial-context sweep.

mod eval;
mod metrics;
mod optim;

pub use eval::{
    evaluate, partial_context_sweep, run_experiment, BucketScore, EvalReport, EvalRun, MeanStd, SweepEntry,
};
pub use metrics::{confusion, macro_f1, per_class_f1, Confusion, MetricError};
pub use optim::{Adam, AdamConfig};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{split, Dataset, Example, Granularity, SplitSpec};
use crate::model::ModelError;
use crate::stance::{Stance, StanceDistribution};
use crate::thread::SubBranch;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set has no labeled instances")]
    EmptyTrainSet,
    #[error("test set has no labeled instances")]
    EmptyTestSet,
    #[error("non-finite loss {loss} at batch {batch}")]
    NonFiniteLoss { batch: usize, loss: f64 },
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training log {path}: {source}")]
    Log { path: PathBuf, source: std::io::Error },
}

/// Learning-rate group of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Head,
}

/// Anything that maps a sub-branch to a stance distribution.
pub trait StancePredictor: Send + Sync {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError>;
}

impl<P: StancePredictor + ?Sized> StancePredictor for Box<P> {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
        (**self).predict_branch(b)
    }
}

/// A model trained by gradient descent.
///
/// `prepare` turns a sub-branch into whatever the model consumes and must
/// not depend on trainable parameters, so inputs are prepared once.
/// Parameters are exposed as flat tensors; `gradient` adds `dL/dθ` for one
/// example into `grads` (same order) and returns its loss.
pub trait Trainable: StancePredictor {
    type Input: Send + Sync;

    fn prepare(&self, b: &SubBranch) -> Result<Self::Input, ModelError>;

    fn predict_input(&self, x: &Self::Input) -> Result<StanceDistribution, ModelError>;

    fn param_groups(&self) -> Vec<ParamGroup>;

    fn parameters(&self) -> Vec<&[f64]>;

    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;

    fn gradient(
        &self,
        x: &Self::Input,
        gold: Stance,
        rng: &mut dyn RngCore,
        grads: &mut [Vec<f64>],
    ) -> Result<f64, ModelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience_batches: usize,
    pub eval_every_batches: usize,
    /// Thread-level share of the training set held out for early stopping.
    pub dev_fraction: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Hard cap on batches regardless of early stopping.
    pub max_batches: usize,
    /// Accumulate per-example gradients in a fixed order. When false they
    /// are summed in parallel, which is faster but not bit-reproducible.
    pub deterministic: bool,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder_lr: 1e-5,
            head_lr: 1e-4,
            adam: AdamConfig::default(),
            batch_size: 16,
            patience_batches: 500,
            eval_every_batches: 50,
            dev_fraction: 0.1,
            repetitions: 10,
            seed: 0,
            max_batches: 20_000,
            deterministic: true,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_every_batches == 0 {
            return bad("eval_every_batches must be positive");
        }
        if self.patience_batches < self.eval_every_batches {
            return bad("patience_batches must be at least eval_every_batches");
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad("dev_fraction must lie in [0, 1)");
        }
        if self.encoder_lr < 0.0 || self.head_lr < 0.0 {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub batch: usize,
    pub dev_f1: f64,
    /// Mean training loss over the batches since the previous evaluation.
    pub loss: f64,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// Number of batches run.
    pub batches: usize,
    pub early_stopped: bool,
    pub best_batch: Option<usize>,
    pub best_dev_f1: Option<f64>,
}

/// Carve a dev set from `ds` at thread level and train on the rest.
pub fn train<M: Trainable>(model: &mut M, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainLog, TrainError> {
    let (fit, dev) = if cfg.dev_fraction > 0.0 && ds.threads.len() > 1 {
        let spec =
            SplitSpec { train_fraction: 1.0 - cfg.dev_fraction, seed: cfg.seed, granularity: Granularity::Thread };
        split(ds, &spec)
    } else {
        (ds.clone(), Dataset::empty())
    };
    let fit = fit.examples();
    let mut dev = dev.examples();
    if dev.is_empty() {
        log::warn!("dev split is empty; early stopping monitors the training set");
        dev = fit.clone();
    }
    train_on(model, &fit, &dev, cfg)
}

/// Train on `fit`, monitoring macro-F1 on `dev`. The model is left holding
/// the parameters of the best evaluation.
pub fn train_on<M: Trainable>(
    model: &mut M,
    fit: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if fit.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let prep = |xs: &[Example]| -> Result<Vec<(M::Input, Stance)>, ModelError> {
        xs.par_iter().map(|e| Ok((model.prepare(&e.branch)?, e.label))).collect()
    };
    let fit_inputs = prep(fit)?;
    let dev_inputs = prep(dev)?;
    let groups = model.param_groups();
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.adam, cfg.encoder_lr, cfg.head_lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..fit_inputs.len()).collect();
    let mut log_file = match &cfg.log_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| TrainError::Log { path: p.clone(), source })?,
        ),
        None => None,
    };

    let mut out =
        TrainLog { records: Vec::new(), batches: 0, early_stopped: false, best_batch: None, best_dev_f1: None };
    let mut best: Option<Vec<Vec<f64>>> = None;
    let mut loss_acc = 0.0;
    let mut loss_n = 0usize;
    let mut batch = 0usize;
    let mut example_counter = 0u64;

    'epochs: while batch < cfg.max_batches {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch += 1;
            let first = example_counter;
            example_counter += chunk.len() as u64;
            let per_example = |pos: usize, grads: &mut [Vec<f64>]| -> Result<f64, ModelError> {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(first + pos as u64);
                let (x, y) = &fit_inputs[chunk[pos]];
                model.gradient(x, *y, &mut rng, grads)
            };
            let zero = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
            let (mut grads, loss) = if cfg.deterministic {
                let mut g = zero();
                let mut loss = 0.0;
                for pos in 0..chunk.len() {
                    loss += per_example(pos, &mut g)?;
                }
                (g, loss)
            } else {
                (0..chunk.len())
                    .into_par_iter()
                    .try_fold(|| (zero(), 0.0), |(mut g, l), pos| per_example(pos, &mut g).map(|x| (g, l + x)))
                    .try_reduce(
                        || (zero(), 0.0),
                        |(mut a, la), (b, lb)| {
                            for (x, y) in a.iter_mut().zip(&b) {
                                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
                            }
                            Ok((a, la + lb))
                        },
                    )?
            };
            let scale = 1.0 / chunk.len() as f64;
            let loss = loss * scale;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { batch, loss });
            }
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= scale));
            adam.step(model.parameters_mut(), &groups, &grads);
            loss_acc += loss;
            loss_n += 1;

            if batch.is_multiple_of(cfg.eval_every_batches) {
                let dev_f1 = dev_macro_f1(model, &dev_inputs)?;
                let rec = LogRecord {
                    batch,
                    dev_f1,
                    loss: loss_acc / loss_n as f64,
                    timestamp: chrono::Utc::now().to_rfc3339(),
                };
                loss_acc = 0.0;
                loss_n = 0;
                if let (Some(f), Some(p)) = (log_file.as_mut(), cfg.log_path.as_ref()) {
                    let line = serde_json::to_string(&rec).expect("record serializes");
                    writeln!(f, "{line}").map_err(|source| TrainError::Log { path: p.clone(), source })?;
                }
                log::debug!("batch {batch}: dev macro-F1 {dev_f1:.4}, loss {:.4}", rec.loss);
                out.records.push(rec);
                if out.best_dev_f1.is_none_or(|b| dev_f1 > b) {
                    out.best_dev_f1 = Some(dev_f1);
                    out.best_batch = Some(batch);
                    best = Some(model.parameters().iter().map(|p| p.to_vec()).collect());
                }
                if batch - out.best_batch.unwrap_or(0) >= cfg.patience_batches {
                    out.early_stopped = true;
                    break 'epochs;
                }
            }
            if batch >= cfg.max_batches {
                break 'epochs;
            }
        }
    }
    out.batches = batch;
    if let Some(best) = best {
        for (p, b) in model.parameters_mut().into_iter().zip(best) {
            p.copy_from_slice(&b);
        }
    }
    Ok(out)
}

fn dev_macro_f1<M: Trainable>(model: &M, dev: &[(M::Input, Stance)]) -> Result<f64, TrainError> {
    let preds: Vec<Stance> =
        dev.par_iter().map(|(x, _)| model.predict_input(x).map(|p| p.label())).collect::<Result<_, _>>()?;
    let golds: Vec<Stance> = dev.iter().map(|(_, y)| *y).collect();
    Ok(macro_f1(&golds, &preds)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_corpus, PlantedConfig};

    /// One parameter, constant output.
    #[derive(Clone)]
    struct Constant {
        w: Vec<f64>,
    }

    impl StancePredictor for Constant {
        fn predict_branch(&self, _: &SubBranch) -> Result<StanceDistribution, ModelError> {
            Ok(StanceDistribution::from_logits([1.0, 0.0, 0.0]))
        }
    }

    impl Trainable for Constant {
        type Input = ();
        fn prepare(&self, _: &SubBranch) -> Result<(), ModelError> {
            Ok(())
        }
        fn predict_input(&self, _: &()) -> Result<StanceDistribution, ModelError> {
            Ok(StanceDistribution::from_logits([1.0, 0.0, 0.0]))
        }
        fn param_groups(&self) -> Vec<ParamGroup> {
            vec![ParamGroup::Head]
        }
        fn parameters(&self) -> Vec<&[f64]> {
            vec![&self.w]
        }
        fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.w]
        }
        fn gradient(&self, _: &(), _: Stance, _: &mut dyn RngCore, g: &mut [Vec<f64>]) -> Result<f64, ModelError> {
            g[0][0] += 1.0;
            Ok(1.0)
        }
    }

    fn examples() -> Vec<Example> {
        planted_corpus(&PlantedConfig { threads: 4, ..Default::default() }, 0).examples()
    }

    #[test]
    fn constant_dev_stops_patience_after_first_eval() {
        let ex = examples();
        let mut m = Constant { w: vec![0.0] };
        let log = train_on(&mut m, &ex, &ex, &TrainConfig::default()).unwrap();
        assert!(log.early_stopped);
        assert_eq!(log.batches, 550);
        assert_eq!(log.records.len(), 11);
        assert_eq!(log.best_batch, Some(50));
    }

    #[test]
    fn zero_learning_rates_freeze_parameters() {
        let ex = examples();
        let mut m = Constant { w: vec![0.25] };
        let cfg = TrainConfig { encoder_lr: 0.0, head_lr: 0.0, max_batches: 30, ..Default::default() };
        train_on(&mut m, &ex, &ex, &cfg).unwrap();
        assert_eq!(m.w, [0.25]);
    }

    #[test]
    fn empty_train_set() {
        let mut m = Constant { w: vec![0.0] };
        assert!(matches!(train_on(&mut m, &[], &[], &TrainConfig::default()), Err(TrainError::EmptyTrainSet)));
    }

    #[test]
    fn log_file_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let ex = examples();
        let mut m = Constant { w: vec![0.0] };
        let cfg = TrainConfig { max_batches: 120, log_path: Some(path.clone()), ..Default::default() };
        train_on(&mut m, &ex, &ex, &cfg).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let recs: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.iter().map(|r| r.batch).collect::<Vec<_>>(), [50, 100]);
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig { patience_batches: 10, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    }
}

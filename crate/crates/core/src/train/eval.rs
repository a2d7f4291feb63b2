use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{confusion, macro_f1, Confusion, StancePredictor, TrainConfig, TrainError};
use crate::ingest::Dataset;
use crate::stance::Stance;
use crate::thread::{ContextLimit, DepthBucket};

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        let n = xs.len();
        if n == 0 {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std =
            if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        MeanStd { mean, std }
    }
}

/// Outcome of scoring one trained model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub macro_f1: f64,
    /// Only buckets holding at least one test instance appear.
    pub per_bucket: BTreeMap<DepthBucket, f64>,
    pub bucket_counts: BTreeMap<DepthBucket, usize>,
    pub confusion: Confusion,
    pub instances: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub macro_f1: MeanStd,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1_overall: MeanStd,
    pub per_bucket: BTreeMap<DepthBucket, BucketScore>,
    /// From the last repetition.
    pub confusion: Confusion,
    pub repetitions: usize,
    pub runtime_s: f64,
    pub runs: Vec<EvalRun>,
}

impl EvalReport {
    pub fn from_runs(runs: Vec<EvalRun>) -> EvalReport {
        let overall: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
        let mut buckets: BTreeMap<DepthBucket, (Vec<f64>, usize)> = BTreeMap::new();
        for r in &runs {
            for (b, f) in &r.per_bucket {
                let e = buckets.entry(*b).or_default();
                e.0.push(*f);
                e.1 = r.bucket_counts[b];
            }
        }
        EvalReport {
            macro_f1_overall: MeanStd::of(&overall),
            per_bucket: buckets
                .into_iter()
                .map(|(b, (fs, count))| (b, BucketScore { macro_f1: MeanStd::of(&fs), count }))
                .collect(),
            confusion: runs.last().map(|r| r.confusion).unwrap_or_default(),
            repetitions: runs.len(),
            runtime_s: runs.iter().map(|r| r.runtime_s).sum(),
            runs,
        }
    }
}

fn score(golds: &[Stance], preds: &[Stance], depths: &[usize], started: Instant) -> Result<EvalRun, TrainError> {
    let mut groups: BTreeMap<DepthBucket, (Vec<Stance>, Vec<Stance>)> = BTreeMap::new();
    for ((g, p), d) in golds.iter().zip(preds).zip(depths) {
        let e = groups.entry(DepthBucket::of(*d)).or_default();
        e.0.push(*g);
        e.1.push(*p);
    }
    let mut per_bucket = BTreeMap::new();
    let mut bucket_counts = BTreeMap::new();
    for (b, (g, p)) in groups {
        per_bucket.insert(b, macro_f1(&g, &p)?);
        bucket_counts.insert(b, g.len());
    }
    Ok(EvalRun {
        macro_f1: macro_f1(golds, preds)?,
        per_bucket,
        bucket_counts,
        confusion: confusion(golds, preds)?,
        instances: golds.len(),
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Score one model on the labeled instances of `test`.
pub fn evaluate_run<P: StancePredictor + ?Sized>(model: &P, test: &Dataset) -> Result<EvalRun, TrainError> {
    let started = Instant::now();
    let examples = test.examples();
    if examples.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let preds: Vec<Stance> =
        examples.par_iter().map(|e| model.predict_branch(&e.branch).map(|p| p.label())).collect::<Result<_, _>>()?;
    let golds: Vec<Stance> = examples.iter().map(|e| e.label).collect();
    let depths: Vec<usize> = examples.iter().map(|e| e.depth()).collect();
    score(&golds, &preds, &depths, started)
}

/// Single-repetition report.
pub fn evaluate<P: StancePredictor + ?Sized>(model: &P, test: &Dataset) -> Result<EvalReport, TrainError> {
    Ok(EvalReport::from_runs(vec![evaluate_run(model, test)?]))
}

/// Fit and score `cfg.repetitions` times with seeds `cfg.seed + r`.
///
/// The split stays fixed; only training is reseeded. Repetitions run in
/// parallel with isolated state.
pub fn run_experiment<F, P>(
    fit: F,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<EvalReport, TrainError>
where
    F: Fn(&Dataset, &TrainConfig) -> Result<P, TrainError> + Sync,
    P: StancePredictor,
{
    let reps = cfg.repetitions.max(1);
    let runs: Vec<EvalRun> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let started = Instant::now();
            let rcfg = TrainConfig {
                seed: cfg.seed + r as u64,
                log_path: cfg.log_path.as_ref().map(|p| p.with_extension(format!("rep{r}.jsonl"))),
                ..cfg.clone()
            };
            let model = fit(train, &rcfg)?;
            let mut run = evaluate_run(&model, test)?;
            run.runtime_s = started.elapsed().as_secs_f64();
            Ok(run)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(EvalReport::from_runs(runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: ContextLimit,
    pub report: EvalReport,
}

/// Run the experiment once per context limit; `fit` receives the limit.
pub fn partial_context_sweep<F, P>(
    ks: &[ContextLimit],
    fit: F,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<SweepEntry>, TrainError>
where
    F: Fn(ContextLimit, &Dataset, &TrainConfig) -> Result<P, TrainError> + Sync,
    P: StancePredictor,
{
    ks.iter()
        .map(|&k| {
            let report = run_experiment(|d, c| fit(k, d, c), train, test, cfg)?;
            Ok(SweepEntry { k, report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelError;
    use crate::stance::StanceDistribution;
    use crate::synthetic::{planted_corpus, PlantedConfig};
    use crate::thread::SubBranch;

    struct Oracle;

    impl StancePredictor for Oracle {
        fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
            let mut logits = [0.0; 3];
            logits[b.target().label.unwrap().index()] = 5.0;
            Ok(StanceDistribution::from_logits(logits))
        }
    }

    /// Predicts by a fixed class chosen at fit time.
    struct Fixed(Stance);

    impl StancePredictor for Fixed {
        fn predict_branch(&self, _: &SubBranch) -> Result<StanceDistribution, ModelError> {
            let mut logits = [0.0; 3];
            logits[self.0.index()] = 5.0;
            Ok(StanceDistribution::from_logits(logits))
        }
    }

    fn corpus() -> Dataset {
        planted_corpus(&PlantedConfig { threads: 12, ..Default::default() }, 5)
    }

    #[test]
    fn perfect_predictor_scores_one_everywhere() {
        let ds = corpus();
        let rep = evaluate(&Oracle, &ds).unwrap();
        assert_eq!(rep.macro_f1_overall.mean, 1.0);
        // a bucket scores 1 when it holds all three classes, otherwise the
        // absent classes contribute 0
        for (bucket, score) in &rep.per_bucket {
            let present: std::collections::HashSet<Stance> =
                ds.examples().into_iter().filter(|e| DepthBucket::of(e.depth()) == *bucket).map(|e| e.label).collect();
            assert!((score.macro_f1.mean - present.len() as f64 / 3.0).abs() < 1e-12);
        }
        let n: usize = rep.per_bucket.values().map(|b| b.count).sum();
        assert_eq!(n, ds.examples().len());
    }

    #[test]
    fn absent_buckets_are_omitted() {
        let ds = crate::synthetic::planted_corpus(
            &PlantedConfig { threads: 3, min_comments: 0, max_comments: 0, ..Default::default() },
            1,
        );
        let rep = evaluate(&Oracle, &ds).unwrap();
        assert_eq!(rep.per_bucket.keys().collect::<Vec<_>>(), [&DepthBucket::D1]);
    }

    #[test]
    fn empty_test_set() {
        assert!(matches!(evaluate(&Oracle, &Dataset::empty()), Err(TrainError::EmptyTestSet)));
    }

    #[test]
    fn deterministic_repetitions_have_zero_std() {
        let ds = corpus();
        let cfg = TrainConfig { repetitions: 4, ..Default::default() };
        let rep = run_experiment(|_, _| Ok(Oracle), &ds, &ds, &cfg).unwrap();
        assert_eq!(rep.repetitions, 4);
        assert_eq!(rep.macro_f1_overall.std, 0.0);
        let one = TrainConfig { repetitions: 1, ..Default::default() };
        assert_eq!(run_experiment(|_, _| Ok(Oracle), &ds, &ds, &one).unwrap().macro_f1_overall.std, 0.0);
    }

    #[test]
    fn mean_and_std_over_three_stub_runs() {
        let ds = corpus();
        let cfg = TrainConfig { repetitions: 3, seed: 0, ..Default::default() };
        let rep =
            run_experiment(|_, c| Ok(Fixed(Stance::from_index(c.seed as usize).unwrap())), &ds, &ds, &cfg).unwrap();
        let f: Vec<f64> =
            (0..3).map(|i| evaluate_run(&Fixed(Stance::from_index(i).unwrap()), &ds).unwrap().macro_f1).collect();
        let mean = (f[0] + f[1] + f[2]) / 3.0;
        let var = f.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 2.0;
        assert!((rep.macro_f1_overall.mean - mean).abs() < 1e-12);
        assert!((rep.macro_f1_overall.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sweep_returns_one_report_per_k() {
        let ds = corpus();
        let ks = [ContextLimit::Ancestors(0), ContextLimit::Ancestors(1), ContextLimit::Unbounded];
        let cfg = TrainConfig { repetitions: 1, ..Default::default() };
        let out = partial_context_sweep(&ks, |_, _, _| Ok(Oracle), &ds, &ds, &cfg).unwrap();
        assert_eq!(out.iter().map(|e| e.k).collect::<Vec<_>>(), ks);
    }
}

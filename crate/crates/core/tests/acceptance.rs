//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the report is always printed.

use std::time::Instant;

use branchstance::attribution::{is_keyword, report, KEYWORD_FRACTION};
use branchstance::baselines::FallbackSegmenter;
use branchstance::encoder::{
    concat_subbranch, ContextMixConfig, ContextMixEncoder, EncoderHandle, TargetRepresentation,
};
use branchstance::family::{fit, sweep, AnyModel, ModelFamily, RunConfig};
use branchstance::ingest::{load_dataset, save_dataset, split, Dataset, SplitSpec};
use branchstance::model::{conv_features, cross_entropy, head_backward, head_forward, ConvBank, HeadParams};
use branchstance::synthetic::{demo_thread, planted_corpus, random_thread, PlantedConfig};
use branchstance::train::{evaluate, macro_f1, train_on, ParamGroup, StancePredictor, TrainConfig, Trainable};
use branchstance::{
    ContextLimit, ModelConfig, ModelError, Stance, StanceDistribution, StanceModel, SubBranch, Variant,
};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: impl Into<String>) -> Outcome {
    let d = detail.into();
    if cond {
        Ok(d)
    } else {
        Err(d)
    }
}

fn encoder() -> EncoderHandle {
    EncoderHandle::new(Box::new(ContextMixEncoder::new(ContextMixConfig::default()).unwrap()))
}

fn ids(b: &SubBranch) -> Vec<&str> {
    b.instances().iter().map(|i| i.instance_id.as_str()).collect()
}

fn length_identity() -> Outcome {
    let t0 = Instant::now();
    let enc = encoder();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    while checked < 1000 {
        let size = rng.gen_range(1..=12);
        let t = random_thread(&mut rng, &format!("r{checked}"), size);
        let inst = t.preorder()[rng.gen_range(0..t.len())].instance_id.clone();
        let b = t.sub_branch(&inst).unwrap();
        let tb = concat_subbranch(&b, &enc).unwrap();
        let expected: usize =
            b.instances().iter().map(|i| enc.tokenize(&i.text).unwrap().len()).sum::<usize>() + b.len() - 1;
        if tb.total_length() != expected || tb.ids.len() != expected {
            return Err(format!("branch to {inst}: length {} against {expected}", tb.total_length()));
        }
        checked += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 10.0, format!("{checked} sub-branches in {secs:.2}s"))
}

fn partial_context() -> Outcome {
    let t = demo_thread();
    let b1 = t.sub_branch("c1").unwrap().partial(ContextLimit::Ancestors(2));
    let b4 = t.sub_branch("c4").unwrap().partial(ContextLimit::Ancestors(2));
    if ids(&b1) != ["post", "c1"] || ids(&b4) != ["c2", "c3", "c4"] {
        return Err(format!("worked examples gave {:?} and {:?}", ids(&b1), ids(&b4)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cases = 0;
    for n in 0..200 {
        let size = rng.gen_range(1..=15);
        let t = random_thread(&mut rng, &format!("r{n}"), size);
        for inst in t.preorder() {
            let b = t.sub_branch(&inst.instance_id).unwrap();
            let i = b.len();
            for k in 0..=16 {
                let p = b.partial(ContextLimit::Ancestors(k));
                if p.len() != (k + 1).min(i) || p.target() != b.target() {
                    return Err(format!("k={k}, i={i}: got {} instances", p.len()));
                }
                if p.instances() != &b.instances()[i - p.len()..] {
                    return Err(format!("k={k}: not a suffix of the branch"));
                }
                cases += 1;
            }
            if b.partial(ContextLimit::Unbounded) != b {
                return Err("unbounded limit changed the branch".into());
            }
        }
    }
    Ok(format!("worked examples match; {cases} (branch, k) cases"))
}

fn naive_conv(rep: &Array2<f32>, banks: &[ConvBank<f32>]) -> Vec<f32> {
    let d = rep.nrows();
    let mut out = Vec::new();
    for bank in banks {
        let (n, k, h) = (bank.n(), bank.k(), bank.h());
        for f in 0..n {
            let mut best = f32::NEG_INFINITY;
            for t in 0..=d - k {
                let mut s = bank.bias[f];
                for r in 0..k {
                    for c in 0..h {
                        s += bank.weights[[f, r, c]] * rep[[t + r, c]];
                    }
                }
                best = best.max(s);
            }
            out.push(best.max(0.0));
        }
    }
    out
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f32;
    for case in 0..200 {
        let h = rng.gen_range(1..=16);
        let d = rng.gen_range(1..=32);
        let rep = Array2::from_shape_fn((d, h), |_| rng.gen_range(-1.0f32..1.0));
        let banks: Vec<ConvBank<f32>> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let k = rng.gen_range(1..=d.min(5));
                let n = rng.gen_range(1..=6);
                ConvBank {
                    weights: Array3::from_shape_fn((n, k, h), |_| rng.gen_range(-0.5f32..0.5)),
                    bias: Array1::from_shape_fn(n, |_| rng.gen_range(-0.5f32..0.5)),
                }
            })
            .collect();
        let got = conv_features(rep.view(), &banks).map_err(|e| format!("case {case}: {e}"))?;
        let want = naive_conv(&rep, &banks);
        if got.len() != want.len() {
            return Err(format!("case {case}: {} features against {}", got.len(), want.len()));
        }
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-5, format!("200 cases, max |Δ| = {worst:.2e}"))
}

fn gradient_check() -> Outcome {
    let (h, d) = (8, 10);
    let cfg = ModelConfig { filter_sizes: vec![2, 3, 4], filters_per_size: 4, d, dropout: 0.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut params = HeadParams::init(&cfg, h, &mut rng);
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    let mut rep =
        TargetRepresentation { matrix: Array2::from_shape_fn((d, h), |_| rng.gen_range(-1.0..1.0)), valid_rows: d };
    let gold = Stance::Against;
    let loss = |p: &HeadParams, r: &TargetRepresentation| -> f64 {
        cross_entropy(&head_forward(p, r, None).unwrap().probs, gold)
    };
    let fwd = head_forward(&params, &rep, None).unwrap();
    let mut grads = params.zeros_like();
    let drep = head_backward(&params, &rep, &fwd, gold, &mut grads);

    let eps = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    let mut worst = 0.0f64;
    let mut count = 0;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let orig = params.tensors()[ti][j];
            params.tensors_mut()[ti][j] = orig + eps;
            let up = loss(&params, &rep);
            params.tensors_mut()[ti][j] = orig - eps;
            let down = loss(&params, &rep);
            params.tensors_mut()[ti][j] = orig;
            worst = worst.max(rel(g[j], (up - down) / (2.0 * eps)));
            count += 1;
        }
    }
    for r in 0..d {
        for c in 0..h {
            let orig = rep.matrix[[r, c]];
            rep.matrix[[r, c]] = orig + eps;
            let up = loss(&params, &rep);
            rep.matrix[[r, c]] = orig - eps;
            let down = loss(&params, &rep);
            rep.matrix[[r, c]] = orig;
            worst = worst.max(rel(drep[[r, c]], (up - down) / (2.0 * eps)));
            count += 1;
        }
    }
    check(worst <= 1e-3, format!("{count} coordinates, max relative error {worst:.2e}"))
}

fn simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for n in 0..10_000 {
        let h = rng.gen_range(2..=16);
        let d = rng.gen_range(4..=16);
        let variant = if n % 2 == 0 { Variant::Full } else { Variant::NoCfe };
        let cfg = ModelConfig { variant, filter_sizes: vec![1, 2, 3], filters_per_size: 3, d, ..Default::default() };
        let mut p = HeadParams::init(&cfg, h, &mut rng);
        let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
        for t in p.tensors_mut() {
            for x in t.iter_mut() {
                *x *= scale;
            }
        }
        let rep = TargetRepresentation {
            matrix: Array2::from_shape_fn((d, h), |_| rng.gen_range(-scale..scale)),
            valid_rows: rng.gen_range(0..=d),
        };
        let probs = head_forward(&p, &rep, None).map_err(|e| e.to_string())?.probs;
        if probs.probs.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(format!("draw {n}: {:?}", probs.probs));
        }
        worst = worst.max((probs.probs.iter().sum::<f64>() - 1.0).abs());
    }
    check(worst <= 1e-6, format!("10000 draws, max |Σp − 1| = {worst:.2e}"))
}

fn macro_f1_oracle() -> Outcome {
    use Stance::*;
    let fixtures: [(&[Stance], &[Stance], f64); 20] = [
        (&[Favor, Favor, Against, Neither], &[Favor, Against, Against, Neither], 7.0 / 9.0),
        (&[Favor, Against, Neither, Favor], &[Favor, Against, Neither, Favor], 1.0),
        (&[Favor, Against, Neither], &[Neither, Neither, Neither], 1.0 / 6.0),
        (&[Favor, Favor, Favor], &[Favor, Favor, Favor], 1.0 / 3.0),
        (&[Favor, Against], &[Against, Favor], 0.0),
        (&[Favor, Favor, Against, Against], &[Favor, Against, Against, Favor], 1.0 / 3.0),
        (&[Favor, Against, Neither, Neither], &[Favor, Against, Neither, Favor], 7.0 / 9.0),
        (&[Neither, Neither, Neither, Neither, Favor], &[Neither; 5], 8.0 / 27.0),
        (&[Favor, Against, Neither, Favor, Against, Neither], &[Favor, Against, Neither, Against, Neither, Favor], 0.5),
        (&[Favor, Favor, Favor, Against], &[Favor, Favor, Against, Against], 22.0 / 45.0),
        (&[Against, Against, Against, Against], &[Against, Against, Against, Favor], 2.0 / 7.0),
        (&[Favor, Against, Neither], &[Favor, Against, Neither], 1.0),
        (&[Favor, Against, Neither, Favor, Against, Neither], &[Favor; 6], 1.0 / 6.0),
        (&[Favor, Neither], &[Favor, Neither], 2.0 / 3.0),
        (&[Neither, Against, Neither, Against], &[Against, Neither, Against, Neither], 0.0),
        (
            &[Favor, Favor, Against, Neither, Neither, Neither],
            &[Favor, Neither, Against, Neither, Neither, Against],
            2.0 / 3.0,
        ),
        (&[Favor, Against, Against, Neither], &[Favor, Against, Against, Against], 0.6),
        (
            &[Favor, Favor, Favor, Favor, Against, Neither],
            &[Favor, Favor, Favor, Against, Against, Neither],
            53.0 / 63.0,
        ),
        (&[Against], &[Against], 1.0 / 3.0),
        (
            &[Favor, Against, Neither, Favor, Against, Neither, Favor, Against, Neither],
            &[Favor, Against, Neither, Favor, Against, Neither, Against, Neither, Favor],
            2.0 / 3.0,
        ),
    ];
    for (i, (g, p, want)) in fixtures.iter().enumerate() {
        let got = macro_f1(g, p).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-12 {
            return Err(format!("fixture {}: {got} against {want}", i + 1));
        }
    }
    Ok("20 fixtures including 7/9; perfect predictions give 1.0".into())
}

fn planted_cfg(max_batches: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.max_batches = max_batches;
    cfg.train.seed = 7;
    cfg.train.repetitions = 3;
    cfg
}

/// Macro-F1 over comments only: their labels depend on the parent.
fn comment_f1(model: &dyn StancePredictor, ds: &Dataset) -> f64 {
    let (mut g, mut p) = (Vec::new(), Vec::new());
    for ex in ds.examples().into_iter().filter(|e| e.depth() >= 2) {
        g.push(ex.label);
        p.push(model.predict_branch(&ex.branch).unwrap().label());
    }
    macro_f1(&g, &p).unwrap()
}

fn planted_separation() -> Outcome {
    let t0 = Instant::now();
    let ds = planted_corpus(&PlantedConfig::default(), 7);
    let cfg = planted_cfg(2000);
    let (full, log) = fit(ModelFamily::Branch, &ds, &cfg).map_err(|e| e.to_string())?;
    let batches = log.map_or(0, |l| l.batches);
    let full_f1 = evaluate(&full, &ds).map_err(|e| e.to_string())?.macro_f1_overall.mean;
    let (no_sr, _) = fit(ModelFamily::NoSr, &ds, &cfg).map_err(|e| e.to_string())?;
    let no_sr_f1 = comment_f1(&no_sr, &ds);
    let secs = t0.elapsed().as_secs_f64();
    check(
        full_f1 >= 0.95 && batches <= 2000 && no_sr_f1 <= 0.60 && secs < 600.0,
        format!("full train F1 {full_f1:.3} after {batches} batches; no_SR comment F1 {no_sr_f1:.3}; {secs:.0}s"),
    )
}

fn monotone_context() -> Outcome {
    let ds = planted_corpus(&PlantedConfig::default(), 7);
    let (tr, te) = split(&ds, &SplitSpec { seed: 7, ..Default::default() });
    let ks = [ContextLimit::Unbounded, ContextLimit::Ancestors(2), ContextLimit::Ancestors(0)];
    let entries = sweep(&ks, &tr, &te, &planted_cfg(2000)).map_err(|e| e.to_string())?;
    let f: Vec<f64> = entries.iter().map(|e| e.report.macro_f1_overall.mean).collect();
    let tol = 0.02;
    check(
        f[0] >= f[1] - tol && f[1] >= f[2] - tol,
        format!("k=inf {:.3}, k=2 {:.3}, k=0 {:.3} (3 repetitions, seed 7)", f[0], f[1], f[2]),
    )
}

fn attribution_zero_law() -> Outcome {
    let mut branches: Vec<SubBranch> = demo_thread().branches();
    let planted = planted_corpus(&PlantedConfig { threads: 10, ..Default::default() }, 3);
    branches.extend(planted.examples().into_iter().map(|e| e.branch).filter(|b| b.len() >= 2));
    let no_sr = StanceModel::new(ModelConfig { variant: Variant::NoSr, init_seed: 9, ..Default::default() }, encoder())
        .map_err(|e| e.to_string())?;
    let full =
        StanceModel::new(ModelConfig { init_seed: 9, ..Default::default() }, encoder()).map_err(|e| e.to_string())?;
    let (mut zero, mut thresholded) = (0, 0);
    for b in &branches {
        let rep = report(b, &no_sr, &FallbackSegmenter).map_err(|e| e.to_string())?;
        for r in &rep.records {
            if r.contribution != 0.0 {
                return Err(format!("no_SR span {:?} has c = {}", r.span.surface, r.contribution));
            }
            zero += 1;
        }
        for model in [&no_sr, &full] {
            let rep = report(b, model, &FallbackSegmenter).map_err(|e| e.to_string())?;
            for r in &rep.records {
                let want = r.contribution >= KEYWORD_FRACTION * rep.confidence;
                if r.is_keyword != want || r.is_keyword != is_keyword(r.contribution, rep.confidence) {
                    return Err(format!("span {:?}: keyword flag {}", r.span.surface, r.is_keyword));
                }
                thresholded += 1;
            }
        }
    }
    Ok(format!("{zero} no_SR spans all zero; {thresholded} records thresholded at 0.2·ŷ"))
}

/// Constant output, so dev macro-F1 never changes.
struct Frozen {
    w: Vec<f64>,
}

impl StancePredictor for Frozen {
    fn predict_branch(&self, _: &SubBranch) -> Result<StanceDistribution, ModelError> {
        Ok(StanceDistribution::from_logits([0.0, 1.0, 0.0]))
    }
}

impl Trainable for Frozen {
    type Input = ();
    fn prepare(&self, _: &SubBranch) -> Result<(), ModelError> {
        Ok(())
    }
    fn predict_input(&self, _: &()) -> Result<StanceDistribution, ModelError> {
        Ok(StanceDistribution::from_logits([0.0, 1.0, 0.0]))
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
        g[0][0] += 0.5;
        Ok(1.0)
    }
}

fn early_stopping() -> Outcome {
    let ex = planted_corpus(&PlantedConfig { threads: 6, ..Default::default() }, 5).examples();
    let cfg = TrainConfig::default();
    let log = train_on(&mut Frozen { w: vec![0.0] }, &ex, &ex, &cfg).map_err(|e| e.to_string())?;
    let first_eval = cfg.eval_every_batches;
    check(
        log.early_stopped && log.batches == first_eval + cfg.patience_batches,
        format!("stopped at batch {} (first evaluation {first_eval}, patience {})", log.batches, cfg.patience_batches),
    )
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut ds = planted_corpus(&PlantedConfig { threads: 12, ..Default::default() }, 11);
    ds.threads.push(demo_thread());
    let path = dir.path().join("ds.jsonl");
    save_dataset(&ds, &path).map_err(|e| e.to_string())?;
    if load_dataset(&path).map_err(|e| e.to_string())? != ds {
        return Err("dataset changed across save and load".into());
    }
    let probes: Vec<SubBranch> = demo_thread().branches();
    let mut cfg = RunConfig::default();
    cfg.train.max_batches = 3;
    cfg.train.eval_every_batches = 1;
    cfg.tan.hidden = 4;
    cfg.random_embedding_dim = 8;
    cfg.svm.cs = vec![1.0];
    for f in ModelFamily::ALL {
        let (m, _) = fit(f, &ds, &cfg).map_err(|e| e.to_string())?;
        let p = dir.path().join(format!("{f}.ckpt"));
        m.save(&p).map_err(|e| e.to_string())?;
        let back = AnyModel::load(&p).map_err(|e| e.to_string())?;
        for b in &probes {
            let (x, y) = (m.predict_branch(b).unwrap(), back.predict_branch(b).unwrap());
            if x != y {
                return Err(format!("{f}: {:?} against {:?} after reload", x.probs, y.probs));
            }
        }
    }
    Ok(format!("dataset identical; {} families predict identically on {} probes", ModelFamily::ALL.len(), probes.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("length identity", length_identity),
        ("partial-context slicing", partial_context),
        ("convolution oracle", conv_oracle),
        ("gradient check", gradient_check),
        ("simplex", simplex),
        ("macro-F1 oracle", macro_f1_oracle),
        ("planted-context separation", planted_separation),
        ("monotone context", monotone_context),
        ("attribution zero-law", attribution_zero_law),
        ("early stopping", early_stopping),
        ("round trip", round_trips),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let t0 = Instant::now();
        match f() {
            Ok(d) => println!("PASS {name}: {d} [{:.1}s]", t0.elapsed().as_secs_f64()),
            Err(d) => {
                println!("FAIL {name}: {d} [{:.1}s]", t0.elapsed().as_secs_f64());
                failed.push(name);
            }
        }
    }
    println!("NOT RUN full-corpus comparison: needs the released corpus and a pretrained Cantonese encoder");
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}

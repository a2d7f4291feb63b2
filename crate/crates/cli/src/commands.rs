use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use branchstance::attribution::{report, AttributionError};
use branchstance::baselines::{DictionarySegmenter, FallbackSegmenter, Segmenter};
use branchstance::checkpoint::write_atomic;
use branchstance::family::{self, AnyModel, FamilyError, RunConfig};
use branchstance::ingest::{
    build_dataset, dataset_stats, load_dataset, load_raw_records, save_dataset, split, Dataset, IngestError,
    KeywordList, NormalizeOptions, Normalizer, SplitSpec,
};
use branchstance::train::{evaluate, TrainError};
use branchstance::Stance;
use branchstance_annotate::{AppState, AttributionSource, ProjectError, ProjectState};
use serde::Serialize;

use crate::args::*;
use crate::config;
use crate::manifest::ManifestBuilder;
use crate::Failure;

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Failure {
        match e {
            IngestError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Failure {
        match e {
            TrainError::EmptyTrainSet | TrainError::EmptyTestSet => Failure::Data(e.to_string()),
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<FamilyError> for Failure {
    fn from(e: FamilyError) -> Failure {
        match e {
            FamilyError::Train(t) => t.into(),
            FamilyError::Checkpoint(_) | FamilyError::Resource(_) => Failure::Data(e.to_string()),
            FamilyError::Model(_) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ProjectError> for Failure {
    fn from(e: ProjectError) -> Failure {
        match e {
            ProjectError::Log { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<AttributionError> for Failure {
    fn from(e: AttributionError) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(io_failure(path))
}

fn finish(m: &mut ManifestBuilder, primary: &Path) -> Result<(), Failure> {
    let p = m.finish(primary).map_err(io_failure(primary))?;
    log::info!("wrote {}", p.display());
    Ok(())
}

/// Print to stdout; a closed pipe is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

fn snapshot(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

pub fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split_cmd(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
        Command::Sweep(a) => sweep(a),
        Command::Attribute(a) => attribute(a),
        Command::Serve(a) => serve(a),
        Command::Finalize(a) => finalize(a),
    }
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let mut m = ManifestBuilder::start("ingest");
    m.input(&a.input).input(&a.keywords).seed("sample", a.seed);
    let raw = load_raw_records(&a.input)?;
    let keywords = KeywordList::load(&a.keywords)?;
    let normalizer = Normalizer::new(NormalizeOptions::default());
    let source = a.source.clone().unwrap_or_else(|| {
        a.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "unknown".into())
    });
    let n_raw = raw.len();
    let mut ds = build_dataset(raw, &keywords, &normalizer, a.repair, &source)?;
    if let Some(n) = a.sample {
        ds = ds.sample_threads(n, a.seed);
    }
    save_dataset(&ds, &a.out)?;
    log::info!("{n_raw} raw records -> {} threads, {} instances", ds.threads.len(), ds.instance_count());
    m.output(&a.out).extra(serde_json::json!({
        "raw_records": n_raw,
        "threads": ds.threads.len(),
        "instances": ds.instance_count(),
        "repair": a.repair,
        "sample": a.sample,
    }));
    finish(&mut m, &a.out)
}

/// `data/x.jsonl` -> `data/x.<suffix>.jsonl`
fn sibling(input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    input.with_file_name(format!("{stem}.{suffix}.jsonl"))
}

fn split_cmd(a: SplitArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.ratio) {
        return Err(Failure::Usage(format!("--ratio must lie in [0, 1], got {}", a.ratio)));
    }
    let mut m = ManifestBuilder::start("split");
    m.input(&a.input).seed("split", a.seed);
    let ds = load_dataset(&a.input)?;
    let spec = SplitSpec { train_fraction: a.ratio, seed: a.seed, granularity: a.granularity };
    let (tr, te) = split(&ds, &spec);
    let train_out = a.train_out.unwrap_or_else(|| sibling(&a.input, "train"));
    let test_out = a.test_out.unwrap_or_else(|| sibling(&a.input, "test"));
    save_dataset(&tr, &train_out)?;
    save_dataset(&te, &test_out)?;
    say!("train: {} threads -> {}", tr.threads.len(), train_out.display());
    say!("test: {} threads -> {}", te.threads.len(), test_out.display());
    m.output(&train_out).output(&test_out).extra(serde_json::to_value(spec).unwrap_or_default());
    finish(&mut m, &train_out)
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.input)?;
    let s = dataset_stats(&ds);
    say!("{}", serde_json::to_string_pretty(&s).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let (cfg, overrides) = config::resolve(&a.overrides)?;
    let mut m = ManifestBuilder::start("train");
    m.config(snapshot(&cfg), a.overrides.config.as_deref(), overrides).input(&a.train).seed("train", cfg.train.seed);
    let ds = load_dataset(&a.train)?;
    let (model, log) = family::fit(a.model, &ds, &cfg)?;
    model.save(&a.out)?;
    m.output(&a.out);
    if let Some(p) = &cfg.train.log_path {
        m.output(p);
    }
    if let Some(l) = &log {
        log::info!("trained {} for {} batches (best dev F1 {:?})", a.model, l.batches, l.best_dev_f1);
        m.extra(serde_json::json!({
            "family": a.model.as_str(),
            "batches": l.batches,
            "early_stopped": l.early_stopped,
            "best_batch": l.best_batch,
            "best_dev_f1": l.best_dev_f1,
        }));
    } else {
        m.extra(serde_json::json!({ "family": a.model.as_str() }));
    }
    finish(&mut m, &a.out)
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let mut m = ManifestBuilder::start("eval");
    m.input(&a.ckpt).input(&a.test);
    let model = AnyModel::load(&a.ckpt)?;
    let test = load_dataset(&a.test)?;
    let rep = evaluate(&model, &test)?;
    write_json(&a.report, &rep)?;
    say!("macro-F1 {:.4} over {} instances", rep.macro_f1_overall.mean, rep.runs.first().map_or(0, |r| r.instances));
    m.output(&a.report).extra(serde_json::json!({ "family": model.family().as_str() }));
    finish(&mut m, &a.report)
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let (cfg, overrides) = config::resolve(&a.overrides)?;
    let mut m = ManifestBuilder::start("experiment");
    m.config(snapshot(&cfg), a.overrides.config.as_deref(), overrides).input(&a.train).input(&a.test);
    for r in 0..cfg.train.repetitions {
        m.seed(&format!("repetition_{r}"), cfg.train.seed.wrapping_add(r as u64));
    }
    let tr = load_dataset(&a.train)?;
    let te = load_dataset(&a.test)?;
    let rep = family::experiment(a.model, &tr, &te, &cfg)?;
    write_json(&a.report, &rep)?;
    say!(
        "{}: macro-F1 {:.4} ± {:.4} over {} runs",
        a.model,
        rep.macro_f1_overall.mean,
        rep.macro_f1_overall.std,
        rep.repetitions
    );
    m.output(&a.report).extra(serde_json::json!({ "family": a.model.as_str() }));
    finish(&mut m, &a.report)
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    if a.ks.is_empty() {
        return Err(Failure::Usage("--ks must name at least one context limit".into()));
    }
    let (cfg, overrides) = config::resolve(&a.overrides)?;
    let mut m = ManifestBuilder::start("sweep");
    m.config(snapshot(&cfg), a.overrides.config.as_deref(), overrides).input(&a.train).input(&a.test);
    for r in 0..cfg.train.repetitions {
        m.seed(&format!("repetition_{r}"), cfg.train.seed.wrapping_add(r as u64));
    }
    let tr = load_dataset(&a.train)?;
    let te = load_dataset(&a.test)?;
    let entries = family::sweep(&a.ks, &tr, &te, &cfg)?;
    write_json(&a.report, &entries)?;
    for e in &entries {
        say!("k={:<4} macro-F1 {:.4} ± {:.4}", e.k, e.report.macro_f1_overall.mean, e.report.macro_f1_overall.std);
    }
    m.output(&a.report).extra(serde_json::json!({ "ks": a.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>() }));
    finish(&mut m, &a.report)
}

fn segmenter(word_list: Option<&Path>) -> Result<Arc<dyn Segmenter>, Failure> {
    match word_list {
        Some(p) => Ok(Arc::new(DictionarySegmenter::load(p).map_err(|e| Failure::Data(e.to_string()))?)),
        None => Ok(Arc::new(FallbackSegmenter)),
    }
}

fn attribute(a: AttributeArgs) -> Result<(), Failure> {
    let mut m = ManifestBuilder::start("attribute");
    m.input(&a.ckpt).input(&a.dataset);
    let model = AnyModel::load(&a.ckpt)?;
    let Some(stance) = model.as_stance_model() else {
        return Err(Failure::Data(format!(
            "attribution needs a branch-model checkpoint, `{}` holds a {} model",
            a.ckpt.display(),
            model.family()
        )));
    };
    let ds = load_dataset(&a.dataset)?;
    let thread = ds.thread(&a.thread).ok_or_else(|| Failure::Data(format!("no thread `{}`", a.thread)))?;
    let branch = thread.sub_branch(&a.target).map_err(|e| Failure::Data(e.to_string()))?;
    let seg = segmenter(a.word_list.as_deref())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = a.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    let rep = pool.install(|| report(&branch, stance, seg.as_ref()))?;
    write_json(&a.out, &rep)?;
    if a.table {
        let _ = std::io::stdout().lock().write_all(rep.render_table().as_bytes());
    }
    m.output(&a.out).extra(serde_json::json!({
        "thread": a.thread,
        "target": a.target,
        "spans": rep.records.len(),
        "keywords": rep.records.iter().filter(|r| r.is_keyword).count(),
    }));
    finish(&mut m, &a.out)
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.dataset)?;
    let project = ProjectState::open(ds, a.quota, &a.labels)?;
    let mut state = AppState::new(vec![(a.project.clone(), project)]);
    if let Some(t) = a.token.filter(|t| !t.is_empty()) {
        state = state.with_token(t);
    }
    if a.ckpt.is_some() || a.reports.is_some() {
        let model = match &a.ckpt {
            Some(p) => match AnyModel::load(p)? {
                AnyModel::Stance(m) => Some(Arc::new(m)),
                other => {
                    return Err(Failure::Data(format!(
                        "attribution needs a branch-model checkpoint, got {}",
                        other.family()
                    )))
                }
            },
            None => None,
        };
        state = state.with_attribution(AttributionSource { reports_dir: a.reports.clone(), model, segmenter: None });
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Failure::Usage(format!("bad listen address {}:{}: {e}", a.host, a.port)))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(branchstance_annotate::serve(addr, state)).map_err(|e| Failure::Runtime(format!("{addr}: {e}")))
}

fn finalize(a: FinalizeArgs) -> Result<(), Failure> {
    let mut m = ManifestBuilder::start("finalize");
    m.input(&a.dataset).input(&a.labels);
    let ds = load_dataset(&a.dataset)?;
    let provenance = ds.provenance.clone();
    let project = ProjectState::open(ds, a.quota, &a.labels)?;
    let adjudications: BTreeMap<String, Stance> = match &a.adjudications {
        Some(p) => {
            m.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
        }
        None => BTreeMap::new(),
    };
    let mut out: Dataset = project.finalize_labels(&adjudications)?;
    out.provenance = provenance;
    save_dataset(&out, &a.out)?;
    m.output(&a.out).extra(serde_json::json!({ "quota": a.quota, "adjudicated": adjudications.len() }));
    finish(&mut m, &a.out)
}

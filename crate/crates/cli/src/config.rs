use std::path::Path;

use branchstance::family::RunConfig;

use crate::args::Overrides;
use crate::Failure;

/// Defaults, then the TOML file, then flags. Returns the effective config
/// and the `key=value` list of flag overrides.
pub fn resolve(o: &Overrides) -> Result<(RunConfig, Vec<String>), Failure> {
    let mut cfg = match &o.config {
        Some(p) => load(p)?,
        None => RunConfig::default(),
    };
    let mut applied = Vec::new();
    if let Some(s) = o.seed {
        cfg.train.seed = s;
        applied.push(format!("train.seed={s}"));
    }
    if let Some(n) = o.max_batches {
        cfg.train.max_batches = n;
        applied.push(format!("train.max_batches={n}"));
    }
    if let Some(n) = o.repetitions {
        cfg.train.repetitions = n;
        applied.push(format!("train.repetitions={n}"));
    }
    if let Some(p) = &o.log {
        cfg.train.log_path = Some(p.clone());
        applied.push(format!("train.log_path={}", p.display()));
    }
    if let Some(p) = &o.word_list {
        cfg.word_list = Some(p.clone());
        applied.push(format!("word_list={}", p.display()));
    }
    if let Some(p) = &o.embeddings {
        cfg.embeddings = Some(p.clone());
        applied.push(format!("embeddings={}", p.display()));
    }
    cfg.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((cfg, applied))
}

pub fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

pub fn parse(text: &str) -> Result<RunConfig, toml::de::Error> {
    toml::from_str(text)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use branchstance::checkpoint::write_atomic;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Record of one command run, written beside its primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub toolkit_version: String,
    /// Effective configuration after flags were applied.
    pub config: serde_json::Value,
    pub config_file: Option<PathBuf>,
    /// `key=value` settings that came from flags.
    pub overrides: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub started_at: DateTime<Utc>,
    pub wall_clock_s: f64,
}

pub struct ManifestBuilder {
    m: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            m: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                toolkit_version: branchstance::ingest::PIPELINE_VERSION.to_string(),
                config: serde_json::Value::Null,
                config_file: None,
                overrides: Vec::new(),
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                extra: serde_json::Value::Null,
                started_at: Utc::now(),
                wall_clock_s: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, config: serde_json::Value, file: Option<&Path>, overrides: Vec<String>) -> &mut Self {
        self.m.config = config;
        self.m.config_file = file.map(Path::to_path_buf);
        self.m.overrides = overrides;
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.m.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.m.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.m.outputs.push(p.to_path_buf());
        self
    }

    pub fn extra(&mut self, v: serde_json::Value) -> &mut Self {
        self.m.extra = v;
        self
    }

    /// Write `<primary>.manifest.json` atomically.
    pub fn finish(&mut self, primary: &Path) -> std::io::Result<PathBuf> {
        self.m.wall_clock_s = self.started.elapsed().as_secs_f64();
        let path = manifest_path(primary);
        let json = serde_json::to_vec_pretty(&self.m).expect("manifest serializes");
        write_atomic(&path, &json)?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

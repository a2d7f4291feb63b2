//! Line-delimited dataset files: one JSON object per instance with exactly
//! the fields `instance_id`, `thread_id`, `parent_id`, `text`, `raw_text`,
//! `label`, `platform` and `created_at`. Provenance is kept in a sidecar
//! `<file>.meta.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Dataset, Provenance};
use crate::checkpoint::write_atomic;
use crate::stance::Stance;
use crate::thread::{Instance, Repair, ThreadError, Timestamp};

pub const FIELDS: [&str; 8] =
    ["instance_id", "thread_id", "parent_id", "text", "raw_text", "label", "platform", "created_at"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Schema { line: usize, field: String, message: String },
    #[error("thread `{thread}`: {source}")]
    Thread {
        thread: String,
        #[source]
        source: ThreadError,
    },
    #[error("duplicate thread id `{0}`")]
    DuplicateThread(String),
    #[error("keyword list: {0}")]
    Keywords(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> IngestError {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub repair: Repair,
}

#[derive(Serialize)]
struct Row<'a> {
    instance_id: &'a str,
    thread_id: &'a str,
    parent_id: Option<&'a str>,
    text: &'a str,
    raw_text: &'a str,
    label: Option<Stance>,
    platform: &'a str,
    created_at: &'a str,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write records as JSON lines.
pub fn write_records<'a, W: Write>(mut w: W, records: impl IntoIterator<Item = &'a Instance>) -> std::io::Result<()> {
    for r in records {
        let row = Row {
            instance_id: &r.instance_id,
            thread_id: &r.thread_id,
            parent_id: r.parent_id.as_deref(),
            text: &r.text,
            raw_text: &r.raw_text,
            label: r.label,
            platform: &r.platform,
            created_at: r.created_at.as_str(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Write the records and the provenance sidecar, each atomically.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), IngestError> {
    let records: Vec<&Instance> = ds.threads.iter().flat_map(|t| t.preorder()).collect();
    let mut buf = Vec::new();
    write_records(&mut buf, records).map_err(|e| IngestError::io(path, e))?;
    write_atomic(path, &buf).map_err(|e| IngestError::io(path, e))?;
    let meta = meta_path(path);
    let json = serde_json::to_string_pretty(&ds.provenance).expect("provenance serializes");
    write_atomic(&meta, json.as_bytes()).map_err(|e| IngestError::io(&meta, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, IngestError> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: &Path, opts: LoadOptions) -> Result<Dataset, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let records =
        parse_records(BufReader::new(file), true)?.into_iter().map(RawRecord::into_instance).collect::<Vec<_>>();
    let meta = meta_path(path);
    let provenance = match std::fs::read_to_string(&meta) {
        Ok(s) => serde_json::from_str(&s)
            .map_err(|e| IngestError::Parse { line: e.line(), message: format!("{}: {e}", meta.display()) })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Provenance::default(),
        Err(e) => return Err(IngestError::io(&meta, e)),
    };
    let ds = Dataset::from_records(records, provenance, opts.repair)
        .map_err(|(thread, source)| IngestError::Thread { thread, source })?;
    let mut seen = std::collections::HashSet::new();
    for t in &ds.threads {
        if !seen.insert(t.thread_id()) {
            return Err(IngestError::DuplicateThread(t.thread_id().to_string()));
        }
    }
    Ok(ds)
}

/// A record as exported from a platform, before cleaning. `text` may be
/// absent; it is recomputed from `raw_text` during ingest.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawRecord {
    pub instance_id: String,
    pub thread_id: String,
    pub parent_id: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    pub raw_text: String,
    #[serde(default)]
    pub label: Option<Stance>,
    pub platform: String,
    pub created_at: Timestamp,
}

impl RawRecord {
    pub fn into_instance(self) -> Instance {
        Instance {
            text: self.text.unwrap_or_default(),
            instance_id: self.instance_id,
            thread_id: self.thread_id,
            parent_id: self.parent_id,
            raw_text: self.raw_text,
            label: self.label,
            platform: self.platform,
            created_at: self.created_at,
        }
    }
}

pub fn load_raw_records(path: &Path) -> Result<Vec<RawRecord>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    parse_records(BufReader::new(file), false)
}

/// Parse JSON lines. In strict mode every field must be present and no
/// others are allowed; otherwise `text` and `label` may be omitted.
pub fn parse_records<R: BufRead>(reader: R, strict: bool) -> Result<Vec<RawRecord>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| IngestError::Parse { line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| IngestError::Parse { line: lineno, message: e.to_string() })?;
        let obj = match value {
            Value::Object(m) => m,
            _ => return Err(IngestError::Parse { line: lineno, message: "expected a JSON object".into() }),
        };
        out.push(record_from_object(obj, lineno, strict)?);
    }
    Ok(out)
}

fn record_from_object(obj: Map<String, Value>, line: usize, strict: bool) -> Result<RawRecord, IngestError> {
    let schema = |field: &str, message: &str| IngestError::Schema {
        line,
        field: field.to_string(),
        message: message.to_string(),
    };
    for f in FIELDS {
        let optional = !strict && (f == "text" || f == "label");
        if !optional && !obj.contains_key(f) {
            return Err(schema(f, "missing field"));
        }
    }
    if strict {
        if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(schema(extra, "unexpected field"));
        }
    }
    let string = |f: &str| -> Result<String, IngestError> {
        match obj.get(f) {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(schema(f, "expected a string")),
        }
    };
    let nullable = |f: &str| -> Result<Option<String>, IngestError> {
        match obj.get(f) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            _ => Err(schema(f, "expected a string or null")),
        }
    };
    let label = match nullable("label")? {
        None => None,
        Some(l) => Some(l.parse::<Stance>().map_err(|e| schema("label", &e.to_string()))?),
    };
    let created_raw = string("created_at")?;
    let created_at =
        Timestamp::parse(&created_raw).map_err(|e| schema("created_at", &format!("not an ISO-8601 timestamp: {e}")))?;
    Ok(RawRecord {
        instance_id: string("instance_id")?,
        thread_id: string("thread_id")?,
        parent_id: nullable("parent_id")?,
        text: if strict { Some(string("text")?) } else { nullable("text")? },
        raw_text: string("raw_text")?,
        label,
        platform: string("platform")?,
        created_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"instance_id":"p","thread_id":"t","parent_id":null,"text":"x","raw_text":"x","label":"favor","platform":"lihkg","created_at":"2021-01-01T00:00:00+08:00"}"#;

    #[test]
    fn unknown_label_is_schema_error() {
        let bad = GOOD.replace("\"favor\"", "\"agree\"");
        match parse_records(bad.as_bytes(), true) {
            Err(IngestError::Schema { field, line, .. }) => {
                assert_eq!(field, "label");
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let bad = GOOD.replace(r#""platform":"lihkg","#, "");
        let src = format!("{GOOD}\n{bad}\n");
        match parse_records(src.as_bytes(), true) {
            Err(IngestError::Schema { field, line, .. }) => {
                assert_eq!(field, "platform");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let src = format!("{GOOD}\n\n{{not json\n");
        match parse_records(src.as_bytes(), true) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raw_records_may_omit_text_and_label() {
        let raw = GOOD.replace(r#""text":"x","#, "").replace(r#""label":"favor","#, "");
        assert!(parse_records(raw.as_bytes(), true).is_err());
        let recs = parse_records(raw.as_bytes(), false).unwrap();
        assert_eq!(recs[0].text, None);
        assert_eq!(recs[0].label, None);
    }
}

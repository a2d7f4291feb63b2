use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use branchstance::ingest::Dataset;
use branchstance::{Instance, Stance};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Round one shows the target alone; round two shows its sub-branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    ContextFree,
    Contextual,
}

impl Round {
    pub fn as_str(self) -> &'static str {
        match self {
            Round::ContextFree => "context_free",
            Round::Contextual => "contextual",
        }
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Round {
    type Err = String;

    fn from_str(s: &str) -> Result<Round, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "context_free" | "context-free" | "1" => Ok(Round::ContextFree),
            "contextual" | "2" => Ok(Round::Contextual),
            other => Err(format!("unknown round `{other}` (expected context_free or contextual)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub annotator_id: String,
    pub round: Round,
    pub label: Stance,
    pub submitted_at: DateTime<Utc>,
}

/// One line of the label log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Dispensed { seq: u64, instance_id: String, annotator_id: String, round: Round, at: DateTime<Utc> },
    Labeled { seq: u64, record: AnnotationRecord },
}

impl Event {
    fn seq(&self) -> u64 {
        match self {
            Event::Dispensed { seq, .. } | Event::Labeled { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("no tasks remaining for `{annotator}` in round {round}")]
    NoTasksRemaining { annotator: String, round: Round },
    #[error("`{annotator}` already labeled `{instance}` in round {round}")]
    DuplicateSubmission { instance: String, annotator: String, round: Round },
    #[error("`{instance}` was not dispensed to `{annotator}` in round {round}")]
    UnknownTask { instance: String, annotator: String, round: Round },
    #[error("invalid label `{0}` (expected favor, against or neither)")]
    InvalidLabel(String),
    #[error("no instance has a majority label in both rounds")]
    InsufficientData,
    #[error("{} instance(s) without a final label: {ids:?}", ids.len())]
    UnresolvedInstances { ids: Vec<String> },
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("label log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

/// Text shown to an annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskText {
    pub instance_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Labels this annotator has submitted in the round.
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub instance_id: String,
    pub thread_id: String,
    pub round: Round,
    pub target: TaskText,
    /// Post first; always empty in the context-free round.
    pub ancestors: Vec<TaskText>,
    pub progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectStats {
    pub instances: usize,
    pub quota: usize,
    pub labels: BTreeMap<Round, usize>,
    /// Instances with at least `quota` labels in the round.
    pub complete: BTreeMap<Round, usize>,
    pub disagreement_rate: Option<f64>,
}

/// Location of an instance inside the dataset.
#[derive(Debug, Clone, Copy)]
struct Slot {
    thread: usize,
}

type PairKey = (String, String, Round);

/// Assignment and label state, rebuilt exactly by replaying the log.
pub struct ProjectState {
    dataset: Dataset,
    quota: usize,
    order: Vec<String>,
    slots: HashMap<String, Slot>,
    /// annotators an instance was dispensed to, per round
    assigned: HashMap<(String, Round), BTreeSet<String>>,
    labels: BTreeMap<PairKey, AnnotationRecord>,
    next_seq: u64,
    log: Option<(PathBuf, File)>,
}

pub const DEFAULT_QUOTA: usize = 3;

impl ProjectState {
    /// In-memory project without a log (tests, previews).
    pub fn in_memory(dataset: Dataset, quota: usize) -> ProjectState {
        let mut order = Vec::new();
        let mut slots = HashMap::new();
        for (ti, t) in dataset.threads.iter().enumerate() {
            for inst in t.preorder() {
                order.push(inst.instance_id.clone());
                slots.insert(inst.instance_id.clone(), Slot { thread: ti });
            }
        }
        ProjectState {
            dataset,
            quota: quota.max(1),
            order,
            slots,
            assigned: HashMap::new(),
            labels: BTreeMap::new(),
            next_seq: 1,
            log: None,
        }
    }

    /// Open (or create) the label log at `path` and replay it.
    ///
    /// A final line cut off mid-write is dropped and the file truncated
    /// to the last complete event.
    pub fn open(dataset: Dataset, quota: usize, path: &Path) -> Result<ProjectState, ProjectError> {
        let log_err = |m: String| ProjectError::Log { path: path.to_path_buf(), message: m };
        let mut state = ProjectState::in_memory(dataset, quota);
        let mut good_len = 0u64;
        if path.exists() {
            let f = File::open(path).map_err(|e| log_err(e.to_string()))?;
            let mut reader = BufReader::new(f);
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| log_err(e.to_string()))?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                if !line.ends_with('\n') {
                    log::warn!("{}: dropping incomplete final line {lineno}", path.display());
                    break;
                }
                let ev: Event =
                    serde_json::from_str(line.trim_end()).map_err(|e| log_err(format!("line {lineno}: {e}")))?;
                state.apply(ev).map_err(|e| log_err(format!("line {lineno}: {e}")))?;
                good_len += n as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| log_err(e.to_string()))?;
        if file.metadata().map_err(|e| log_err(e.to_string()))?.len() != good_len {
            file.set_len(good_len).map_err(|e| log_err(e.to_string()))?;
        }
        state.log = Some((path.to_path_buf(), file));
        Ok(state)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    fn instance(&self, id: &str) -> Option<&Instance> {
        let s = self.slots.get(id)?;
        self.dataset.threads[s.thread].get(id)
    }

    fn apply(&mut self, ev: Event) -> Result<(), ProjectError> {
        match &ev {
            Event::Dispensed { instance_id, annotator_id, round, .. } => {
                if !self.slots.contains_key(instance_id) {
                    return Err(ProjectError::UnknownInstance(instance_id.clone()));
                }
                self.assigned.entry((instance_id.clone(), *round)).or_default().insert(annotator_id.clone());
            }
            Event::Labeled { record, .. } => {
                let key = (record.instance_id.clone(), record.annotator_id.clone(), record.round);
                self.labels.insert(key, record.clone());
            }
        }
        self.next_seq = self.next_seq.max(ev.seq() + 1);
        Ok(())
    }

    /// Durably append, then apply.
    fn commit(&mut self, ev: Event) -> Result<(), ProjectError> {
        if let Some((path, file)) = &mut self.log {
            let mut line = serde_json::to_string(&ev).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| ProjectError::Log { path: path.clone(), message: e.to_string() })?;
        }
        self.apply(ev)
    }

    fn take_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn has_label(&self, instance: &str, annotator: &str, round: Round) -> bool {
        self.labels.contains_key(&(instance.to_string(), annotator.to_string(), round))
    }

    fn is_assigned(&self, instance: &str, annotator: &str, round: Round) -> bool {
        self.assigned.get(&(instance.to_string(), round)).is_some_and(|s| s.contains(annotator))
    }

    fn assigned_count(&self, instance: &str, round: Round) -> usize {
        self.assigned.get(&(instance.to_string(), round)).map_or(0, BTreeSet::len)
    }

    fn payload(&self, instance_id: &str, annotator: &str, round: Round) -> TaskPayload {
        let slot = self.slots[instance_id];
        let thread = &self.dataset.threads[slot.thread];
        let target = thread.get(instance_id).expect("slot points into thread");
        let ancestors = match round {
            Round::ContextFree => Vec::new(),
            Round::Contextual => thread
                .sub_branch(instance_id)
                .expect("instance in thread")
                .ancestors()
                .iter()
                .map(|a| TaskText { instance_id: a.instance_id.clone(), text: a.text.clone() })
                .collect(),
        };
        let done = self.labels.keys().filter(|(_, a, r)| a == annotator && *r == round).count();
        TaskPayload {
            instance_id: instance_id.to_string(),
            thread_id: thread.thread_id().to_string(),
            round,
            target: TaskText { instance_id: instance_id.to_string(), text: target.text.clone() },
            ancestors,
            progress: Progress { done, total: self.order.len() },
        }
    }

    /// The annotator's unfinished task in `round`, else a new one.
    ///
    /// Contextual tasks are only offered for instances the annotator has
    /// already labeled without context.
    pub fn next_task(&mut self, annotator: &str, round: Round) -> Result<TaskPayload, ProjectError> {
        let pending = self
            .order
            .iter()
            .find(|id| self.is_assigned(id, annotator, round) && !self.has_label(id, annotator, round))
            .cloned();
        if let Some(id) = pending {
            return Ok(self.payload(&id, annotator, round));
        }
        let fresh = self
            .order
            .iter()
            .find(|id| {
                !self.is_assigned(id, annotator, round)
                    && self.assigned_count(id, round) < self.quota
                    && (round == Round::ContextFree || self.has_label(id, annotator, Round::ContextFree))
            })
            .cloned();
        let Some(id) = fresh else {
            return Err(ProjectError::NoTasksRemaining { annotator: annotator.to_string(), round });
        };
        let seq = self.take_seq();
        self.commit(Event::Dispensed {
            seq,
            instance_id: id.clone(),
            annotator_id: annotator.to_string(),
            round,
            at: Utc::now(),
        })?;
        Ok(self.payload(&id, annotator, round))
    }

    /// Parse a wire label.
    pub fn parse_label(label: &str) -> Result<Stance, ProjectError> {
        label.parse::<Stance>().map_err(|_| ProjectError::InvalidLabel(label.to_string()))
    }

    pub fn submit_label(&mut self, record: AnnotationRecord) -> Result<Ack, ProjectError> {
        let (inst, ann, round) = (&record.instance_id, &record.annotator_id, record.round);
        if self.has_label(inst, ann, round) {
            return Err(ProjectError::DuplicateSubmission { instance: inst.clone(), annotator: ann.clone(), round });
        }
        if !self.is_assigned(inst, ann, round) {
            return Err(ProjectError::UnknownTask { instance: inst.clone(), annotator: ann.clone(), round });
        }
        let seq = self.take_seq();
        self.commit(Event::Labeled { seq, record })?;
        Ok(Ack { seq })
    }

    /// Labels of one round per instance, in annotator order.
    fn round_labels(&self, round: Round) -> BTreeMap<&str, Vec<Stance>> {
        let mut out: BTreeMap<&str, Vec<Stance>> = BTreeMap::new();
        for ((inst, _, r), rec) in &self.labels {
            if *r == round {
                out.entry(inst.as_str()).or_default().push(rec.label);
            }
        }
        out
    }

    /// Fraction of instances whose majority label changed between rounds,
    /// over instances with a majority in both.
    pub fn round_disagreement_rate(&self) -> Result<f64, ProjectError> {
        let r1 = self.round_labels(Round::ContextFree);
        let r2 = self.round_labels(Round::Contextual);
        let (mut counted, mut flipped) = (0usize, 0usize);
        for (inst, l1) in &r1 {
            let (Some(m1), Some(m2)) = (majority(l1), r2.get(inst).and_then(|l| majority(l))) else {
                continue;
            };
            counted += 1;
            flipped += usize::from(m1 != m2);
        }
        if counted == 0 {
            return Err(ProjectError::InsufficientData);
        }
        Ok(flipped as f64 / counted as f64)
    }

    /// Final contextual-round labels merged into the dataset.
    ///
    /// An adjudication entry decides its instance outright. Otherwise an
    /// instance needs `quota` contextual labels with a unique most frequent
    /// label.
    pub fn finalize_labels(&self, adjudications: &BTreeMap<String, Stance>) -> Result<Dataset, ProjectError> {
        if let Some(bad) = adjudications.keys().find(|k| !self.slots.contains_key(*k)) {
            return Err(ProjectError::UnknownInstance(bad.clone()));
        }
        let r2 = self.round_labels(Round::Contextual);
        let mut finals: HashMap<&str, Stance> = HashMap::new();
        let mut unresolved = Vec::new();
        for id in &self.order {
            let decided = adjudications
                .get(id)
                .copied()
                .or_else(|| r2.get(id.as_str()).filter(|l| l.len() >= self.quota).and_then(|l| majority(l)));
            match decided {
                Some(l) => {
                    finals.insert(id, l);
                }
                None => unresolved.push(id.clone()),
            }
        }
        if !unresolved.is_empty() {
            return Err(ProjectError::UnresolvedInstances { ids: unresolved });
        }
        let threads = self
            .dataset
            .threads
            .iter()
            .map(|t| t.map_instances(|i| i.label = finals.get(i.instance_id.as_str()).copied()))
            .collect();
        Ok(Dataset::new(threads, self.dataset.provenance.clone()))
    }

    pub fn stats(&self) -> ProjectStats {
        let mut labels = BTreeMap::new();
        let mut complete = BTreeMap::new();
        for round in [Round::ContextFree, Round::Contextual] {
            let per = self.round_labels(round);
            labels.insert(round, per.values().map(Vec::len).sum());
            complete.insert(round, per.values().filter(|l| l.len() >= self.quota).count());
        }
        ProjectStats {
            instances: self.order.len(),
            quota: self.quota,
            labels,
            complete,
            disagreement_rate: self.round_disagreement_rate().ok(),
        }
    }

    /// Submitted labels ordered by instance, annotator and round.
    pub fn label_records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.labels.values()
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.instance(instance_id).is_some()
    }
}

/// The unique most frequent label, if any.
pub fn majority(labels: &[Stance]) -> Option<Stance> {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let max = *counts.iter().max()?;
    if max == 0 || counts.iter().filter(|&&c| c == max).count() > 1 {
        return None;
    }
    Stance::from_index(counts.iter().position(|&c| c == max)?)
}

//! Dataset construction: keyword filtering, sampling, text cleaning,
//! deduplication, on-disk format, splitting and statistics.

mod dedupe;
mod io;
mod keywords;
mod normalize;
mod split;
mod stats;

pub use dedupe::dedupe_and_drop_null;
pub use io::{
    load_dataset, load_dataset_with, load_raw_records, parse_records, save_dataset, write_records, IngestError,
    LoadOptions, RawRecord,
};
pub use keywords::{filter_posts, KeywordList};
pub use normalize::{
    normalize_text, EmojiTable, HongKongConverter, IdentityConverter, NormalizeOptions, Normalizer, PunctuationPolicy,
    ScriptConverter, TextOptions,
};
pub use split::{split, Granularity, SplitSpec};
pub use stats::{dataset_stats, BucketStats, DatasetStats, LabelShares};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stance::Stance;
use crate::thread::{Instance, Repair, SubBranch, Thread, ThreadError};

pub const PIPELINE_VERSION: &str = concat!("branchstance/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub pipeline_version: String,
    pub normalization: NormalizeOptions,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            source: "unknown".to_string(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            normalization: NormalizeOptions::default(),
        }
    }
}

/// A set of threads with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub threads: Vec<Thread>,
    pub provenance: Provenance,
}

/// A labeled instance together with its sub-branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub branch: SubBranch,
    pub label: Stance,
}

impl Example {
    pub fn depth(&self) -> usize {
        self.branch.len()
    }

    pub fn target_id(&self) -> &str {
        &self.branch.target().instance_id
    }
}

impl Dataset {
    pub fn new(threads: Vec<Thread>, provenance: Provenance) -> Dataset {
        Dataset { threads, provenance }
    }

    pub fn empty() -> Dataset {
        Dataset { threads: Vec::new(), provenance: Provenance::default() }
    }

    pub fn instance_count(&self) -> usize {
        self.threads.iter().map(Thread::len).sum()
    }

    pub fn thread(&self, thread_id: &str) -> Option<&Thread> {
        self.threads.iter().find(|t| t.thread_id() == thread_id)
    }

    /// Every labeled instance with its sub-branch, threads in order and
    /// instances in pre-order.
    pub fn examples(&self) -> Vec<Example> {
        let mut out = Vec::new();
        for t in &self.threads {
            for inst in t.preorder() {
                if let Some(label) = inst.label {
                    let branch = t.sub_branch(&inst.instance_id).expect("instance in thread");
                    out.push(Example { branch, label });
                }
            }
        }
        out
    }

    /// Group flat records by thread id (first-appearance order) and build trees.
    pub fn from_records(
        records: Vec<Instance>,
        provenance: Provenance,
        repair: Repair,
    ) -> Result<Dataset, (String, ThreadError)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: std::collections::HashMap<String, Vec<Instance>> = Default::default();
        for r in records {
            if !groups.contains_key(&r.thread_id) {
                order.push(r.thread_id.clone());
            }
            groups.entry(r.thread_id.clone()).or_default().push(r);
        }
        let mut threads = Vec::with_capacity(order.len());
        for id in order {
            let recs = groups.remove(&id).expect("group exists");
            threads.push(Thread::build_with(recs, repair).map_err(|e| (id.clone(), e))?);
        }
        Ok(Dataset { threads, provenance })
    }

    pub fn into_records(self) -> Vec<Instance> {
        self.threads.into_iter().flat_map(Thread::into_instances).collect()
    }

    /// Randomly keep `n` threads, preserving dataset order.
    pub fn sample_threads(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.threads.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.threads.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut keep = idx[..n].to_vec();
        keep.sort_unstable();
        Dataset {
            threads: keep.into_iter().map(|i| self.threads[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// The whole ingest pipeline: keep threads whose post matches a keyword, clean every
/// text, rebuild trees, then drop duplicates and empty instances.
pub fn build_dataset(
    raw: Vec<RawRecord>,
    keywords: &KeywordList,
    normalizer: &Normalizer,
    repair: Repair,
    source: &str,
) -> Result<Dataset, IngestError> {
    let records: Vec<Instance> = raw.into_iter().map(RawRecord::into_instance).collect();
    let posts: Vec<Instance> = records.iter().filter(|r| r.is_post()).cloned().collect();
    let kept: std::collections::HashSet<String> =
        filter_posts(&posts, keywords).into_iter().map(|p| p.thread_id).collect();

    let cleaned: Vec<Instance> = records
        .into_iter()
        .filter(|r| kept.contains(&r.thread_id))
        .map(|mut r| {
            r.text = normalizer.normalize(&r.raw_text, r.is_post());
            r
        })
        .collect();

    let provenance = Provenance {
        source: source.to_string(),
        pipeline_version: PIPELINE_VERSION.to_string(),
        normalization: normalizer.options().clone(),
    };
    let ds = Dataset::from_records(cleaned, provenance, repair)
        .map_err(|(thread, source)| IngestError::Thread { thread, source })?;
    Ok(dedupe_and_drop_null(ds))
}

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::thread::Thread;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Whole threads go to one side; no context crosses the split.
    #[default]
    Thread,
    /// Labeled instances are assigned independently. Both sides keep the
    /// full trees as context, with labels cleared on the other side's instances.
    Instance,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thread" => Ok(Granularity::Thread),
            "instance" => Ok(Granularity::Instance),
            other => Err(format!("unknown split granularity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub granularity: Granularity,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8, seed: 0, granularity: Granularity::Thread }
    }
}

/// Deterministic train/test partition for a fixed seed.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> (Dataset, Dataset) {
    let frac = spec.train_fraction.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.granularity {
        Granularity::Thread => {
            let n = ds.threads.len();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let n_train = (frac * n as f64).round() as usize;
            let train: HashSet<usize> = idx[..n_train].iter().copied().collect();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, t) in ds.threads.iter().enumerate() {
                if train.contains(&i) {
                    a.push(t.clone());
                } else {
                    b.push(t.clone());
                }
            }
            (Dataset::new(a, ds.provenance.clone()), Dataset::new(b, ds.provenance.clone()))
        }
        Granularity::Instance => {
            let mut labeled: Vec<(String, String)> = Vec::new();
            for t in &ds.threads {
                for n in t.preorder() {
                    if n.label.is_some() {
                        labeled.push((t.thread_id().to_string(), n.instance_id.clone()));
                    }
                }
            }
            labeled.shuffle(&mut rng);
            let n_train = (frac * labeled.len() as f64).round() as usize;
            let train: HashSet<(String, String)> = labeled[..n_train].iter().cloned().collect();
            let side = |in_train: bool| {
                let threads: Vec<Thread> = ds
                    .threads
                    .iter()
                    .map(|t| {
                        let tid = t.thread_id().to_string();
                        t.map_instances(|n| {
                            let key = (tid.clone(), n.instance_id.clone());
                            if train.contains(&key) != in_train {
                                n.label = None;
                            }
                        })
                    })
                    .filter(|t| t.preorder().iter().any(|n| n.label.is_some()))
                    .collect();
                Dataset::new(threads, ds.provenance.clone())
            };
            (side(true), side(false))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{demo_thread, planted_corpus, PlantedConfig};

    fn ten_threads() -> Dataset {
        planted_corpus(&PlantedConfig { threads: 10, ..PlantedConfig::default() }, 3)
    }

    #[test]
    fn eight_two_thread_split() {
        let ds = ten_threads();
        let (a, b) = split(&ds, &SplitSpec::default());
        assert_eq!((a.threads.len(), b.threads.len()), (8, 2));
    }

    #[test]
    fn same_seed_same_split() {
        let ds = ten_threads();
        let spec = SplitSpec { seed: 9, ..SplitSpec::default() };
        assert_eq!(split(&ds, &spec), split(&ds, &spec));
    }

    #[test]
    fn thread_split_partitions() {
        let ds = ten_threads();
        let (a, b) = split(&ds, &SplitSpec { seed: 4, ..SplitSpec::default() });
        let ids = |d: &Dataset| d.threads.iter().map(|t| t.thread_id().to_string()).collect::<HashSet<_>>();
        assert!(ids(&a).is_disjoint(&ids(&b)));
        assert_eq!(ids(&a).len() + ids(&b).len(), 10);
    }

    #[test]
    fn instance_split_crosses_threads() {
        let t = demo_thread();
        let ds = Dataset::new(vec![t], Default::default());
        let spec = SplitSpec { granularity: Granularity::Instance, seed: 1, ..SplitSpec::default() };
        let (a, b) = split(&ds, &spec);
        let labels =
            |d: &Dataset| -> HashSet<String> { d.examples().into_iter().map(|e| e.target_id().to_string()).collect() };
        let (la, lb) = (labels(&a), labels(&b));
        // enumerate membership: both sides hold instances of the one thread
        assert_eq!(la.len(), 8);
        assert_eq!(lb.len(), 2);
        assert!(la.is_disjoint(&lb));
        let all = labels(&ds);
        assert_eq!(la.union(&lb).cloned().collect::<HashSet<_>>(), all);
        // context survives: the full tree is present on both sides
        assert_eq!(a.threads[0].len(), 10);
        assert_eq!(b.threads[0].len(), 10);
    }
}

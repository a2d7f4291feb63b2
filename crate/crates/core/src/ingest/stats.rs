use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::stance::Stance;
use crate::thread::DepthBucket;

/// Label counts with their shares of the labeled instances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelShares {
    pub favor: usize,
    pub against: usize,
    pub neither: usize,
    pub unlabeled: usize,
    pub favor_share: f64,
    pub against_share: f64,
    pub neither_share: f64,
}

impl LabelShares {
    fn add(&mut self, label: Option<Stance>) {
        match label {
            Some(Stance::Favor) => self.favor += 1,
            Some(Stance::Against) => self.against += 1,
            Some(Stance::Neither) => self.neither += 1,
            None => self.unlabeled += 1,
        }
    }

    fn finish(&mut self) {
        let n = (self.favor + self.against + self.neither) as f64;
        if n > 0.0 {
            self.favor_share = self.favor as f64 / n;
            self.against_share = self.against as f64 / n;
            self.neither_share = self.neither as f64 / n;
        }
    }

    pub fn labeled(&self) -> usize {
        self.favor + self.against + self.neither
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    /// Share of all instances.
    pub share: f64,
    pub avg_chars: f64,
    pub labels: LabelShares,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub threads: usize,
    pub instances: usize,
    pub posts: usize,
    pub comments: usize,
    pub avg_chars_posts: f64,
    pub avg_chars_comments: f64,
    pub per_depth: BTreeMap<DepthBucket, BucketStats>,
    pub labels: LabelShares,
}

/// Per-depth counts, label proportions and average character counts of the
/// cleaned text.
pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut s = DatasetStats {
        threads: ds.threads.len(),
        per_depth: DepthBucket::ALL.iter().map(|b| (*b, BucketStats::default())).collect(),
        ..DatasetStats::default()
    };
    let mut chars_posts = 0usize;
    let mut chars_comments = 0usize;
    let mut bucket_chars: BTreeMap<DepthBucket, usize> = BTreeMap::new();

    for t in &ds.threads {
        let mut depth: std::collections::HashMap<&str, usize> = Default::default();
        for n in t.preorder() {
            let d = match &n.parent_id {
                None => 1,
                Some(p) => depth[p.as_str()] + 1,
            };
            depth.insert(&n.instance_id, d);
            let chars = n.text.chars().count();
            if n.is_post() {
                s.posts += 1;
                chars_posts += chars;
            } else {
                s.comments += 1;
                chars_comments += chars;
            }
            let b = DepthBucket::of(d);
            let entry = s.per_depth.get_mut(&b).expect("all buckets present");
            entry.count += 1;
            entry.labels.add(n.label);
            *bucket_chars.entry(b).or_default() += chars;
            s.labels.add(n.label);
        }
    }
    s.instances = s.posts + s.comments;
    let avg = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    s.avg_chars_posts = avg(chars_posts, s.posts);
    s.avg_chars_comments = avg(chars_comments, s.comments);
    for (b, st) in s.per_depth.iter_mut() {
        st.share = avg(st.count, s.instances);
        st.avg_chars = avg(bucket_chars.get(b).copied().unwrap_or(0), st.count);
        st.labels.finish();
    }
    s.labels.finish();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Provenance;
    use crate::thread::fixtures::instance;
    use crate::thread::Thread;

    #[test]
    fn empty_dataset_is_all_zero() {
        let s = dataset_stats(&Dataset::empty());
        assert_eq!(s.instances, 0);
        assert_eq!(s.labels.favor_share, 0.0);
        assert!(s.per_depth.values().all(|b| b.count == 0 && b.avg_chars == 0.0));
    }

    #[test]
    fn three_node_chain_each_class_a_third() {
        let mut a = instance("p", None, "abc", 0);
        a.label = Some(Stance::Favor);
        let mut b = instance("c1", Some("p"), "de", 1);
        b.label = Some(Stance::Against);
        let mut c = instance("c2", Some("c1"), "f", 2);
        c.label = Some(Stance::Neither);
        let ds = Dataset::new(vec![Thread::build(vec![a, b, c]).unwrap()], Provenance::default());
        let s = dataset_stats(&ds);
        for share in [s.labels.favor_share, s.labels.against_share, s.labels.neither_share] {
            assert!((share - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(s.per_depth[&DepthBucket::D3].count, 1);
        assert_eq!(s.avg_chars_posts, 3.0);
        assert_eq!(s.avg_chars_comments, 1.5);
        let total: usize = s.per_depth.values().map(|b| b.count).sum();
        assert_eq!(total, s.instances);
    }
}

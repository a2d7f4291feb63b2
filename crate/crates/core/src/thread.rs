//! Conversation threads as rooted trees.
//!
//! A thread is started by a post (the root) and every comment names the
//! instance it replies to. From the tree we derive the queries the model
//! needs: the depth of a node, its sub-branch (the root-to-node path), the
//! branches (root-to-leaf paths) and partial sub-branches that keep only the
//! nearest `k` ancestors.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::stance::Stance;

/// ISO-8601 timestamp that remembers its original spelling, so records
/// survive a save/load cycle byte for byte.
#[derive(Clone)]
pub struct Timestamp {
    raw: String,
    instant: DateTime<FixedOffset>,
}

impl Timestamp {
    pub fn parse(raw: &str) -> Result<Self, chrono::ParseError> {
        let instant = DateTime::parse_from_rfc3339(raw)?;
        Ok(Timestamp { raw: raw.to_string(), instant })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn instant(&self) -> DateTime<FixedOffset> {
        self.instant
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.instant.cmp(&other.instant).then_with(|| self.raw.cmp(&other.raw))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.raw)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Timestamp::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// One post or comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub thread_id: String,
    pub parent_id: Option<String>,
    pub text: String,
    pub raw_text: String,
    pub label: Option<Stance>,
    pub platform: String,
    pub created_at: Timestamp,
}

impl Instance {
    pub fn is_post(&self) -> bool {
        self.parent_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ThreadError {
    #[error("thread has no records")]
    Empty,
    #[error("thread has no root post")]
    NoRoot,
    #[error("thread has multiple root posts: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("instance `{instance}` replies to `{parent}`, which is not in the thread")]
    DanglingParent { instance: String, parent: String },
    #[error("reply links form a cycle through `{0}`")]
    CycleDetected(String),
    #[error("instance id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("records belong to different threads (`{0}` and `{1}`)")]
    MixedThreads(String, String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
}

/// What to do with comments whose parent is missing from an export.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repair {
    /// Fail with `DanglingParent`.
    #[default]
    Reject,
    /// Reattach orphans directly under the root post.
    Promote,
}

impl FromStr for Repair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(Repair::Reject),
            "promote" => Ok(Repair::Promote),
            other => Err(format!("unknown repair mode `{other}`")),
        }
    }
}

/// A validated, immutable conversation tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thread {
    root: String,
    nodes: BTreeMap<String, Instance>,
    children: BTreeMap<String, Vec<String>>,
}

impl Thread {
    /// Build a thread from the records of one thread, rejecting orphans.
    pub fn build(records: Vec<Instance>) -> Result<Thread, ThreadError> {
        Thread::build_with(records, Repair::Reject)
    }

    pub fn build_with(records: Vec<Instance>, repair: Repair) -> Result<Thread, ThreadError> {
        let first = records.first().ok_or(ThreadError::Empty)?;
        let thread_id = first.thread_id.clone();

        let mut nodes: BTreeMap<String, Instance> = BTreeMap::new();
        for rec in records {
            if rec.thread_id != thread_id {
                return Err(ThreadError::MixedThreads(thread_id, rec.thread_id));
            }
            if nodes.contains_key(&rec.instance_id) {
                return Err(ThreadError::DuplicateId(rec.instance_id));
            }
            nodes.insert(rec.instance_id.clone(), rec);
        }

        let roots: Vec<String> =
            nodes.values().filter(|n| n.parent_id.is_none()).map(|n| n.instance_id.clone()).collect();

        // Dangling parents first: either fail or reattach under the root.
        let orphans: Vec<(String, String)> = nodes
            .values()
            .filter_map(|n| match &n.parent_id {
                Some(p) if !nodes.contains_key(p) => Some((n.instance_id.clone(), p.clone())),
                _ => None,
            })
            .collect();
        if let Some((instance, parent)) = orphans.first() {
            match repair {
                Repair::Reject => {
                    return Err(ThreadError::DanglingParent { instance: instance.clone(), parent: parent.clone() })
                }
                Repair::Promote => {
                    let root = match roots.as_slice() {
                        [r] => r.clone(),
                        [] => return Err(ThreadError::NoRoot),
                        many => return Err(ThreadError::MultipleRoots(many.to_vec())),
                    };
                    for (id, _) in &orphans {
                        log::warn!("promoting orphan `{id}` to root `{root}`");
                        nodes.get_mut(id).expect("orphan exists").parent_id = Some(root.clone());
                    }
                }
            }
        }

        // Every parent now exists, so any node not leading to a root sits on a cycle.
        let mut reaches_root: HashSet<String> = HashSet::new();
        for id in nodes.keys() {
            let mut path: Vec<&str> = Vec::new();
            let mut seen: HashSet<&str> = HashSet::new();
            let mut cur = id.as_str();
            loop {
                if reaches_root.contains(cur) {
                    break;
                }
                if !seen.insert(cur) {
                    return Err(ThreadError::CycleDetected(cur.to_string()));
                }
                path.push(cur);
                match &nodes[cur].parent_id {
                    None => break,
                    Some(p) => cur = p.as_str(),
                }
            }
            reaches_root.extend(path.into_iter().map(str::to_string));
        }

        let root = match roots.as_slice() {
            [r] => r.clone(),
            [] => return Err(ThreadError::NoRoot),
            many => return Err(ThreadError::MultipleRoots(many.to_vec())),
        };

        let mut children: BTreeMap<String, Vec<String>> = nodes.keys().map(|k| (k.clone(), Vec::new())).collect();
        for n in nodes.values() {
            if let Some(p) = &n.parent_id {
                children.get_mut(p).expect("parent exists").push(n.instance_id.clone());
            }
        }
        for list in children.values_mut() {
            list.sort_by(|a, b| {
                let (na, nb) = (&nodes[a], &nodes[b]);
                na.created_at.cmp(&nb.created_at).then_with(|| a.cmp(b))
            });
        }

        Ok(Thread { root, nodes, children })
    }

    pub fn thread_id(&self) -> &str {
        &self.nodes[&self.root].thread_id
    }

    pub fn root(&self) -> &Instance {
        &self.nodes[&self.root]
    }

    pub fn get(&self, instance_id: &str) -> Option<&Instance> {
        self.nodes.get(instance_id)
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.nodes.contains_key(instance_id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Children of a node in (created_at, instance_id) order.
    pub fn children(&self, instance_id: &str) -> &[String] {
        self.children.get(instance_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parent(&self, instance_id: &str) -> Option<&Instance> {
        self.nodes.get(instance_id).and_then(|n| n.parent_id.as_ref()).map(|p| &self.nodes[p])
    }

    /// Pre-order traversal, root first, siblings in child order.
    pub fn preorder(&self) -> Vec<&Instance> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root.as_str()];
        while let Some(id) = stack.pop() {
            out.push(&self.nodes[id]);
            for c in self.children(id).iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Length of the root-to-node path; the root has depth 1.
    pub fn depth(&self, instance_id: &str) -> Result<usize, ThreadError> {
        let mut node =
            self.nodes.get(instance_id).ok_or_else(|| ThreadError::UnknownInstance(instance_id.to_string()))?;
        let mut depth = 1;
        while let Some(p) = &node.parent_id {
            node = &self.nodes[p];
            depth += 1;
        }
        Ok(depth)
    }

    pub fn sub_branch(&self, instance_id: &str) -> Result<SubBranch, ThreadError> {
        let mut node =
            self.nodes.get(instance_id).ok_or_else(|| ThreadError::UnknownInstance(instance_id.to_string()))?;
        let mut path = vec![node.clone()];
        while let Some(p) = &node.parent_id {
            node = &self.nodes[p];
            path.push(node.clone());
        }
        path.reverse();
        Ok(SubBranch { instances: path })
    }

    pub fn leaves(&self) -> Vec<&Instance> {
        self.preorder().into_iter().filter(|n| self.children(&n.instance_id).is_empty()).collect()
    }

    /// Every root-to-leaf path, in pre-order of the leaves.
    pub fn branches(&self) -> Vec<SubBranch> {
        self.leaves()
            .into_iter()
            .map(|leaf| self.sub_branch(&leaf.instance_id).expect("leaf is in the thread"))
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        let mut depths: HashMap<&str, usize> = HashMap::new();
        let mut max = 0;
        for n in self.preorder() {
            let d = match &n.parent_id {
                None => 1,
                Some(p) => depths[p.as_str()] + 1,
            };
            depths.insert(&n.instance_id, d);
            max = max.max(d);
        }
        max
    }

    /// Consume the thread and return its records in pre-order.
    pub fn into_instances(self) -> Vec<Instance> {
        let order: Vec<String> = self.preorder().iter().map(|n| n.instance_id.clone()).collect();
        let mut nodes = self.nodes;
        order.into_iter().map(|id| nodes.remove(&id).expect("node exists")).collect()
    }

    /// Rebuild the thread after editing instances in place. Structural
    /// fields (ids, parents) must be left untouched by `f`.
    pub fn map_instances(&self, mut f: impl FnMut(&mut Instance)) -> Thread {
        let mut t = self.clone();
        for n in t.nodes.values_mut() {
            let (id, parent) = (n.instance_id.clone(), n.parent_id.clone());
            f(n);
            debug_assert_eq!((id, parent), (n.instance_id.clone(), n.parent_id.clone()));
        }
        t
    }
}

/// The root-to-target path `[x_1, ..., x_i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubBranch {
    instances: Vec<Instance>,
}

impl SubBranch {
    /// Validate parent linkage; used when sub-branches arrive from outside a `Thread`.
    pub fn new(instances: Vec<Instance>) -> Result<SubBranch, ThreadError> {
        if instances.is_empty() {
            return Err(ThreadError::Empty);
        }
        for pair in instances.windows(2) {
            if pair[1].parent_id.as_deref() != Some(pair[0].instance_id.as_str()) {
                return Err(ThreadError::DanglingParent {
                    instance: pair[1].instance_id.clone(),
                    parent: pair[1].parent_id.clone().unwrap_or_default(),
                });
            }
        }
        Ok(SubBranch { instances })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// 1-based position of the target, equal to the branch length.
    pub fn target_index(&self) -> usize {
        self.instances.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn target(&self) -> &Instance {
        self.instances.last().expect("sub-branch is never empty")
    }

    pub fn ancestors(&self) -> &[Instance] {
        &self.instances[..self.instances.len() - 1]
    }

    /// Keep at most `k` ancestors nearest to the target.
    pub fn partial(&self, k: ContextLimit) -> SubBranch {
        let keep = match k {
            ContextLimit::Unbounded => self.instances.len(),
            ContextLimit::Ancestors(k) => (k + 1).min(self.instances.len()),
        };
        SubBranch { instances: self.instances[self.instances.len() - keep..].to_vec() }
    }
}

/// How many ancestors a partial sub-branch may keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ContextLimit {
    Ancestors(usize),
    #[default]
    Unbounded,
}

impl fmt::Display for ContextLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextLimit::Ancestors(k) => write!(f, "{k}"),
            ContextLimit::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for ContextLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "unbounded" | "∞" => Ok(ContextLimit::Unbounded),
            n => n.parse::<usize>().map(ContextLimit::Ancestors).map_err(|_| format!("invalid context limit `{n}`")),
        }
    }
}

impl Serialize for ContextLimit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ContextLimit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(usize),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(ContextLimit::Ancestors(n)),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Depth buckets used for reporting; depths of 5 and more share a bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DepthBucket {
    #[serde(rename = "1")]
    D1,
    #[serde(rename = "2")]
    D2,
    #[serde(rename = "3")]
    D3,
    #[serde(rename = "4")]
    D4,
    #[serde(rename = "5+")]
    D5Plus,
}

impl DepthBucket {
    pub const ALL: [DepthBucket; 5] =
        [DepthBucket::D1, DepthBucket::D2, DepthBucket::D3, DepthBucket::D4, DepthBucket::D5Plus];

    /// `depth` must be at least 1.
    pub fn of(depth: usize) -> DepthBucket {
        match depth {
            0 | 1 => DepthBucket::D1,
            2 => DepthBucket::D2,
            3 => DepthBucket::D3,
            4 => DepthBucket::D4,
            _ => DepthBucket::D5Plus,
        }
    }
}

impl fmt::Display for DepthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthBucket::D1 => "1",
            DepthBucket::D2 => "2",
            DepthBucket::D3 => "3",
            DepthBucket::D4 => "4",
            DepthBucket::D5Plus => "5+",
        })
    }
}

pub fn depth_bucket(depth: usize) -> DepthBucket {
    DepthBucket::of(depth)
}


#[cfg(test)]
mod tests {
    use super::fixtures::instance;
    use super::*;
    use crate::synthetic::demo_thread;

    #[test]
    fn demo_has_three_branches_and_depth_six() {
        let t = demo_thread();
        assert_eq!(t.len(), 10);
        assert_eq!(t.branches().len(), 3);
        assert_eq!(t.max_depth(), 6);
    }

    #[test]
    fn depths_of_post_and_first_comments() {
        let t = demo_thread();
        assert_eq!(t.depth("post").unwrap(), 1);
        assert_eq!(t.depth("c1").unwrap(), 2);
        assert_eq!(t.depth("c2").unwrap(), 3);
        assert!(matches!(t.depth("nope"), Err(ThreadError::UnknownInstance(_))));
    }

    #[test]
    fn sub_branch_of_comment_4() {
        let t = demo_thread();
        let ids: Vec<_> = t.sub_branch("c4").unwrap().instances().iter().map(|i| i.instance_id.clone()).collect();
        assert_eq!(ids, ["post", "c1", "c2", "c3", "c4"]);
        assert_eq!(t.sub_branch("post").unwrap().len(), 1);
    }

    #[test]
    fn partial_sub_branch_examples() {
        let t = demo_thread();
        let ids = |b: SubBranch| -> Vec<String> { b.instances().iter().map(|i| i.instance_id.clone()).collect() };
        let b2 = ContextLimit::Ancestors(2);
        assert_eq!(ids(t.sub_branch("c1").unwrap().partial(b2)), ["post", "c1"]);
        assert_eq!(ids(t.sub_branch("c4").unwrap().partial(b2)), ["c2", "c3", "c4"]);
        assert_eq!(ids(t.sub_branch("c4").unwrap().partial(ContextLimit::Ancestors(0))), ["c4"]);
    }

    #[test]
    fn single_post_thread() {
        let t = Thread::build(vec![instance("p", None, "x", 0)]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.branches().len(), 1);
        assert_eq!(t.branches()[0].len(), 1);
    }

    #[test]
    fn two_node_cycle_is_detected() {
        let r = Thread::build(vec![instance("a", Some("b"), "x", 0), instance("b", Some("a"), "y", 1)]);
        assert!(matches!(r, Err(ThreadError::CycleDetected(_))));
    }

    #[test]
    fn structural_errors() {
        let r = Thread::build(vec![instance("p", None, "x", 0), instance("q", None, "y", 1)]);
        assert!(matches!(r, Err(ThreadError::MultipleRoots(_))));
        let r = Thread::build(vec![instance("p", None, "x", 0), instance("c", Some("zz"), "y", 1)]);
        assert!(matches!(r, Err(ThreadError::DanglingParent { .. })));
        let r = Thread::build(vec![
            instance("p", None, "x", 0),
            instance("a", Some("b"), "y", 1),
            instance("b", Some("a"), "z", 2),
        ]);
        assert!(matches!(r, Err(ThreadError::CycleDetected(_))));
    }

    #[test]
    fn promote_repair_reattaches_orphans() {
        let t =
            Thread::build_with(vec![instance("p", None, "x", 0), instance("c", Some("gone"), "y", 1)], Repair::Promote)
                .unwrap();
        assert_eq!(t.parent("c").unwrap().instance_id, "p");
    }

    #[test]
    fn children_ordered_by_time_then_id() {
        let t = Thread::build(vec![
            instance("p", None, "x", 0),
            instance("b", Some("p"), "y", 5),
            instance("a", Some("p"), "y", 5),
            instance("c", Some("p"), "y", 1),
        ])
        .unwrap();
        assert_eq!(t.children("p"), ["c", "a", "b"]);
    }

    #[test]
    fn depth_buckets() {
        assert_eq!(depth_bucket(1), DepthBucket::D1);
        assert_eq!(depth_bucket(4), DepthBucket::D4);
        assert_eq!(depth_bucket(7), DepthBucket::D5Plus);
        assert_eq!(depth_bucket(5), DepthBucket::D5Plus);
    }
}

//! Generated threads for tests, examples and the acceptance suite.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Dataset, Provenance};
use crate::stance::Stance;
use crate::thread::{Instance, Thread, Timestamp};

fn stamp(minute: usize) -> Timestamp {
    let (h, m) = (minute / 60, minute % 60);
    let (d, h) = (1 + h / 24, h % 24);
    Timestamp::parse(&format!("2021-03-{d:02}T{h:02}:{m:02}:00+08:00")).expect("valid timestamp")
}

fn make(thread_id: &str, id: &str, parent: Option<&str>, text: &str, label: Option<Stance>, minute: usize) -> Instance {
    Instance {
        instance_id: id.to_string(),
        thread_id: thread_id.to_string(),
        parent_id: parent.map(str::to_string),
        text: text.to_string(),
        raw_text: text.to_string(),
        label,
        platform: "synthetic".to_string(),
        created_at: stamp(minute),
    }
}

/// A ten-instance thread with three branches and maximum depth six.
///
/// Branch 1 runs `post → c1 → c2 → c3 → c4`; `c5` replies to the post;
/// `c6 → c7 → c8 → c9` hangs under `c1`. Every instance is labeled.
pub fn demo_thread() -> Thread {
    use Stance::*;
    let rows: [(&str, Option<&str>, &str, Stance); 10] = [
        ("post", None, "品牌A疫苗同品牌B疫苗今日開始接種 有人話系統爆出問題 預約受到影響 疫苗供應會唔會有變", Neither),
        ("c1", Some("post"), "大家打咗未 我都想知", Neither),
        ("c2", Some("c1"), "有啲人驚副作用 都可以理解嘅", Neither),
        ("c3", Some("c2"), "啲傳媒成日唱衰疫苗 居心叵測 未見過咁樣帶方向", Favor),
        ("c4", Some("c3"), "講得啱", Favor),
        ("c5", Some("post"), "我唔會打 抵制到底", Against),
        ("c6", Some("c1"), "打咗喇 手痛咗兩日", Favor),
        ("c7", Some("c6"), "咁都打 唔驚咩", Against),
        ("c8", Some("c7"), "早打早安心", Favor),
        ("c9", Some("c8"), "隨便啦 各有各揀", Neither),
    ];
    let records = rows
        .iter()
        .enumerate()
        .map(|(m, (id, parent, text, label))| make("demo", id, *parent, text, Some(*label), m))
        .collect();
    Thread::build(records).expect("fixture is a valid tree")
}

pub const FAVOR_TRIGGER: &str = "讚好";
pub const AGAINST_TRIGGER: &str = "抵制";
pub const NEITHER_TRIGGER: &str = "路過";

/// Filler words that share no character with any trigger.
pub const FILLERS: [&str; 10] = ["係咩", "同意", "真係", "點解", "唔知", "睇下", "係囉", "哈哈", "咁樣", "收到"];

pub fn trigger(label: Stance) -> &'static str {
    match label {
        Stance::Favor => FAVOR_TRIGGER,
        Stance::Against => AGAINST_TRIGGER,
        Stance::Neither => NEITHER_TRIGGER,
    }
}

/// Shape of the planted-context corpus.
///
/// Every instance carries one trigger word among fillers. A post is labeled
/// by its own trigger, a comment by its parent's trigger, so the label of a
/// comment cannot be read off its own text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub threads: usize,
    pub min_comments: usize,
    pub max_comments: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig { threads: 200, min_comments: 2, max_comments: 8, min_fillers: 2, max_fillers: 4 }
    }
}

fn planted_text(rng: &mut impl Rng, cfg: &PlantedConfig, trig: Stance) -> String {
    let n = rng.gen_range(cfg.min_fillers..=cfg.max_fillers);
    let mut words: Vec<&str> = (0..n).map(|_| *FILLERS.choose(rng).expect("non-empty")).collect();
    let at = rng.gen_range(0..=words.len());
    words.insert(at, trigger(trig));
    words.concat()
}

/// The planted-context corpus; deterministic in `seed`.
pub fn planted_corpus(cfg: &PlantedConfig, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut threads = Vec::with_capacity(cfg.threads);
    for t in 0..cfg.threads {
        let tid = format!("p{t:04}");
        let n_comments = rng.gen_range(cfg.min_comments..=cfg.max_comments);
        let mut triggers = Vec::with_capacity(n_comments + 1);
        let mut records = Vec::with_capacity(n_comments + 1);
        let root_trig = Stance::from_index(rng.gen_range(0..3)).expect("index < 3");
        triggers.push(root_trig);
        let text = planted_text(&mut rng, cfg, root_trig);
        records.push(make(&tid, &format!("{tid}-0"), None, &text, Some(root_trig), 0));
        for c in 1..=n_comments {
            let parent = rng.gen_range(0..c);
            let trig = Stance::from_index(rng.gen_range(0..3)).expect("index < 3");
            triggers.push(trig);
            let text = planted_text(&mut rng, cfg, trig);
            let parent_id = format!("{tid}-{parent}");
            records.push(make(&tid, &format!("{tid}-{c}"), Some(&parent_id), &text, Some(triggers[parent]), c));
        }
        threads.push(Thread::build(records).expect("generated tree is valid"));
    }
    Dataset::new(threads, Provenance { source: "planted".to_string(), ..Provenance::default() })
}

/// A random tree of `size` nodes where each new node replies to a uniformly
/// chosen earlier node. Texts are filler phrases, labels uniform.
pub fn random_thread(rng: &mut impl Rng, thread_id: &str, size: usize) -> Thread {
    let size = size.max(1);
    let mut records = Vec::with_capacity(size);
    for n in 0..size {
        let parent = (n > 0).then(|| format!("{thread_id}-{}", rng.gen_range(0..n)));
        let words = rng.gen_range(1..=6);
        let text: String = (0..words).map(|_| *FILLERS.choose(rng).expect("non-empty")).collect();
        let label = Stance::from_index(rng.gen_range(0..3));
        records.push(make(thread_id, &format!("{thread_id}-{n}"), parent.as_deref(), &text, label, n));
    }
    Thread::build(records).expect("generated tree is valid")
}

/// Per-depth instance counts of the reference corpus shape: depth 1 to 4,
/// then 5 and deeper.
pub const REFERENCE_DEPTH_COUNTS: [usize; 5] = [500, 4205, 798, 238, 135];

/// Label counts (favor, against, neither) giving 14.2% / 36.9% / 48.9%.
pub const REFERENCE_LABEL_COUNTS: [usize; 3] = [834, 2168, 2874];

/// A corpus with the reference per-depth counts and label proportions.
/// Labels are shuffled over instances, texts are fillers.
pub fn reference_shaped_corpus(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = REFERENCE_DEPTH_COUNTS.iter().sum();
    let mut labels: Vec<Stance> = REFERENCE_LABEL_COUNTS
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(Stance::from_index(i).expect("index < 3"), n))
        .collect();
    labels.shuffle(&mut rng);
    debug_assert_eq!(labels.len(), total);

    let n_threads = REFERENCE_DEPTH_COUNTS[0];
    // (thread, local index) of nodes at the previous depth
    let mut per_thread: Vec<Vec<(String, Option<String>, usize)>> = vec![Vec::new(); n_threads];
    let mut prev: Vec<(usize, String)> = Vec::new();
    for (t, nodes) in per_thread.iter_mut().enumerate() {
        let id = format!("r{t:03}-0");
        nodes.push((id.clone(), None, 1));
        prev.push((t, id));
    }
    for (depth_idx, &count) in REFERENCE_DEPTH_COUNTS.iter().enumerate().skip(1) {
        let mut next = Vec::with_capacity(count);
        for j in 0..count {
            // the first `prev.len()` picks spread over distinct parents
            let (t, parent) = if j < prev.len() && depth_idx > 1 {
                prev[j].clone()
            } else {
                prev[rng.gen_range(0..prev.len())].clone()
            };
            let id = format!("r{t:03}-{}", per_thread[t].len());
            per_thread[t].push((id.clone(), Some(parent), depth_idx + 1));
            next.push((t, id));
        }
        prev = next;
    }

    let mut label_iter = labels.into_iter();
    let threads = per_thread
        .into_iter()
        .enumerate()
        .map(|(t, nodes)| {
            let tid = format!("r{t:03}");
            let records = nodes
                .into_iter()
                .enumerate()
                .map(|(m, (id, parent, _))| {
                    let words = rng.gen_range(1..=8);
                    let text: String = (0..words).map(|_| *FILLERS.choose(&mut rng).expect("non-empty")).collect();
                    make(&tid, &id, parent.as_deref(), &text, label_iter.next(), m)
                })
                .collect();
            Thread::build(records).expect("generated tree is valid")
        })
        .collect();
    Dataset::new(threads, Provenance { source: "reference-shaped".to_string(), ..Provenance::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::dataset_stats;
    use crate::thread::DepthBucket;

    #[test]
    fn planted_labels_follow_parent_trigger() {
        let ds = planted_corpus(&PlantedConfig { threads: 20, ..Default::default() }, 1);
        for t in &ds.threads {
            for n in t.preorder() {
                let src = match t.parent(&n.instance_id) {
                    Some(p) => p,
                    None => n,
                };
                assert!(src.text.contains(trigger(n.label.unwrap())));
            }
        }
    }

    #[test]
    fn fillers_avoid_trigger_characters() {
        let trig: String = [FAVOR_TRIGGER, AGAINST_TRIGGER, NEITHER_TRIGGER].concat();
        for f in FILLERS {
            assert!(f.chars().all(|c| !trig.contains(c)), "{f}");
        }
    }

    #[test]
    fn reference_shape_statistics() {
        let s = dataset_stats(&reference_shaped_corpus(0));
        assert_eq!(s.instances, 5876);
        let counts: Vec<usize> = DepthBucket::ALL.iter().map(|b| s.per_depth[b].count).collect();
        assert_eq!(counts, REFERENCE_DEPTH_COUNTS);
        let pct = |x: f64| (x * 1000.0).round() / 10.0;
        assert_eq!(pct(s.labels.favor_share), 14.2);
        assert_eq!(pct(s.labels.against_share), 36.9);
        assert_eq!(pct(s.labels.neither_share), 48.9);
    }
}

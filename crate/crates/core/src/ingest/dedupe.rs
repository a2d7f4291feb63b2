use std::collections::{HashMap, HashSet};

use super::Dataset;
use crate::thread::{Instance, Thread};

/// Drop instances whose cleaned text is empty and collapse exact duplicates
/// (same thread, parent and text), keeping the earliest. Children of a
/// removed instance move up to its parent. A thread whose post is empty is
/// dropped entirely.
pub fn dedupe_and_drop_null(ds: Dataset) -> Dataset {
    let threads = ds
        .threads
        .into_iter()
        .filter_map(|t| {
            let id = t.thread_id().to_string();
            let out = dedupe_thread(t);
            if out.is_none() {
                log::warn!("dropping thread `{id}`: post text is empty");
            }
            out
        })
        .collect();
    Dataset { threads, provenance: ds.provenance }
}

fn dedupe_thread(thread: Thread) -> Option<Thread> {
    if thread.root().text.trim().is_empty() {
        return None;
    }
    let mut nodes: Vec<Instance> = thread.into_instances();
    loop {
        let mut removed: HashMap<String, Option<String>> = HashMap::new();
        for n in &nodes {
            if n.parent_id.is_some() && n.text.trim().is_empty() {
                removed.insert(n.instance_id.clone(), n.parent_id.clone());
            }
        }
        let mut groups: HashMap<(Option<&str>, &str), Vec<&Instance>> = HashMap::new();
        for n in nodes.iter().filter(|n| !removed.contains_key(&n.instance_id)) {
            groups.entry((n.parent_id.as_deref(), n.text.as_str())).or_default().push(n);
        }
        let mut dups: Vec<(String, Option<String>)> = Vec::new();
        for mut group in groups.into_values().filter(|g| g.len() > 1) {
            group.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.instance_id.cmp(&b.instance_id)));
            dups.extend(group[1..].iter().map(|n| (n.instance_id.clone(), n.parent_id.clone())));
        }
        removed.extend(dups);
        if removed.is_empty() {
            break;
        }
        let gone: HashSet<String> = removed.keys().cloned().collect();
        nodes.retain(|n| !gone.contains(&n.instance_id));
        for n in nodes.iter_mut() {
            while let Some(p) = n.parent_id.clone() {
                match removed.get(&p) {
                    Some(up) => n.parent_id = up.clone(),
                    None => break,
                }
            }
        }
    }
    Some(Thread::build(nodes).expect("contraction preserves tree structure"))
}

//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use methodtree::config::Config;
use methodtree::ingest::read_corpus;
use methodtree::model::{Children, NodeId};
use methodtree::repo::{Providers, Repository};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_config() -> Config {
    Config::load(&fixture("config.toml")).unwrap()
}

pub fn fixture_repo() -> (Repository, Providers) {
    let cfg = fixture_config();
    let providers = Providers::stub(&cfg).unwrap();
    let docs = read_corpus(&fixture("corpus.jsonl")).unwrap();
    let (repo, _) = Repository::build(&docs, cfg, &providers).unwrap();
    (repo, providers)
}

/// Every leaf sits under exactly one level-1 cluster and every non-top
/// cluster under exactly one cluster of the next level.
pub fn partition_oracle(repo: &Repository) -> Result<(), String> {
    let tree = &repo.abstraction;
    let mut leaf_owner: BTreeMap<NodeId, usize> = BTreeMap::new();
    for t in 1..=tree.level_count() {
        let below: BTreeSet<_> = if t > 1 { tree.level(t - 1).iter().copied().collect() } else { BTreeSet::new() };
        let mut seen = BTreeSet::new();
        for c in tree.level(t) {
            let node = tree.cluster(*c).ok_or(format!("{c} missing"))?;
            if node.children.is_empty() {
                return Err(format!("{c} is empty"));
            }
            match &node.children {
                Children::Leaves(ls) if t == 1 => {
                    for l in ls {
                        *leaf_owner.entry(*l).or_default() += 1;
                    }
                }
                Children::Clusters(cs) if t > 1 => {
                    for x in cs {
                        if !below.contains(x) || !seen.insert(*x) {
                            return Err(format!("{x} misplaced or shared at level {t}"));
                        }
                    }
                }
                _ => return Err(format!("{c} has children of the wrong kind")),
            }
        }
        if t > 1 && seen != below {
            return Err(format!("level {} not covered by level {t}", t - 1));
        }
    }
    let live: BTreeSet<NodeId> = repo.nodes.keys().copied().collect();
    if leaf_owner.keys().copied().collect::<BTreeSet<_>>() != live {
        return Err("leaf set differs from node set".into());
    }
    if let Some((l, n)) = leaf_owner.iter().find(|(_, n)| **n != 1) {
        return Err(format!("{l} appears under {n} clusters"));
    }
    Ok(())
}

/// Annotated documents drawn from a small vocabulary: `docs` documents of up
/// to `per_doc` methods each, with random ratings between methods that
/// share a document. Names repeat across documents, which plants duplicates.
pub fn random_docs(seed: u64, docs: usize, per_doc: usize) -> Vec<methodtree::ingest::Document> {
    use methodtree::ingest::{Document, Section};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let words = [
        "gradient", "noise", "sampling", "kernel", "sparse", "graph", "attention", "tree", "search", "prior",
        "bayes", "momentum", "filter", "spectral", "contrastive", "margin", "boosting", "pruning",
    ];
    (0..docs)
        .map(|d| {
            let n = rng.random_range(1..=per_doc);
            let mut body = String::new();
            let names: Vec<String> = (0..n)
                .map(|_| format!("{} {}", words[rng.random_range(0..words.len())], words[rng.random_range(0..words.len())]))
                .collect();
            for name in &names {
                let summary: Vec<&str> = (0..6).map(|_| words[rng.random_range(0..words.len())]).collect();
                body.push_str(&format!("METHOD {name}:: {} applied to {name}\n", summary.join(" ")));
            }
            for i in 1..names.len() {
                if names[i] != names[i - 1] && rng.random_bool(0.7) {
                    body.push_str(&format!("REL {} -> {} @{}:: builds on\n", names[i - 1], names[i], rng.random_range(1..=5)));
                }
            }
            Document {
                doc_id: format!("doc{d}"),
                title: format!("document {d}"),
                sections: vec![Section {
                    section_id: "s1".into(),
                    heading: "body".into(),
                    body,
                }],
            }
        })
        .collect()
}

mod common;

use std::fs;

use proptest::prelude::*;

use methodtree::config::Config;
use methodtree::persist::{load, read_manifest, save, AUDIT};
use methodtree::quality::evolve::{run_loop, LoopParams};
use methodtree::repo::{Providers, Repository};

fn built(seed: u64, docs: usize, per_doc: usize) -> (Repository, Providers) {
    let cfg = Config {
        seed,
        ..Config::default()
    };
    let providers = Providers::stub(&cfg).unwrap();
    let (repo, _) = Repository::build(&common::random_docs(seed, docs, per_doc), cfg, &providers).unwrap();
    (repo, providers)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn roundtrip_identity(seed in any::<u64>(), docs in 2usize..8, per_doc in 2usize..6, iterations in 0usize..4) {
        let (mut repo, providers) = built(seed, docs, per_doc);
        if iterations > 0 {
            let mut params = LoopParams::from_repo(&repo);
            params.iterations = iterations;
            run_loop(&mut repo, &params, &providers).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let first = save(&repo, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        prop_assert_eq!(&back, &repo);
        prop_assert_eq!(save(&back, dir.path()).unwrap(), first);
    }
}

#[test]
fn hundred_node_manifest_is_byte_stable() {
    let (a, _) = built(11, 40, 4);
    let (b, _) = built(11, 40, 4);
    assert!(a.nodes.len() >= 100, "only {} nodes", a.nodes.len());
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save(&a, da.path()).unwrap();
    save(&b, db.path()).unwrap();
    let manifest = |d: &tempfile::TempDir| fs::read(d.path().join("manifest.json")).unwrap();
    assert_eq!(manifest(&da), manifest(&db));
    assert_eq!(load(da.path()).unwrap(), a);
    let m = read_manifest(da.path()).unwrap();
    assert_eq!(m.files["nodes.jsonl"].records, a.nodes.len());
    assert_eq!(m.files["edges.jsonl"].records, a.edges.len());
    assert_eq!(m.files["clusters.jsonl"].records, a.abstraction.cluster_count());
}

fn saved_fixture() -> (tempfile::TempDir, Repository) {
    let (repo, _) = common::fixture_repo();
    let dir = tempfile::tempdir().unwrap();
    save(&repo, dir.path()).unwrap();
    (dir, repo)
}

#[test]
fn truncated_edges_are_refused_by_name() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join("edges.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().take(3).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let err = load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("edges.jsonl") && err.contains("records"), "{err}");
}

#[test]
fn edited_nodes_fail_the_hash_check() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join("nodes.jsonl");
    let text = fs::read_to_string(&path).unwrap().replacen("momentum", "inertia", 1);
    fs::write(&path, text).unwrap();
    let err = load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("nodes.jsonl") && err.contains("hash"), "{err}");
}

#[test]
fn format_version_mismatch_is_refused() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
    fs::write(&path, text).unwrap();
    let err = load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("manifest.json") && err.contains("99"), "{err}");
}

#[test]
fn config_edit_is_refused() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join("config.toml");
    let text = fs::read_to_string(&path).unwrap().replacen("seed = 42", "seed = 43", 1);
    fs::write(&path, text).unwrap();
    let err = load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("config.toml"), "{err}");
}

#[test]
fn audit_log_only_grows_across_saves() {
    let (dir, mut repo) = saved_fixture();
    let providers = Providers::stub(&repo.config).unwrap();
    let before = fs::read_to_string(dir.path().join(AUDIT)).unwrap();
    let mut params = LoopParams::from_repo(&repo);
    params.iterations = 3;
    run_loop(&mut repo, &params, &providers).unwrap();
    save(&repo, dir.path()).unwrap();
    let after = fs::read_to_string(dir.path().join(AUDIT)).unwrap();
    assert!(after.len() > before.len() && after.starts_with(&before));
    assert_eq!(after.lines().count(), repo.audit.len());

    let (other, _) = common::fixture_repo();
    let mut stale = other.clone();
    stale.log(methodtree::audit::Actor::Loop, serde_json::json!({"type": "fork"}));
    assert!(save(&stale, dir.path()).is_err());
    assert_eq!(fs::read_to_string(dir.path().join(AUDIT)).unwrap(), after);
}

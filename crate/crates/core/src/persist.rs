//! Snapshot directories: line-delimited records, a hashed manifest and an
//! append-only audit log.
//!
//! ```text
//! snapshot/
//!   manifest.json     format, versions, counts, sha256 per file
//!   config.toml
//!   nodes.jsonl  edges.jsonl  clusters.jsonl
//!   tree.json  provenance.json  state.json
//!   audit.jsonl       appended to, never rewritten
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{AbstractionTree, TreeSkeleton};
use crate::audit::{AuditLog, AuditRecord};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{ClusterNode, ContributionEdge, MethodNode};
use crate::provenance::{Demotion, ProvenanceTree};
use crate::repo::Repository;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const AUDIT: &str = "audit.jsonl";
pub const EMBEDDING_CACHE: &str = "embeddings.jsonl";

const CONFIG: &str = "config.toml";
const NODES: &str = "nodes.jsonl";
const EDGES: &str = "edges.jsonl";
const CLUSTERS: &str = "clusters.jsonl";
const TREE: &str = "tree.json";
const PROVENANCE: &str = "provenance.json";
const STATE: &str = "state.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub snapshot_version: u64,
    pub config_hash: String,
    /// Hashed files; the audit log is covered by its record count only.
    pub files: BTreeMap<String, FileEntry>,
    pub audit_records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct State {
    version: u64,
    next_node_id: u64,
    demotions: Vec<Demotion>,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<(String, usize)> {
    let mut out = String::new();
    let mut n = 0;
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
        n += 1;
    }
    Ok((out, n))
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temp file beside `path`, then renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_audit(path: &Path) -> Result<Vec<AuditRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    parse_lines(path, &fs::read_to_string(path)?)
}

fn parse_lines<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Snapshot {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Records present in memory but not yet on disk. Fails if the file
/// diverges from memory.
fn audit_tail(path: &Path, log: &AuditLog) -> Result<String> {
    let on_disk = read_audit(path)?;
    let records = log.records();
    if on_disk.len() > records.len() || on_disk[..] != records[..on_disk.len()] {
        return Err(Error::snapshot(path, "audit log on disk diverges from the repository"));
    }
    Ok(jsonl(&records[on_disk.len()..])?.0)
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    Ok(())
}

/// Writes the repository to `dir` and returns the manifest.
pub fn save(repo: &Repository, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let audit_path = dir.join(AUDIT);
    let tail = audit_tail(&audit_path, &repo.audit)?;
    let (skeleton, clusters) = repo.abstraction.to_parts();
    let state = State {
        version: repo.version,
        next_node_id: repo.next_node_id,
        demotions: repo.demotions.clone(),
    };
    let mut files: Vec<(&str, String, usize)> = Vec::new();
    files.push((CONFIG, repo.config.to_toml(), 1));
    let (t, n) = jsonl(repo.nodes.values())?;
    files.push((NODES, t, n));
    let (t, n) = jsonl(&repo.edges)?;
    files.push((EDGES, t, n));
    let (t, n) = jsonl(&clusters)?;
    files.push((CLUSTERS, t, n));
    files.push((TREE, serde_json::to_string(&skeleton)? + "\n", 1));
    files.push((PROVENANCE, serde_json::to_string(&repo.provenance)? + "\n", 1));
    files.push((STATE, serde_json::to_string(&state)? + "\n", 1));

    let mut entries = BTreeMap::new();
    for (name, text, records) in &files {
        write_atomic(&dir.join(name), text.as_bytes())?;
        entries.insert(
            name.to_string(),
            FileEntry {
                sha256: sha(text.as_bytes()),
                records: *records,
            },
        );
    }
    append(&audit_path, &tail)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        snapshot_version: repo.version,
        config_hash: repo.config.hash(),
        files: entries,
        audit_records: repo.audit.len(),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<String> {
    let path: PathBuf = dir.join(name);
    let entry = manifest
        .files
        .get(name)
        .ok_or_else(|| Error::snapshot(&path, "missing from manifest"))?;
    let text = fs::read_to_string(&path).map_err(|e| Error::snapshot(&path, e.to_string()))?;
    let records = if name.ends_with(".jsonl") {
        text.lines().filter(|l| !l.trim().is_empty()).count()
    } else {
        1
    };
    if records != entry.records {
        return Err(Error::snapshot(
            &path,
            format!("holds {records} records, manifest says {}", entry.records),
        ));
    }
    if sha(text.as_bytes()) != entry.sha256 {
        return Err(Error::snapshot(&path, "content hash does not match the manifest"));
    }
    Ok(text)
}

fn parse_one<T: DeserializeOwned>(dir: &Path, name: &str, text: &str) -> Result<T> {
    serde_json::from_str(text.trim()).map_err(|e| Error::snapshot(dir.join(name), e.to_string()))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::snapshot(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::snapshot(&path, e.to_string()))
}

/// Loads and verifies a snapshot written by [`save`].
pub fn load(dir: &Path) -> Result<Repository> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::snapshot(
            dir.join(MANIFEST),
            format!("format version {} unsupported", manifest.format_version),
        ));
    }
    let config = Config::from_toml(&read_checked(dir, CONFIG, &manifest)?)?;
    if config.hash() != manifest.config_hash {
        return Err(Error::snapshot(dir.join(CONFIG), "config hash does not match the manifest"));
    }
    let nodes: Vec<MethodNode> = parse_lines(&dir.join(NODES), &read_checked(dir, NODES, &manifest)?)?;
    let edges: Vec<ContributionEdge> = parse_lines(&dir.join(EDGES), &read_checked(dir, EDGES, &manifest)?)?;
    let clusters: Vec<ClusterNode> = parse_lines(&dir.join(CLUSTERS), &read_checked(dir, CLUSTERS, &manifest)?)?;
    let skeleton: TreeSkeleton = parse_one(dir, TREE, &read_checked(dir, TREE, &manifest)?)?;
    let provenance: ProvenanceTree = parse_one(dir, PROVENANCE, &read_checked(dir, PROVENANCE, &manifest)?)?;
    let state: State = parse_one(dir, STATE, &read_checked(dir, STATE, &manifest)?)?;
    if state.version != manifest.snapshot_version {
        return Err(Error::snapshot(dir.join(STATE), "snapshot version disagrees with the manifest"));
    }
    let audit_path = dir.join(AUDIT);
    let records = read_audit(&audit_path)?;
    if records.len() < manifest.audit_records {
        return Err(Error::snapshot(
            &audit_path,
            format!("holds {} records, manifest says {}", records.len(), manifest.audit_records),
        ));
    }
    let audit = AuditLog::from_records(records).map_err(|e| Error::snapshot(&audit_path, e.to_string()))?;
    Ok(Repository {
        config,
        version: state.version,
        nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
        edges,
        provenance,
        abstraction: AbstractionTree::from_parts(skeleton, clusters)?,
        demotions: state.demotions,
        audit,
        next_node_id: state.next_node_id,
    })
}

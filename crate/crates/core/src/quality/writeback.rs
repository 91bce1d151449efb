//! Append-only write-back of accepted candidates into both trees.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::Actor;
use crate::error::{Error, Result};
use crate::model::{
    embedding_text, rating_to_weight, weight_to_rating, CandidateInnovation, CandidateStatus, ContributionEdge,
    MethodNode, NodeId, NodeStatus, SourceRef,
};
use crate::repo::{Providers, Repository};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WriteBackReport {
    pub written: Vec<NodeId>,
    /// Candidates whose parents disappeared since synthesis.
    pub requeued: Vec<String>,
    pub rebuilt: usize,
    pub version: u64,
}

fn status_of(c: &CandidateInnovation) -> Result<NodeStatus> {
    match c.status {
        CandidateStatus::Verified => Ok(NodeStatus::Verified),
        CandidateStatus::Conjecture => Ok(NodeStatus::Conjecture),
        other => Err(Error::validation(format!(
            "candidate {} is {other:?}, not verification-labeled",
            c.id
        ))),
    }
}

fn keywords_of(parents: &[&MethodNode], operator: &str) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in parents {
        for k in &p.keywords {
            *counts.entry(k.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut out: Vec<String> = ranked.into_iter().take(3).map(|(k, _)| k.to_string()).collect();
    out.push(operator.to_string());
    out
}

/// Adds each labeled candidate as a node with one edge per parent.
///
/// Edge ratings are reverse-mapped from the generator's weight and the
/// attribution share is kept on the edge. The version is bumped once if
/// anything was written.
pub fn write_back(
    repo: &mut Repository,
    candidates: &[CandidateInnovation],
    providers: &Providers,
) -> Result<WriteBackReport> {
    let mut report = WriteBackReport::default();
    for c in candidates {
        let status = status_of(c)?;
        if !NodeStatus::Synthesized.can_transition_to(status) {
            return Err(Error::validation(format!("illegal status {status:?} for {}", c.id)));
        }
        if let Some(missing) = c.parents.iter().find(|p| !repo.nodes.contains_key(&p.id)) {
            let err = Error::Conflict(format!("parent {} of {} vanished", missing.id, c.id));
            repo.log(Actor::Writeback, json!({"type": "requeued", "candidate": c.id, "reason": err.to_string()}));
            report.requeued.push(c.id.clone());
            continue;
        }
        let id = NodeId(repo.next_node_id);
        let parents: Vec<&MethodNode> = c.parents.iter().map(|p| &repo.nodes[&p.id]).collect();
        let name = format!("{}:{}", c.operator, c.id);
        let keywords = keywords_of(&parents, &c.operator);
        let embedding = providers.embedder.embed(&embedding_text(&name, &c.summary, &keywords))?;
        let mut edges = Vec::with_capacity(c.parents.len());
        for p in &c.parents {
            let rating = weight_to_rating(p.weight.clamp(0.0, 1.0));
            edges.push(ContributionEdge {
                src: p.id,
                dst: id,
                rating,
                weight: rating_to_weight(rating)?,
                share: Some(p.share),
                explanation: p.explanation.clone(),
                kind: crate::model::EdgeKind::Supporting,
            });
        }
        let node = MethodNode {
            id,
            name,
            summary: c.summary.clone(),
            keywords,
            embedding,
            status,
            sources: vec![SourceRef {
                doc_id: "synthesis".into(),
                segment_id: c.id.clone(),
            }],
            merged_from: vec![],
        };
        let primary = repo.provenance.insert_node(id, &edges)?;
        for e in &mut edges {
            e.kind = repo.provenance.edge_kind(e.src, e.dst);
        }
        let placed = repo.abstraction.insert_leaf(&node)?;
        repo.next_node_id += 1;
        repo.nodes.insert(id, node);
        repo.edges.extend(edges);
        repo.log(
            Actor::Writeback,
            json!({
                "type": "node_written",
                "candidate": c.id,
                "node": id,
                "status": status.as_str(),
                "parents": c.parents.iter().map(|p| p.id).collect::<Vec<_>>(),
                "primary": primary,
                "cluster": placed.cluster,
            }),
        );
        report.written.push(id);
        if placed.rebuild_due {
            let leaves: Vec<&MethodNode> = repo.nodes.values().collect();
            repo.abstraction
                .rebuild(&leaves, providers.summarizer.as_ref(), providers.embedder.as_ref())?;
            report.rebuilt += 1;
            repo.log(
                Actor::Writeback,
                json!({"type": "tree_rebuilt", "leaves": repo.nodes.len(), "levels": repo.abstraction.level_sizes()}),
            );
        }
    }
    if !report.written.is_empty() {
        let nodes = &repo.nodes;
        let lookup = |id: NodeId| nodes.get(&id).cloned();
        repo.abstraction
            .refresh_stale(&lookup, providers.summarizer.as_ref(), providers.embedder.as_ref())?;
        repo.version += 1;
        repo.log(Actor::Writeback, json!({"type": "snapshot", "version": repo.version, "written": report.written}));
    }
    report.version = repo.version;
    Ok(report)
}

/// Checks that `after` only appended to `before`: nodes unchanged apart from
/// legal status moves, edges a strict prefix, audit records a prefix, and
/// the version not lower.
pub fn check_append_only(before: &Repository, after: &Repository) -> Result<()> {
    if after.version < before.version {
        return Err(Error::integrity("snapshot version went backwards"));
    }
    for (id, old) in &before.nodes {
        let new = after
            .nodes
            .get(id)
            .ok_or_else(|| Error::integrity(format!("{id} was deleted")))?;
        let mut relabeled = old.clone();
        relabeled.status = new.status;
        if &relabeled != new {
            return Err(Error::integrity(format!("{id} was mutated")));
        }
        if old.status != new.status && !old.status.can_transition_to(new.status) {
            return Err(Error::integrity(format!("{id} moved {:?} -> {:?}", old.status, new.status)));
        }
    }
    if after.edges.len() < before.edges.len() || after.edges[..before.edges.len()] != before.edges[..] {
        return Err(Error::integrity("existing edges were rewritten"));
    }
    let (a, b) = (before.audit.records(), after.audit.records());
    if b.len() < a.len() || b[..a.len()] != a[..] {
        return Err(Error::integrity("audit log was rewritten"));
    }
    Ok(())
}

//! Near-duplicate merging of method mentions into canonical nodes.
//!
//! Pairs above the merge threshold are linked and merged transitively
//! (connected components); the smallest id in a component is canonical.

use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::model::{ContributionEdge, EdgeKind, MethodNode, NodeId};

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.92;

/// Connected components of the graph linking pairs with cosine `> delta_merge`.
///
/// Components list ids ascending and are ordered by their smallest id.
pub fn find_merges(nodes: &[MethodNode], delta_merge: f64) -> Result<Vec<Vec<NodeId>>> {
    if !(delta_merge > 0.0 && delta_merge < 1.0) {
        return Err(Error::validation(format!(
            "merge threshold {delta_merge} outside (0, 1)"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..nodes.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = nodes[i].embedding.as_slice();
            ((i + 1)..nodes.len()).filter_map(move |j| {
                (dot(a, nodes[j].embedding.as_slice()) > delta_merge).then_some((i, j))
            })
        })
        .collect();
    let mut uf = UnionFind::<usize>::new(nodes.len());
    for (i, j) in pairs {
        uf.union(i, j);
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(n.id);
    }
    let mut out: Vec<Vec<NodeId>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort_by_key(|g| g[0]);
    Ok(out)
}

/// Collapses one component into its canonical (minimum-id) member.
///
/// Every other member id, and anything those members had absorbed earlier,
/// lands in `merged_from`; sources are concatenated so no mention is lost.
pub fn canonicalize(members: &[&MethodNode], embedder: &dyn EmbeddingProvider) -> Result<MethodNode> {
    let canonical = members
        .iter()
        .min_by_key(|m| m.id)
        .ok_or_else(|| Error::validation("cannot canonicalize an empty component"))?;
    if members.len() == 1 {
        return Ok((*canonical).clone());
    }
    let mut node = (*canonical).clone();
    let mut sources = Vec::new();
    let mut merged = canonical.merged_from.clone();
    for m in members {
        sources.extend(m.sources.iter().cloned());
        if m.id != canonical.id {
            merged.push(m.id);
            merged.extend(m.merged_from.iter().copied());
        }
    }
    sources.sort();
    merged.sort();
    merged.dedup();
    node.sources = sources;
    node.merged_from = merged;
    node.embedding = embedder.embed(&node.embedding_text())?;
    Ok(node)
}

/// Rewrites edge endpoints through `mapping`, dropping collapsed self-loops
/// and merging parallel edges (maximum weight wins, explanations joined).
pub fn remap_edges(
    edges: &[ContributionEdge],
    mapping: &BTreeMap<NodeId, NodeId>,
) -> Result<Vec<ContributionEdge>> {
    let resolve = |id: NodeId| {
        mapping
            .get(&id)
            .copied()
            .ok_or_else(|| Error::integrity(format!("edge endpoint {id} missing from merge mapping")))
    };
    let mut merged: BTreeMap<(NodeId, NodeId), (ContributionEdge, Vec<String>)> = BTreeMap::new();
    for e in edges {
        let (src, dst) = (resolve(e.src)?, resolve(e.dst)?);
        if src == dst {
            continue;
        }
        match merged.get_mut(&(src, dst)) {
            Some((best, explanations)) => {
                explanations.push(e.explanation.clone());
                if e.weight > best.weight {
                    best.rating = e.rating;
                    best.weight = e.weight;
                }
            }
            None => {
                let mut edge = e.clone();
                edge.src = src;
                edge.dst = dst;
                edge.share = None;
                edge.kind = EdgeKind::Supporting;
                merged.insert((src, dst), (edge, vec![e.explanation.clone()]));
            }
        }
    }
    Ok(merged
        .into_values()
        .map(|(mut e, explanations)| {
            e.explanation = explanations.join(" | ");
            e
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub canonical: NodeId,
    pub members: Vec<NodeId>,
    pub delta_merge: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DedupOutcome {
    pub nodes: Vec<MethodNode>,
    pub edges: Vec<ContributionEdge>,
    /// One record per component, singletons included.
    pub merges: Vec<MergeRecord>,
}

/// `find_merges` → `canonicalize` → `remap_edges` in one pass.
pub fn deduplicate(
    nodes: &[MethodNode],
    edges: &[ContributionEdge],
    delta_merge: f64,
    embedder: &dyn EmbeddingProvider,
) -> Result<DedupOutcome> {
    let by_id: BTreeMap<NodeId, &MethodNode> = nodes.iter().map(|n| (n.id, n)).collect();
    if by_id.len() != nodes.len() {
        return Err(Error::integrity("duplicate node ids before dedup"));
    }
    let components = find_merges(nodes, delta_merge)?;
    let mut mapping = BTreeMap::new();
    let mut out_nodes = Vec::with_capacity(components.len());
    let mut merges = Vec::with_capacity(components.len());
    for comp in &components {
        let members: Vec<&MethodNode> = comp.iter().map(|id| by_id[id]).collect();
        let canonical = canonicalize(&members, embedder)?;
        for id in comp {
            mapping.insert(*id, canonical.id);
        }
        merges.push(MergeRecord {
            canonical: canonical.id,
            members: comp.clone(),
            delta_merge,
        });
        out_nodes.push(canonical);
    }
    let edges = remap_edges(edges, &mapping)?;
    Ok(DedupOutcome {
        nodes: out_nodes,
        edges,
        merges,
    })
}

//! The abstraction tree: recursive clustering of method embeddings into a
//! fixed number of summarized levels.
//!
//! Level 1 clusters the leaf methods; level `t` clusters the summary
//! embeddings of level `t − 1`. The top level is a multi-root layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::kmeans::{mini_batch_kmeans, MiniBatchParams};
use crate::model::{Children, ClusterId, ClusterNode, Embedding, MethodNode, NodeId};
use crate::provenance::escape;

/// `ceil` that ignores float noise below 1e-9 (so `5.000000000000001` → 5).
pub fn ceil_tolerant(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSchedule {
    pub levels: usize,
    pub k1: usize,
    pub kn: usize,
    pub kmin: usize,
    /// Geometric decay factor; 1 when there is a single level or `kn == k1`.
    pub rho: f64,
    /// `K_t` for `t = 1..=levels`.
    pub sizes: Vec<usize>,
}

/// Geometric cluster-count schedule
/// `K_t = max(K_min, ceil(K_1 ρ^(t−1)))`, `ρ = (K_n / K_1)^(1/(n−1))`.
///
/// `K_1` defaults to `ceil(sqrt(N0))` and `K_n` to `clamp(ceil(K_1/4), 5, 20)`
/// capped at `K_1`.
pub fn schedule(
    leaf_count: usize,
    levels: usize,
    k1: Option<usize>,
    kn: Option<usize>,
    kmin: usize,
) -> Result<ClusterSchedule> {
    if levels < 1 {
        return Err(Error::validation("schedule needs at least one level"));
    }
    if kmin < 1 {
        return Err(Error::validation("K_min must be at least 1"));
    }
    let k1 = k1.unwrap_or_else(|| ((leaf_count as f64).sqrt().ceil() as usize).max(1));
    let kn = kn.unwrap_or_else(|| ceil_tolerant(k1 as f64 / 4.0).clamp(5, 20).min(k1));
    if kn < 1 {
        return Err(Error::validation("K_n must be at least 1"));
    }
    if kn > k1 {
        return Err(Error::validation(format!("K_n = {kn} exceeds K_1 = {k1}")));
    }
    if k1 > leaf_count.max(1) {
        return Err(Error::validation(format!(
            "K_1 = {k1} exceeds the leaf count {leaf_count}"
        )));
    }
    let rho = if levels >= 2 {
        (kn as f64 / k1 as f64).powf(1.0 / (levels - 1) as f64)
    } else {
        1.0
    };
    let sizes = (1..=levels)
        .map(|t| kmin.max(ceil_tolerant(k1 as f64 * rho.powi(t as i32 - 1))))
        .collect();
    Ok(ClusterSchedule {
        levels,
        k1,
        kn,
        kmin,
        rho,
        sizes,
    })
}

/// A clustering input: anything with an id and an embedding.
pub fn cluster_level<K: Ord + Clone + Sync>(
    items: &[(K, &Embedding)],
    k: usize,
    seed: u64,
    params: MiniBatchParams,
) -> Result<Vec<Vec<K>>> {
    let raw: Vec<(K, &[f64])> = items.iter().map(|(k, e)| (k.clone(), e.as_slice())).collect();
    mini_batch_kmeans(&raw, k, seed, params)
}

/// What a summarizer sees for each cluster member.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryMember {
    pub key: String,
    pub text: String,
    pub keywords: Vec<String>,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSummary {
    pub text: String,
    pub keywords: Vec<String>,
}

pub trait Summarizer: Send + Sync {
    fn id(&self) -> &str;
    fn summarize(&self, members: &[SummaryMember]) -> Result<ClusterSummary>;
}

/// Deterministic summarizer: the medoid's text prefixed with the three most
/// frequent member keywords.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubSummarizer;

/// Member with the smallest total cosine distance to the others; ties go
/// to the earlier member.
pub fn medoid(members: &[SummaryMember]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in members.iter().enumerate() {
        let total: f64 = members
            .iter()
            .map(|o| 1.0 - dot(m.embedding.as_slice(), o.embedding.as_slice()))
            .sum();
        if best.is_none_or(|(_, b)| total < b) {
            best = Some((i, total));
        }
    }
    best.map(|(i, _)| i)
}

/// Up to `n` keywords by frequency across members, ties alphabetical.
pub fn top_keywords(members: &[SummaryMember], n: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        for k in &m.keywords {
            *counts.entry(k.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(k, _)| k.to_string()).collect()
}

impl Summarizer for StubSummarizer {
    fn id(&self) -> &str {
        "stub-medoid"
    }

    fn summarize(&self, members: &[SummaryMember]) -> Result<ClusterSummary> {
        let m = medoid(members).ok_or_else(|| Error::validation("cannot summarize an empty cluster"))?;
        let keywords = top_keywords(members, 3);
        let text = if keywords.is_empty() {
            members[m].text.clone()
        } else {
            format!("{}: {}", keywords.join(" "), members[m].text)
        };
        Ok(ClusterSummary { text, keywords })
    }
}

/// Summarizes one cluster and embeds the summary.
pub fn summarize_cluster(
    cluster: ClusterId,
    members: &[SummaryMember],
    summarizer: &dyn Summarizer,
    embedder: &dyn EmbeddingProvider,
) -> Result<(ClusterSummary, Embedding)> {
    if members.is_empty() {
        return Err(Error::validation(format!("{cluster} has no members")));
    }
    let tag = |e: Error| match e {
        Error::Provider { provider, message, retriable } => Error::Provider {
            provider,
            message: format!("{cluster}: {message}"),
            retriable,
        },
        other => other,
    };
    let summary = summarizer.summarize(members).map_err(tag)?;
    let embedding = embedder.embed(&summary.text).map_err(tag)?;
    Ok((summary, embedding))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub levels: usize,
    pub k1: Option<usize>,
    pub kn: Option<usize>,
    pub kmin: usize,
    pub seed: u64,
    /// Full rebuild after this many incremental insertions (0 disables).
    pub rebuild_every: usize,
    pub batch_size: usize,
    pub max_iterations: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            levels: 3,
            k1: None,
            kn: None,
            kmin: 1,
            seed: 42,
            rebuild_every: 64,
            batch_size: 64,
            max_iterations: 50,
        }
    }
}

impl TreeParams {
    fn kmeans(&self) -> MiniBatchParams {
        MiniBatchParams {
            batch_size: self.batch_size,
            max_iterations: self.max_iterations,
        }
    }
}

/// Everything in an [`AbstractionTree`] except the cluster records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSkeleton {
    pub params: TreeParams,
    pub levels: Vec<Vec<ClusterId>>,
    pub next_id: u64,
    pub inserts_since_rebuild: usize,
    pub rebuilds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InsertOutcome {
    pub cluster: ClusterId,
    /// The insertion counter reached the rebuild period.
    pub rebuild_due: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AbstractionTree {
    params: TreeParams,
    /// `levels[t − 1]` holds the clusters of level `t`, ascending.
    levels: Vec<Vec<ClusterId>>,
    clusters: BTreeMap<ClusterId, ClusterNode>,
    leaf_parent: BTreeMap<NodeId, ClusterId>,
    cluster_parent: BTreeMap<ClusterId, ClusterId>,
    next_id: u64,
    inserts_since_rebuild: usize,
    rebuilds: usize,
}

fn leaf_member(n: &MethodNode) -> SummaryMember {
    SummaryMember {
        key: n.id.to_string(),
        text: n.summary.clone(),
        keywords: n.keywords.clone(),
        embedding: n.embedding.clone(),
    }
}

fn cluster_member(c: &ClusterNode) -> SummaryMember {
    SummaryMember {
        key: c.id.to_string(),
        text: c.summary.clone(),
        keywords: c.keywords.clone(),
        embedding: c.summary_embedding.clone(),
    }
}

impl AbstractionTree {
    pub fn empty(params: TreeParams) -> Self {
        AbstractionTree {
            params,
            ..Default::default()
        }
    }

    /// Builds all levels from scratch over `leaves`.
    pub fn build(
        leaves: &[&MethodNode],
        params: TreeParams,
        summarizer: &dyn Summarizer,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        let mut tree = AbstractionTree::empty(params);
        tree.build_levels(leaves, summarizer, embedder)?;
        Ok(tree)
    }

    fn fresh_id(&mut self) -> ClusterId {
        let id = ClusterId(self.next_id);
        self.next_id += 1;
        id
    }

    fn build_levels(
        &mut self,
        leaves: &[&MethodNode],
        summarizer: &dyn Summarizer,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<()> {
        self.levels.clear();
        self.clusters.clear();
        self.leaf_parent.clear();
        self.cluster_parent.clear();
        self.inserts_since_rebuild = 0;
        if leaves.is_empty() {
            return Ok(());
        }
        let sched = schedule(leaves.len(), self.params.levels, self.params.k1, self.params.kn, self.params.kmin)?;
        let by_id: HashMap<NodeId, &MethodNode> = leaves.iter().map(|n| (n.id, *n)).collect();

        let items: Vec<(NodeId, &Embedding)> = leaves.iter().map(|n| (n.id, &n.embedding)).collect();
        let groups = cluster_level(&items, sched.sizes[0], self.params.seed, self.params.kmeans())?;
        let mut current = Vec::with_capacity(groups.len());
        for g in groups {
            let id = self.fresh_id();
            let members: Vec<SummaryMember> = g.iter().map(|m| leaf_member(by_id[m])).collect();
            let (summary, embedding) = summarize_cluster(id, &members, summarizer, embedder)?;
            for m in &g {
                self.leaf_parent.insert(*m, id);
            }
            self.clusters.insert(
                id,
                ClusterNode {
                    id,
                    level: 1,
                    children: Children::Leaves(g),
                    summary: summary.text,
                    keywords: summary.keywords,
                    summary_embedding: embedding,
                    stale: false,
                },
            );
            current.push(id);
        }
        self.levels.push(current.clone());

        for t in 2..=sched.levels {
            let items: Vec<(ClusterId, &Embedding)> = current
                .iter()
                .map(|c| (*c, &self.clusters[c].summary_embedding))
                .collect();
            let seed = self.params.seed.wrapping_add(t as u64 - 1);
            let groups = cluster_level(&items, sched.sizes[t - 1], seed, self.params.kmeans())?;
            let mut next = Vec::with_capacity(groups.len());
            for g in groups {
                let id = self.fresh_id();
                let members: Vec<SummaryMember> = g.iter().map(|c| cluster_member(&self.clusters[c])).collect();
                let (summary, embedding) = summarize_cluster(id, &members, summarizer, embedder)?;
                for c in &g {
                    self.cluster_parent.insert(*c, id);
                }
                self.clusters.insert(
                    id,
                    ClusterNode {
                        id,
                        level: t,
                        children: Children::Clusters(g),
                        summary: summary.text,
                        keywords: summary.keywords,
                        summary_embedding: embedding,
                        stale: false,
                    },
                );
                next.push(id);
            }
            self.levels.push(next.clone());
            current = next;
        }
        Ok(())
    }

    /// Full rebuild from the given leaf set, keeping parameters and the id counter.
    pub fn rebuild(
        &mut self,
        leaves: &[&MethodNode],
        summarizer: &dyn Summarizer,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<()> {
        self.build_levels(leaves, summarizer, embedder)?;
        self.rebuilds += 1;
        Ok(())
    }

    /// Attaches `node` to the level-1 cluster whose summary embedding is
    /// closest, marking that cluster and its ancestors stale. An empty tree
    /// grows a one-cluster-per-level spine.
    pub fn insert_leaf(&mut self, node: &MethodNode) -> Result<InsertOutcome> {
        if self.leaf_parent.contains_key(&node.id) {
            return Err(Error::integrity(format!("{} is already a leaf", node.id)));
        }
        let cluster = if self.levels.is_empty() {
            self.grow_spine(node)
        } else {
            let target = self.levels[0]
                .iter()
                .map(|c| (*c, dot(node.embedding.as_slice(), self.clusters[c].summary_embedding.as_slice())))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(c, _)| c)
                .expect("level 1 is non-empty");
            if let Some(ClusterNode {
                children: Children::Leaves(ls),
                ..
            }) = self.clusters.get_mut(&target)
            {
                ls.push(node.id);
                ls.sort();
            }
            self.leaf_parent.insert(node.id, target);
            self.mark_stale(target);
            target
        };
        self.inserts_since_rebuild += 1;
        let rebuild_due = self.params.rebuild_every > 0 && self.inserts_since_rebuild >= self.params.rebuild_every;
        Ok(InsertOutcome { cluster, rebuild_due })
    }

    fn grow_spine(&mut self, node: &MethodNode) -> ClusterId {
        let mut below: Option<ClusterId> = None;
        let mut first = None;
        for t in 1..=self.params.levels.max(1) {
            let id = self.fresh_id();
            let children = match below {
                None => Children::Leaves(vec![node.id]),
                Some(c) => {
                    self.cluster_parent.insert(c, id);
                    Children::Clusters(vec![c])
                }
            };
            self.clusters.insert(
                id,
                ClusterNode {
                    id,
                    level: t,
                    children,
                    summary: node.summary.clone(),
                    keywords: node.keywords.clone(),
                    summary_embedding: node.embedding.clone(),
                    stale: true,
                },
            );
            self.levels.push(vec![id]);
            first.get_or_insert(id);
            below = Some(id);
        }
        let first = first.unwrap();
        self.leaf_parent.insert(node.id, first);
        first
    }

    fn mark_stale(&mut self, from: ClusterId) {
        let mut cur = Some(from);
        while let Some(c) = cur {
            if let Some(node) = self.clusters.get_mut(&c) {
                node.stale = true;
            }
            cur = self.cluster_parent.get(&c).copied();
        }
    }

    /// Recomputes summaries of stale clusters, lowest level first.
    pub fn refresh_stale(
        &mut self,
        leaf_lookup: &dyn Fn(NodeId) -> Option<MethodNode>,
        summarizer: &dyn Summarizer,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<usize> {
        let mut refreshed = 0;
        for level in self.levels.clone() {
            for c in level {
                if !self.clusters[&c].stale {
                    continue;
                }
                let members: Vec<SummaryMember> = match &self.clusters[&c].children {
                    Children::Leaves(ls) => ls
                        .iter()
                        .map(|l| {
                            leaf_lookup(*l)
                                .map(|n| leaf_member(&n))
                                .ok_or_else(|| Error::lookup(format!("leaf {l} of {c} not found")))
                        })
                        .collect::<Result<_>>()?,
                    Children::Clusters(cs) => cs.iter().map(|x| cluster_member(&self.clusters[x])).collect(),
                };
                let (summary, embedding) = summarize_cluster(c, &members, summarizer, embedder)?;
                let node = self.clusters.get_mut(&c).unwrap();
                node.summary = summary.text;
                node.keywords = summary.keywords;
                node.summary_embedding = embedding;
                node.stale = false;
                refreshed += 1;
            }
        }
        Ok(refreshed)
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Cluster ids at `level` (1-based).
    pub fn level(&self, level: usize) -> &[ClusterId] {
        level
            .checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .map_or(&[], Vec::as_slice)
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn top_level(&self) -> &[ClusterId] {
        self.levels.last().map_or(&[], Vec::as_slice)
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&ClusterNode> {
        self.clusters.get(&id)
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterNode> {
        self.clusters.values()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_parent.len()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.leaf_parent.keys().copied()
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn inserts_since_rebuild(&self) -> usize {
        self.inserts_since_rebuild
    }

    pub fn parent_of_leaf(&self, leaf: NodeId) -> Option<ClusterId> {
        self.leaf_parent.get(&leaf).copied()
    }

    pub fn parent_of_cluster(&self, c: ClusterId) -> Option<ClusterId> {
        self.cluster_parent.get(&c).copied()
    }

    /// Cluster path from the top level down to the leaf's level-1 cluster.
    pub fn path_to_leaf(&self, leaf: NodeId) -> Vec<ClusterId> {
        let mut path = Vec::new();
        let mut cur = self.parent_of_leaf(leaf);
        while let Some(c) = cur {
            path.push(c);
            cur = self.parent_of_cluster(c);
        }
        path.reverse();
        path
    }

    pub fn top_cluster_of(&self, leaf: NodeId) -> Option<ClusterId> {
        self.path_to_leaf(leaf).first().copied()
    }

    /// Splits into the level skeleton and the cluster records.
    pub fn to_parts(&self) -> (TreeSkeleton, Vec<ClusterNode>) {
        (
            TreeSkeleton {
                params: self.params.clone(),
                levels: self.levels.clone(),
                next_id: self.next_id,
                inserts_since_rebuild: self.inserts_since_rebuild,
                rebuilds: self.rebuilds,
            },
            self.clusters.values().cloned().collect(),
        )
    }

    /// Reassembles a tree, re-deriving parent links from cluster children.
    pub fn from_parts(skeleton: TreeSkeleton, clusters: Vec<ClusterNode>) -> Result<Self> {
        let mut tree = AbstractionTree {
            params: skeleton.params,
            levels: skeleton.levels,
            next_id: skeleton.next_id,
            inserts_since_rebuild: skeleton.inserts_since_rebuild,
            rebuilds: skeleton.rebuilds,
            ..Default::default()
        };
        for c in clusters {
            match &c.children {
                Children::Leaves(ls) => {
                    for l in ls {
                        tree.leaf_parent.insert(*l, c.id);
                    }
                }
                Children::Clusters(cs) => {
                    for x in cs {
                        tree.cluster_parent.insert(*x, c.id);
                    }
                }
            }
            if tree.clusters.insert(c.id, c).is_some() {
                return Err(Error::integrity("duplicate cluster id"));
            }
        }
        for id in tree.levels.iter().flatten() {
            if !tree.clusters.contains_key(id) {
                return Err(Error::integrity(format!("{id} listed in a level but has no record")));
            }
        }
        if tree.levels.iter().map(Vec::len).sum::<usize>() != tree.clusters.len() {
            return Err(Error::integrity("cluster records not referenced by any level"));
        }
        Ok(tree)
    }

    /// Verifies the partition property at every level against `leaves`.
    pub fn check_partition(&self, leaves: &BTreeSet<NodeId>) -> Result<()> {
        let mut expected: BTreeSet<String> = leaves.iter().map(|l| l.to_string()).collect();
        for (i, level) in self.levels.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for c in level {
                let node = self
                    .clusters
                    .get(c)
                    .ok_or_else(|| Error::integrity(format!("{c} listed but missing")))?;
                if node.level != i + 1 {
                    return Err(Error::integrity(format!("{c} has level {} in slot {}", node.level, i + 1)));
                }
                if node.children.is_empty() {
                    return Err(Error::integrity(format!("{c} has no children")));
                }
                match (&node.children, i) {
                    (Children::Leaves(_), 0) | (Children::Clusters(_), 1..) => {}
                    _ => return Err(Error::integrity(format!("{c} has children of the wrong kind"))),
                }
                for child in node.children.refs() {
                    if !seen.insert(child.to_string()) {
                        return Err(Error::integrity(format!("{child} appears under two clusters at level {}", i + 1)));
                    }
                }
            }
            if seen != expected {
                return Err(Error::integrity(format!("level {} does not partition the level below", i + 1)));
            }
            expected = level.iter().map(|c| c.to_string()).collect();
        }
        Ok(())
    }

    /// Graphviz rendering of the cluster hierarchy.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph abstraction {\n  rankdir=TB;\n");
        for c in self.clusters.values() {
            let _ = writeln!(
                out,
                "  \"{}\" [shape=box, label=\"{} L{}\\n{}\"];",
                c.id,
                c.id,
                c.level,
                escape(&c.keywords.join(" "))
            );
            for child in c.children.refs() {
                let _ = writeln!(out, "  \"{}\" -> \"{child}\";", c.id);
            }
        }
        out.push_str("}\n");
        out
    }
}

//! The provenance tree: a primary-parent backbone over the contribution
//! graph, supporting edges kept alongside, and weight-adaptive backtracking
//! along the backbone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AncestorEntry, ContributionEdge, EdgeKind, NodeId, Scored};

pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_MAX_ANCESTORS: usize = 6;
pub const DEFAULT_DEPTH_MIN: usize = 1;
pub const DEFAULT_DEPTH_RANGE: usize = 4;
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParentLink {
    pub parent: NodeId,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportEdge {
    pub src: NodeId,
    pub weight: f64,
    /// The edge outranked the chosen primary but would have closed a cycle.
    pub demoted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demotion {
    pub src: NodeId,
    pub dst: NodeId,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceTree {
    nodes: BTreeSet<NodeId>,
    primary: BTreeMap<NodeId, ParentLink>,
    supporting: BTreeMap<NodeId, Vec<SupportEdge>>,
    supporting_out: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncestorStep {
    pub id: NodeId,
    pub depth: usize,
    pub influence: f64,
}

/// One backtracking decision, kept for the retrieval trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktrackDecision {
    pub leaf: NodeId,
    pub ancestor: NodeId,
    pub depth: usize,
    pub influence: f64,
    pub included: bool,
}

fn candidate_order(a: &ContributionEdge, b: &ContributionEdge) -> std::cmp::Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then_with(|| b.share.unwrap_or(0.0).total_cmp(&a.share.unwrap_or(0.0)))
        .then(a.src.cmp(&b.src))
}

impl ProvenanceTree {
    /// Selects a primary parent for every node with incoming edges.
    ///
    /// Candidates are tried by weight (then share) descending, smaller
    /// source id first. A candidate that would close a backbone cycle is
    /// demoted to a flagged supporting edge and the next one is tried.
    pub fn build(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: &[ContributionEdge],
    ) -> Result<(ProvenanceTree, Vec<Demotion>)> {
        let mut tree = ProvenanceTree {
            nodes: nodes.into_iter().collect(),
            ..Default::default()
        };
        let mut incoming: BTreeMap<NodeId, Vec<&ContributionEdge>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for e in edges {
            if e.src == e.dst {
                return Err(Error::integrity(format!("self-loop on {}", e.src)));
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(Error::integrity(format!("duplicate edge {} -> {}", e.src, e.dst)));
            }
            for end in [e.src, e.dst] {
                if !tree.nodes.contains(&end) {
                    return Err(Error::integrity(format!("edge endpoint {end} is not a node")));
                }
            }
            incoming.entry(e.dst).or_default().push(e);
        }
        let mut demotions = Vec::new();
        for (dst, mut cands) in incoming {
            cands.sort_by(|a, b| candidate_order(a, b));
            let mut chosen = None;
            let mut support = Vec::new();
            for e in cands {
                if chosen.is_none() {
                    if tree.reaches(e.src, dst) {
                        demotions.push(Demotion {
                            src: e.src,
                            dst,
                            weight: e.weight,
                        });
                        support.push(SupportEdge {
                            src: e.src,
                            weight: e.weight,
                            demoted: true,
                        });
                    } else {
                        chosen = Some(ParentLink {
                            parent: e.src,
                            weight: e.weight,
                        });
                        tree.primary.insert(dst, chosen.clone().unwrap());
                    }
                } else {
                    support.push(SupportEdge {
                        src: e.src,
                        weight: e.weight,
                        demoted: false,
                    });
                }
            }
            for s in &support {
                tree.supporting_out.entry(s.src).or_default().insert(dst);
            }
            if !support.is_empty() {
                tree.supporting.insert(dst, support);
            }
        }
        Ok((tree, demotions))
    }

    /// Whether walking up from `from` reaches `target` (or `from == target`).
    fn reaches(&self, from: NodeId, target: NodeId) -> bool {
        let mut cur = Some(from);
        let mut steps = 0;
        while let Some(n) = cur {
            if n == target {
                return true;
            }
            steps += 1;
            if steps > self.nodes.len() {
                return true;
            }
            cur = self.primary.get(&n).map(|l| l.parent);
        }
        false
    }

    /// Adds a fresh node with its incoming edges. Only the new node's
    /// primary parent is selected; existing links are left alone.
    pub fn insert_node(&mut self, id: NodeId, incoming: &[ContributionEdge]) -> Result<Option<NodeId>> {
        if self.nodes.contains(&id) {
            return Err(Error::integrity(format!("{id} already in provenance tree")));
        }
        for e in incoming {
            if e.dst != id {
                return Err(Error::integrity(format!("edge {} -> {} does not target {id}", e.src, e.dst)));
            }
            if !self.nodes.contains(&e.src) {
                return Err(Error::integrity(format!("parent {} is not a node", e.src)));
            }
        }
        self.nodes.insert(id);
        let mut cands: Vec<&ContributionEdge> = incoming.iter().collect();
        cands.sort_by(|a, b| candidate_order(a, b));
        let Some((first, rest)) = cands.split_first() else {
            return Ok(None);
        };
        self.primary.insert(
            id,
            ParentLink {
                parent: first.src,
                weight: first.weight,
            },
        );
        if !rest.is_empty() {
            self.supporting.insert(
                id,
                rest.iter()
                    .map(|e| SupportEdge {
                        src: e.src,
                        weight: e.weight,
                        demoted: false,
                    })
                    .collect(),
            );
            for e in rest {
                self.supporting_out.entry(e.src).or_default().insert(id);
            }
        }
        Ok(Some(first.src))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn primary_parent(&self, id: NodeId) -> Option<&ParentLink> {
        self.primary.get(&id)
    }

    pub fn supporting(&self, id: NodeId) -> &[SupportEdge] {
        self.supporting.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Nodes that `id` supports (outgoing supporting edges).
    pub fn supported_by(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.supporting_out.get(&id).into_iter().flatten().copied()
    }

    pub fn roots(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied().filter(|n| !self.primary.contains_key(n))
    }

    pub fn edge_kind(&self, src: NodeId, dst: NodeId) -> EdgeKind {
        match self.primary.get(&dst) {
            Some(l) if l.parent == src => EdgeKind::Primary,
            _ => EdgeKind::Supporting,
        }
    }

    /// Primary-parent chain above `id`, nearest first, as `(ancestor, edge weight)`.
    pub fn chain(&self, id: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let mut cur = id;
        std::iter::from_fn(move || {
            let link = self.primary.get(&cur)?;
            cur = link.parent;
            Some((link.parent, link.weight))
        })
    }

    /// Backbone nodes in an order where parents precede children, or an
    /// error naming a node on a cycle.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (*n, 0)).collect();
        for (child, link) in &self.primary {
            children.entry(link.parent).or_default().push(*child);
            *indegree.get_mut(child).unwrap() += 1;
        }
        let mut queue: VecDeque<NodeId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = queue.pop_front() {
            order.push(n);
            for c in children.get(&n).into_iter().flatten() {
                let d = indegree.get_mut(c).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(*c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree.iter().find(|(_, d)| **d > 0).map(|(n, _)| *n).unwrap();
            return Err(Error::integrity(format!("provenance backbone has a cycle through {stuck}")));
        }
        Ok(order)
    }

    /// Backbone acyclicity plus primary-weight maximality over every
    /// supporting edge that is not flagged as a demotion.
    pub fn check_invariants(&self) -> Result<()> {
        self.topological_order()?;
        for (dst, supports) in &self.supporting {
            let Some(link) = self.primary.get(dst) else {
                if supports.iter().any(|s| !s.demoted) {
                    return Err(Error::integrity(format!("root {dst} has unflagged supporting edges")));
                }
                continue;
            };
            if let Some(s) = supports.iter().find(|s| !s.demoted && s.weight > link.weight) {
                return Err(Error::integrity(format!(
                    "{dst}: supporting edge from {} ({}) outweighs primary ({})",
                    s.src, s.weight, link.weight
                )));
            }
        }
        Ok(())
    }

    /// Ancestors of `leaf` whose cumulative influence stays at or above `tau`.
    ///
    /// `I_d = Π_{ℓ ≤ d} min(w_ℓ + ε, 1)`; the walk stops at the first depth
    /// beyond `max_depth` or below `tau`, or at a root.
    pub fn backtrack(&self, leaf: NodeId, tau: f64, max_depth: usize, epsilon: f64) -> Result<Vec<AncestorStep>> {
        Ok(self
            .backtrack_traced(leaf, tau, max_depth, epsilon)?
            .into_iter()
            .filter(|d| d.included)
            .map(|d| AncestorStep {
                id: d.ancestor,
                depth: d.depth,
                influence: d.influence,
            })
            .collect())
    }

    fn backtrack_traced(&self, leaf: NodeId, tau: f64, max_depth: usize, epsilon: f64) -> Result<Vec<BacktrackDecision>> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::validation(format!("tau {tau} outside (0, 1)")));
        }
        if max_depth < 1 {
            return Err(Error::validation("max ancestor depth must be at least 1"));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::validation(format!("epsilon {epsilon} must be >= 0")));
        }
        if !self.nodes.contains(&leaf) {
            return Err(Error::lookup(format!("{leaf} is not in the provenance tree")));
        }
        let mut out = Vec::new();
        let mut influence = 1.0;
        for (depth, (ancestor, weight)) in self.chain(leaf).enumerate().map(|(i, x)| (i + 1, x)) {
            influence *= (weight + epsilon).min(1.0);
            let included = depth <= max_depth && influence >= tau;
            out.push(BacktrackDecision {
                leaf,
                ancestor,
                depth,
                influence,
                included,
            });
            if !included {
                break;
            }
        }
        Ok(out)
    }

    /// `C_q` ancestors for a set of retrieved leaves: per-leaf backtracking,
    /// duplicates collapsed to their highest influence.
    pub fn collect_context(
        &self,
        leaves: &[Scored<NodeId>],
        tau: f64,
        max_depth: usize,
        epsilon: f64,
    ) -> Result<(Vec<AncestorEntry>, Vec<BacktrackDecision>)> {
        let mut best: BTreeMap<NodeId, AncestorEntry> = BTreeMap::new();
        let mut decisions = Vec::new();
        for leaf in leaves {
            let steps = self.backtrack_traced(leaf.id, tau, max_depth, epsilon)?;
            for d in &steps {
                if !d.included {
                    continue;
                }
                let entry = AncestorEntry {
                    id: d.ancestor,
                    source_leaf: leaf.id,
                    depth: d.depth,
                    influence: d.influence,
                };
                match best.get(&d.ancestor) {
                    Some(prev)
                        if prev.influence > entry.influence
                            || (prev.influence == entry.influence
                                && (prev.depth, prev.source_leaf) <= (entry.depth, entry.source_leaf)) => {}
                    _ => {
                        best.insert(d.ancestor, entry);
                    }
                }
            }
            decisions.extend(steps);
        }
        let mut ancestors: Vec<AncestorEntry> = best.into_values().collect();
        ancestors.sort_by(|a, b| b.influence.total_cmp(&a.influence).then(a.id.cmp(&b.id)));
        Ok((ancestors, decisions))
    }

    /// Graphviz rendering: solid primary links, dashed supporting edges.
    pub fn to_dot(&self, label: impl Fn(NodeId) -> String) -> String {
        let mut out = String::from("digraph provenance {\n  rankdir=BT;\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{n}\" [label=\"{}\"];", escape(&label(*n)));
        }
        for (child, link) in &self.primary {
            let _ = writeln!(out, "  \"{}\" -> \"{child}\" [label=\"{:.2}\"];", link.parent, link.weight);
        }
        for (dst, supports) in &self.supporting {
            for s in supports {
                let _ = writeln!(
                    out,
                    "  \"{}\" -> \"{dst}\" [label=\"{:.2}\", style=dashed{}];",
                    s.src,
                    s.weight,
                    if s.demoted { ", color=red" } else { "" }
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// `d_min + floor(d_range · share^γ)`.
pub fn adaptive_depth(share: f64, d_min: usize, d_range: usize, gamma: f64) -> Result<usize> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::validation(format!("gamma must be > 0, got {gamma}")));
    }
    if !(0.0..=1.0).contains(&share) {
        return Err(Error::validation(format!("share {share} outside [0, 1]")));
    }
    Ok(d_min + (d_range as f64 * share.powf(gamma)).floor() as usize)
}

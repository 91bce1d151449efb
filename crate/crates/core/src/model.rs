//! Shared domain types: method nodes, contribution edges, cluster nodes,
//! retrieval contexts and synthesized candidates.
//!
//! Everything here is a plain value. Mutation happens by building a new
//! repository snapshot, never by editing these in place behind a reader.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ε used wherever a small stabilizer is needed.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Tolerance for the unit-norm embedding invariant.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

impl std::str::FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix('m').unwrap_or(s);
        digits
            .parse()
            .map(NodeId)
            .map_err(|_| Error::validation(format!("bad node id `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// A node reachable in the abstraction tree: either a cluster or a leaf method.
///
/// Clusters order before leaves; within a kind the numeric id decides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TreeRef {
    Cluster(ClusterId),
    Leaf(NodeId),
}

impl fmt::Display for TreeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeRef::Cluster(c) => c.fmt(f),
            TreeRef::Leaf(m) => m.fmt(f),
        }
    }
}

/// Dense embedding vector. Constructed unit-norm by every provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps raw values and scales them to unit L2 norm.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::validation("cannot normalize a zero or non-finite vector"));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding(values))
    }

    /// Wraps values that are already expected to be unit-norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let e = Embedding(values);
        if (e.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::validation(format!(
                "embedding norm {} is not 1 ± {UNIT_NORM_TOLERANCE}",
                e.norm()
            )));
        }
        Ok(e)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Extracted,
    Synthesized,
    Conjecture,
    Verified,
    Rejected,
}

impl NodeStatus {
    pub const ALL: [NodeStatus; 5] = [
        NodeStatus::Extracted,
        NodeStatus::Synthesized,
        NodeStatus::Conjecture,
        NodeStatus::Verified,
        NodeStatus::Rejected,
    ];

    /// Allowed one-step transitions. Verified and rejected are terminal.
    pub fn can_transition_to(self, next: NodeStatus) -> bool {
        use NodeStatus::*;
        matches!(
            (self, next),
            (Extracted | Synthesized, Conjecture | Verified | Rejected)
                | (Conjecture, Verified | Rejected)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, NodeStatus::Verified | NodeStatus::Rejected)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Extracted => "extracted",
            NodeStatus::Synthesized => "synthesized",
            NodeStatus::Conjecture => "conjecture",
            NodeStatus::Verified => "verified",
            NodeStatus::Rejected => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub doc_id: String,
    pub segment_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodNode {
    pub id: NodeId,
    pub name: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub embedding: Embedding,
    pub status: NodeStatus,
    pub sources: Vec<SourceRef>,
    pub merged_from: Vec<NodeId>,
}

impl MethodNode {
    /// Text fed to the embedder: name, summary and keywords joined by single spaces.
    pub fn embedding_text(&self) -> String {
        embedding_text(&self.name, &self.summary, &self.keywords)
    }
}

pub fn embedding_text(name: &str, summary: &str, keywords: &[String]) -> String {
    let mut parts: Vec<&str> = vec![name, summary];
    parts.extend(keywords.iter().map(String::as_str));
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Primary,
    Supporting,
}

/// Weighted directed contribution `src → dst`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub rating: u8,
    pub weight: f64,
    pub share: Option<f64>,
    pub explanation: String,
    pub kind: EdgeKind,
}

impl ContributionEdge {
    /// New supporting edge with weight derived from `rating`.
    pub fn new(src: NodeId, dst: NodeId, rating: u8, explanation: impl Into<String>) -> Result<Self> {
        if src == dst {
            return Err(Error::validation(format!("self-loop edge on {src}")));
        }
        Ok(ContributionEdge {
            src,
            dst,
            rating,
            weight: rating_to_weight(rating)?,
            share: None,
            explanation: explanation.into(),
            kind: EdgeKind::Supporting,
        })
    }
}

/// Maps a discrete 1..=5 contribution rating onto `[0, 1]`.
pub fn rating_to_weight(rating: u8) -> Result<f64> {
    if !(1..=5).contains(&rating) {
        return Err(Error::validation(format!(
            "rating {rating} outside 1..=5"
        )));
    }
    Ok(f64::from(rating - 1) / 4.0)
}

/// Inverse of [`rating_to_weight`] for arbitrary weights: `round(4w) + 1`.
pub fn weight_to_rating(weight: f64) -> u8 {
    let clamped = weight.clamp(0.0, 1.0);
    (4.0 * clamped).round() as u8 + 1
}

/// `share_i = w_i / (Σ w + ε)`, preserving input order.
pub fn normalize_shares<K: Clone>(incoming: &[(K, f64)], epsilon: f64) -> Result<Vec<(K, f64)>> {
    if incoming.is_empty() {
        return Err(Error::validation("cannot normalize an empty weight list"));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::validation(format!("epsilon must be > 0, got {epsilon}")));
    }
    if let Some((_, w)) = incoming.iter().find(|(_, w)| !(0.0..=1.0).contains(w)) {
        return Err(Error::validation(format!("weight {w} outside [0, 1]")));
    }
    let denom = incoming.iter().map(|(_, w)| w).sum::<f64>() + epsilon;
    Ok(incoming
        .iter()
        .map(|(k, w)| (k.clone(), w / denom))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ids", rename_all = "snake_case")]
pub enum Children {
    Leaves(Vec<NodeId>),
    Clusters(Vec<ClusterId>),
}

impl Children {
    pub fn len(&self) -> usize {
        match self {
            Children::Leaves(v) => v.len(),
            Children::Clusters(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn refs(&self) -> Vec<TreeRef> {
        match self {
            Children::Leaves(v) => v.iter().copied().map(TreeRef::Leaf).collect(),
            Children::Clusters(v) => v.iter().copied().map(TreeRef::Cluster).collect(),
        }
    }
}

/// Abstraction-tree node at `level ≥ 1`; level 1 holds leaves directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: ClusterId,
    pub level: usize,
    pub children: Children,
    pub summary: String,
    pub keywords: Vec<String>,
    pub summary_embedding: Embedding,
    /// Set when members changed since the summary was produced.
    #[serde(default)]
    pub stale: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored<K> {
    pub id: K,
    pub similarity: f64,
}

/// One descent step of funnel retrieval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based step index; step 1 is the top cluster layer.
    pub step: usize,
    /// Cluster level searched, or 0 for the leaf stage.
    pub level: usize,
    pub budget: usize,
    pub pool: Vec<Scored<TreeRef>>,
    pub selected: Vec<TreeRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncestorEntry {
    pub id: NodeId,
    pub source_leaf: NodeId,
    pub depth: usize,
    pub influence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalContext {
    pub query: String,
    pub query_embedding: Embedding,
    pub leaves: Vec<Scored<NodeId>>,
    pub ancestors: Vec<AncestorEntry>,
    pub trace: Vec<TraceStep>,
    /// Every backtracking inclusion decision, in walk order.
    #[serde(default)]
    pub backtrack: Vec<crate::provenance::BacktrackDecision>,
}

impl RetrievalContext {
    /// Node ids of `C_q`: leaves plus included ancestors, ascending.
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .leaves
            .iter()
            .map(|s| s.id)
            .chain(self.ancestors.iter().map(|a| a.id))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.leaves.iter().any(|s| s.id == id) || self.ancestors.iter().any(|a| a.id == id)
    }
}

/// Five rubric dimensions, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RubricScores {
    pub novelty: f64,
    pub consistency: f64,
    pub verifiability: f64,
    pub applicability: f64,
    pub alignment: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Pending,
    Kept,
    Rejected,
    Conjecture,
    Verified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributedParent {
    pub id: NodeId,
    /// Raw contribution weight proposed by the generator.
    pub weight: f64,
    pub share: f64,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateInnovation {
    pub id: String,
    pub summary: String,
    pub operator: String,
    pub parents: Vec<AttributedParent>,
    pub novelty_notes: String,
    pub applicability: String,
    pub validation_plan: String,
    pub rubric: Option<RubricScores>,
    pub gate: bool,
    pub score: Option<f64>,
    pub status: CandidateStatus,
}

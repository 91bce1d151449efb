//! Operator library, operator selection and candidate generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::AbstractionTree;
use crate::error::{Error, Result};
use crate::http::TextEndpoint;
use crate::model::{
    normalize_shares, AttributedParent, CandidateInnovation, CandidateStatus, ClusterId, MethodNode, NodeId,
    RetrievalContext,
};
use crate::provenance::{adaptive_depth, ProvenanceTree};

/// Structural facts about a retrieval context that operator predicates read.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextFacts {
    pub leaves: usize,
    pub ancestors: usize,
    /// Top-level cluster of each retrieved leaf.
    pub leaf_tops: BTreeMap<NodeId, ClusterId>,
    pub distinct_tops: usize,
}

impl ContextFacts {
    pub fn of(context: &RetrievalContext, tree: &AbstractionTree) -> Self {
        let leaf_tops: BTreeMap<NodeId, ClusterId> = context
            .leaves
            .iter()
            .filter_map(|l| tree.top_cluster_of(l.id).map(|c| (l.id, c)))
            .collect();
        let distinct_tops = leaf_tops.values().collect::<BTreeSet<_>>().len();
        ContextFacts {
            leaves: context.leaves.len(),
            ancestors: context.ancestors.len(),
            leaf_tops,
            distinct_tops,
        }
    }
}

pub type Predicate = Arc<dyn Fn(&ContextFacts) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct Operator {
    pub id: String,
    pub definition: String,
    /// Human-readable form of the applicability predicate.
    pub condition: String,
    pub prompt: String,
    pub checklist: Vec<String>,
    pub predicate: Predicate,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator")
            .field("id", &self.id)
            .field("condition", &self.condition)
            .finish_non_exhaustive()
    }
}

impl Operator {
    pub fn applies(&self, facts: &ContextFacts) -> bool {
        (self.predicate)(facts)
    }
}

fn op(
    id: &str,
    definition: &str,
    condition: &str,
    checklist: &[&str],
    predicate: impl Fn(&ContextFacts) -> bool + Send + Sync + 'static,
) -> Operator {
    Operator {
        id: id.into(),
        definition: definition.into(),
        condition: condition.into(),
        prompt: format!(
            "Operator {id}: {definition}\nQuestion: {{query}}\nMethods:\n{{methods}}\n\
             Reply with lines SUMMARY:, PARENT <id> <weight>:: <why>, NOVELTY:, APPLICABILITY:, PLAN:"
        ),
        checklist: checklist.iter().map(|s| s.to_string()).collect(),
        predicate: Arc::new(predicate),
    }
}

/// The built-in library in selection order: ded, ind, ana, abd.
pub fn default_library() -> Vec<Operator> {
    vec![
        op(
            "ded",
            "derive a specialised method from a general ancestor",
            "all leaves under one top cluster and at least one ancestor",
            &["premises hold for the target setting", "each derivation step is justified"],
            |f| f.leaves >= 1 && f.distinct_tops == 1 && f.ancestors >= 1,
        ),
        op(
            "ind",
            "generalise a shared pattern from several related methods",
            "at least two leaves, all under one top cluster",
            &["pattern holds for every instance", "no counterexample among siblings"],
            |f| f.leaves >= 2 && f.distinct_tops == 1,
        ),
        op(
            "ana",
            "transfer a mechanism between methods from different areas",
            "leaves span at least two top clusters",
            &["structural correspondence is explicit", "assumptions survive the transfer"],
            |f| f.distinct_tops >= 2,
        ),
        op(
            "abd",
            "propose the method that best explains the retrieved evidence",
            "at least one leaf",
            &["alternative explanations considered", "prediction that could refute it"],
            |f| f.leaves >= 1,
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub operator: String,
    pub forced: bool,
    pub condition: String,
    pub facts: ContextFacts,
}

/// First operator in library order whose predicate accepts the context,
/// unless `forced` names one explicitly.
pub fn select_operator<'a>(
    library: &'a [Operator],
    facts: &ContextFacts,
    forced: Option<&str>,
) -> Result<(&'a Operator, Selection)> {
    if library.is_empty() {
        return Err(Error::validation("operator library is empty"));
    }
    let chosen = match forced {
        Some(id) => library
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Error::lookup(format!("unknown operator `{id}`")))?,
        None => library
            .iter()
            .find(|o| o.applies(facts))
            .ok_or_else(|| Error::NoOperator(format!("no operator applies to {} leaves", facts.leaves)))?,
    };
    Ok((
        chosen,
        Selection {
            operator: chosen.id.clone(),
            forced: forced.is_some(),
            condition: chosen.condition.clone(),
            facts: facts.clone(),
        },
    ))
}

pub struct GenerationRequest<'a> {
    pub operator: &'a Operator,
    pub query: &'a str,
    pub context: &'a RetrievalContext,
    pub nodes: &'a BTreeMap<NodeId, MethodNode>,
    pub variant: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposedParent {
    pub id: NodeId,
    pub weight: f64,
    pub explanation: String,
}

/// Raw generator output before attribution checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub summary: String,
    pub parents: Vec<ProposedParent>,
    pub novelty_notes: String,
    pub applicability: String,
    pub validation_plan: String,
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Proposal>;
}

fn clip_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// Template generator: parents are a window of up to three retrieved
/// leaves starting at the variant index.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubGenerator;

impl Generator for StubGenerator {
    fn id(&self) -> &str {
        "stub-template"
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Proposal> {
        let leaves = &req.context.leaves;
        if leaves.is_empty() {
            return Err(Error::validation("stub generator needs at least one retrieved leaf"));
        }
        let take = leaves.len().min(3);
        let picked: Vec<_> = (0..take).map(|i| leaves[(req.variant + i) % leaves.len()]).collect();
        let mut names = Vec::new();
        let mut fused = Vec::new();
        let mut keywords = BTreeSet::new();
        for p in &picked {
            let node = req
                .nodes
                .get(&p.id)
                .ok_or_else(|| Error::lookup(format!("leaf {} has no node", p.id)))?;
            names.push(node.name.clone());
            fused.push(clip_words(&node.summary, 8));
            keywords.extend(node.keywords.iter().take(2).cloned());
        }
        let op = &req.operator.id;
        Ok(Proposal {
            summary: format!(
                "By {op} from {}: {} (variant {})",
                names.join(", "),
                fused.join("; "),
                req.variant
            ),
            parents: picked
                .iter()
                .map(|p| ProposedParent {
                    id: p.id,
                    weight: p.similarity.clamp(0.05, 1.0),
                    explanation: format!("{op} input with similarity {:.3}", p.similarity),
                })
                .collect(),
            novelty_notes: format!("combines {} via {op}", names.join(" and ")),
            applicability: format!(
                "settings described by {}",
                keywords.into_iter().collect::<Vec<_>>().join(", ")
            ),
            validation_plan: req.operator.checklist.join("; "),
        })
    }
}

/// Parses the line protocol used by remote generators.
pub fn parse_proposal(text: &str) -> Result<Proposal> {
    let mut p = Proposal::default();
    for line in text.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("SUMMARY:") {
            p.summary = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("NOVELTY:") {
            p.novelty_notes = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("APPLICABILITY:") {
            p.applicability = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("PLAN:") {
            p.validation_plan = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("PARENT ") {
            let (head, why) = rest.split_once("::").unwrap_or((rest, ""));
            let mut parts = head.split_whitespace();
            let (Some(id), Some(w)) = (parts.next(), parts.next()) else {
                return Err(Error::validation(format!("malformed parent line `{line}`")));
            };
            let id: NodeId = id
                .parse()
                .map_err(|_| Error::validation(format!("bad parent id `{id}`")))?;
            let weight: f64 = w
                .parse()
                .map_err(|_| Error::validation(format!("bad parent weight `{w}`")))?;
            p.parents.push(ProposedParent {
                id,
                weight,
                explanation: why.trim().to_string(),
            });
        }
    }
    Ok(p)
}

pub struct HttpGenerator {
    endpoint: TextEndpoint,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>) -> Self {
        HttpGenerator {
            endpoint: TextEndpoint::new(url),
        }
    }
}

impl Generator for HttpGenerator {
    fn id(&self) -> &str {
        "http-generator"
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Proposal> {
        let methods: Vec<String> = req
            .context
            .node_ids()
            .into_iter()
            .filter_map(|id| req.nodes.get(&id))
            .map(|n| format!("{} {}: {}", n.id, n.name, n.summary))
            .collect();
        let prompt = req
            .operator
            .prompt
            .replace("{query}", req.query)
            .replace("{methods}", &methods.join("\n"));
        let body = format!("{prompt}\nVariant: {}", req.variant);
        let reply = self.endpoint.post(self.id(), &body)?;
        parse_proposal(&reply).map_err(|e| Error::Provider {
            provider: self.id().into(),
            message: e.to_string(),
            retriable: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub variant: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnovationBatch {
    pub operator: String,
    pub candidates: Vec<CandidateInnovation>,
    /// Rejected proposals and shortfall reasons.
    pub diagnostics: Vec<Diagnostic>,
}

fn candidate_id(query: &str, operator: &str, variant: usize, summary: &str) -> String {
    let mut h = Sha256::new();
    for part in [query, operator, &variant.to_string(), summary] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("cand-{}", &hex::encode(h.finalize())[..12])
}

fn attribute(
    proposal: Proposal,
    operator: &str,
    query: &str,
    variant: usize,
    context: &RetrievalContext,
    epsilon: f64,
) -> std::result::Result<CandidateInnovation, String> {
    if proposal.summary.trim().is_empty() {
        return Err("empty summary".into());
    }
    if proposal.parents.is_empty() {
        return Err("no attributed parents".into());
    }
    let allowed: BTreeSet<NodeId> = context.node_ids().into_iter().collect();
    let mut seen = BTreeSet::new();
    for p in &proposal.parents {
        if !allowed.contains(&p.id) {
            return Err(format!("parent {} is outside the retrieval context", p.id));
        }
        if !seen.insert(p.id) {
            return Err(format!("parent {} cited twice", p.id));
        }
    }
    let weights: Vec<(NodeId, f64)> = proposal.parents.iter().map(|p| (p.id, p.weight)).collect();
    let shares = normalize_shares(&weights, epsilon).map_err(|e| e.to_string())?;
    let parents = proposal
        .parents
        .into_iter()
        .zip(shares)
        .map(|(p, (_, share))| AttributedParent {
            id: p.id,
            weight: p.weight,
            share,
            explanation: p.explanation,
        })
        .collect();
    Ok(CandidateInnovation {
        id: candidate_id(query, operator, variant, &proposal.summary),
        summary: proposal.summary,
        operator: operator.into(),
        parents,
        novelty_notes: proposal.novelty_notes,
        applicability: proposal.applicability,
        validation_plan: proposal.validation_plan,
        rubric: None,
        gate: false,
        score: None,
        status: CandidateStatus::Pending,
    })
}

/// Generates `j` variants and keeps the ones with valid attribution.
pub fn innovate(
    operator: &Operator,
    context: &RetrievalContext,
    nodes: &BTreeMap<NodeId, MethodNode>,
    j: usize,
    generator: &dyn Generator,
    epsilon: f64,
) -> Result<InnovationBatch> {
    if j < 1 {
        return Err(Error::validation("j must be at least 1"));
    }
    let proposals: Vec<Result<Proposal>> = (0..j)
        .into_par_iter()
        .map(|variant| {
            generator.generate(&GenerationRequest {
                operator,
                query: &context.query,
                context,
                nodes,
                variant,
            })
        })
        .collect();
    let mut candidates = Vec::with_capacity(j);
    let mut diagnostics = Vec::new();
    let mut ids = BTreeSet::new();
    for (variant, proposal) in proposals.into_iter().enumerate() {
        match attribute(proposal?, &operator.id, &context.query, variant, context, epsilon) {
            Ok(c) if !ids.insert(c.id.clone()) => diagnostics.push(Diagnostic {
                variant,
                message: format!("duplicate of {}", c.id),
            }),
            Ok(c) => candidates.push(c),
            Err(message) => diagnostics.push(Diagnostic { variant, message }),
        }
    }
    if candidates.len() < j {
        diagnostics.push(Diagnostic {
            variant: j,
            message: format!("shortfall: {} of {j} candidates survived", candidates.len()),
        });
    }
    Ok(InnovationBatch {
        operator: operator.id.clone(),
        candidates,
        diagnostics,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub nodes: BTreeSet<NodeId>,
    /// Supporting edges `(src, dst)` touching any evidence node.
    pub supporting: BTreeSet<(NodeId, NodeId)>,
}

/// Walks `adaptive_depth(share)` primary ancestors above each parent.
pub fn collect_evidence(
    tree: &ProvenanceTree,
    parents: &[AttributedParent],
    d_min: usize,
    d_range: usize,
    gamma: f64,
) -> Result<Evidence> {
    let mut ev = Evidence::default();
    for p in parents {
        if !tree.contains(p.id) {
            return Err(Error::integrity(format!("parent {} missing from provenance tree", p.id)));
        }
        let depth = adaptive_depth(p.share.clamp(0.0, 1.0), d_min, d_range, gamma)?;
        ev.nodes.insert(p.id);
        ev.nodes.extend(tree.chain(p.id).take(depth).map(|(a, _)| a));
    }
    for n in &ev.nodes {
        ev.supporting.extend(tree.supporting(*n).iter().map(|s| (s.src, *n)));
        ev.supporting.extend(tree.supported_by(*n).map(|d| (*n, d)));
    }
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContributionEdge, Embedding, NodeStatus, Scored};

    fn facts(leaves: usize, ancestors: usize, tops: &[u64]) -> ContextFacts {
        let leaf_tops: BTreeMap<NodeId, ClusterId> = tops
            .iter()
            .enumerate()
            .map(|(i, c)| (NodeId(i as u64 + 1), ClusterId(*c)))
            .collect();
        let distinct_tops = tops.iter().collect::<BTreeSet<_>>().len();
        ContextFacts {
            leaves,
            ancestors,
            leaf_tops,
            distinct_tops,
        }
    }

    #[test]
    fn predicate_truth_table() {
        let lib = default_library();
        let pick = |f: &ContextFacts| select_operator(&lib, f, None).map(|(o, _)| o.id.clone());
        assert_eq!(pick(&facts(2, 0, &[1, 2])).unwrap(), "ana");
        assert_eq!(pick(&facts(3, 0, &[1, 1, 2])).unwrap(), "ana");
        assert_eq!(pick(&facts(2, 1, &[4, 4])).unwrap(), "ded");
        assert_eq!(pick(&facts(2, 0, &[4, 4])).unwrap(), "ind");
        assert_eq!(pick(&facts(1, 0, &[4])).unwrap(), "abd");
        assert!(matches!(pick(&facts(0, 0, &[])), Err(Error::NoOperator(_))));
    }

    #[test]
    fn forced_operator_wins() {
        let lib = default_library();
        let (o, sel) = select_operator(&lib, &facts(0, 0, &[]), Some("ded")).unwrap();
        assert_eq!(o.id, "ded");
        assert!(sel.forced);
        assert!(select_operator(&lib, &facts(1, 0, &[1]), Some("zzz")).is_err());
        assert!(select_operator(&[], &facts(1, 0, &[1]), None).is_err());
    }

    fn node(id: u64, summary: &str) -> MethodNode {
        MethodNode {
            id: NodeId(id),
            name: format!("method{id}"),
            summary: summary.into(),
            keywords: vec![format!("kw{id}")],
            embedding: Embedding::normalized(vec![1.0, 0.0]).unwrap(),
            status: NodeStatus::Extracted,
            sources: vec![],
            merged_from: vec![],
        }
    }

    fn context(leaves: &[(u64, f64)]) -> RetrievalContext {
        RetrievalContext {
            query: "q".into(),
            query_embedding: Embedding::normalized(vec![1.0, 0.0]).unwrap(),
            leaves: leaves
                .iter()
                .map(|(i, s)| Scored {
                    id: NodeId(*i),
                    similarity: *s,
                })
                .collect(),
            ancestors: vec![],
            trace: vec![],
            backtrack: vec![],
        }
    }

    struct Fixed(Vec<ProposedParent>);

    impl Generator for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn generate(&self, req: &GenerationRequest<'_>) -> Result<Proposal> {
            Ok(Proposal {
                summary: format!("fixed {}", req.variant),
                parents: self.0.clone(),
                validation_plan: "plan".into(),
                ..Proposal::default()
            })
        }
    }

    fn nodes(ids: &[u64]) -> BTreeMap<NodeId, MethodNode> {
        ids.iter().map(|i| (NodeId(*i), node(*i, &format!("summary of {i}")))).collect()
    }

    #[test]
    fn shares_follow_normalization() {
        let ctx = context(&[(1, 0.9), (2, 0.8)]);
        let gen = Fixed(vec![
            ProposedParent {
                id: NodeId(1),
                weight: 0.75,
                explanation: String::new(),
            },
            ProposedParent {
                id: NodeId(2),
                weight: 0.25,
                explanation: String::new(),
            },
        ]);
        let lib = default_library();
        let batch = innovate(&lib[3], &ctx, &nodes(&[1, 2]), 1, &gen, 1e-9).unwrap();
        assert_eq!(batch.candidates.len(), 1);
        let shares: Vec<f64> = batch.candidates[0].parents.iter().map(|p| p.share).collect();
        assert!((shares[0] - 0.75 / (1.0 + 1e-9)).abs() < 1e-15);
        assert!((shares[1] - 0.25 / (1.0 + 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn stub_yields_distinct_variants() {
        let ctx = context(&[(1, 0.9), (2, 0.8), (3, 0.1)]);
        let lib = default_library();
        let batch = innovate(&lib[2], &ctx, &nodes(&[1, 2, 3]), 3, &StubGenerator, 1e-9).unwrap();
        assert_eq!(batch.candidates.len(), 3);
        let ids: BTreeSet<_> = batch.candidates.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids.len(), 3);
        for (v, c) in batch.candidates.iter().enumerate() {
            assert!(c.summary.starts_with("By ana from "));
            assert!(c.summary.ends_with(&format!("(variant {v})")));
            assert!(!c.validation_plan.is_empty());
            let total: f64 = c.parents.iter().map(|p| p.weight).sum();
            let shares: f64 = c.parents.iter().map(|p| p.share).sum();
            assert!((shares - total / (total + 1e-9)).abs() < 1e-9);
        }
        let again = innovate(&lib[2], &ctx, &nodes(&[1, 2, 3]), 3, &StubGenerator, 1e-9).unwrap();
        assert_eq!(batch, again);
    }

    #[test]
    fn out_of_context_parent_is_rejected() {
        let ctx = context(&[(1, 0.9)]);
        let gen = Fixed(vec![ProposedParent {
            id: NodeId(42),
            weight: 0.5,
            explanation: String::new(),
        }]);
        let lib = default_library();
        let batch = innovate(&lib[3], &ctx, &nodes(&[1]), 2, &gen, 1e-9).unwrap();
        assert!(batch.candidates.is_empty());
        assert!(batch.diagnostics[0].message.contains("m42"));
        assert!(batch.diagnostics.last().unwrap().message.starts_with("shortfall"));
    }

    #[test]
    fn proposal_protocol_roundtrip() {
        let p = parse_proposal(
            "SUMMARY: new idea\nPARENT m3 0.5:: because\nPARENT 4 1\nNOVELTY: n\nAPPLICABILITY: a\nPLAN: p\n",
        )
        .unwrap();
        assert_eq!(p.summary, "new idea");
        assert_eq!(p.parents.len(), 2);
        assert_eq!(p.parents[0].id, NodeId(3));
        assert_eq!(p.parents[1].weight, 1.0);
        assert_eq!(p.validation_plan, "p");
        assert!(parse_proposal("PARENT x").is_err());
    }

    #[test]
    fn http_generator_posts_prompt() {
        let url = crate::http::testing::serve(1, |body| {
            assert!(body.contains("Question: q"));
            "SUMMARY: remote\nPARENT m1 0.5:: why\nPLAN: check".to_string()
        });
        let ctx = context(&[(1, 0.9)]);
        let lib = default_library();
        let batch = innovate(&lib[3], &ctx, &nodes(&[1]), 1, &HttpGenerator::new(url), 1e-9).unwrap();
        assert_eq!(batch.candidates[0].summary, "remote");
    }

    fn chain_tree() -> ProvenanceTree {
        // 1 → 2 → 3 → 4 → 5 backbone, plus supporting 6 → 3.
        let mut edges: Vec<ContributionEdge> = (1..5)
            .map(|i| ContributionEdge::new(NodeId(i), NodeId(i + 1), 5, "").unwrap())
            .collect();
        edges.push(ContributionEdge::new(NodeId(6), NodeId(3), 2, "").unwrap());
        ProvenanceTree::build((1..=6).map(NodeId), &edges).unwrap().0
    }

    fn parent(id: u64, share: f64) -> AttributedParent {
        AttributedParent {
            id: NodeId(id),
            weight: share,
            share,
            explanation: String::new(),
        }
    }

    #[test]
    fn evidence_depth_follows_share() {
        let t = chain_tree();
        let full = collect_evidence(&t, &[parent(5, 1.0)], 1, 2, 1.0).unwrap();
        assert_eq!(full.nodes, [2, 3, 4, 5].map(NodeId).into());
        assert!(full.supporting.contains(&(NodeId(6), NodeId(3))));
        let none = collect_evidence(&t, &[parent(5, 0.0)], 1, 2, 1.0).unwrap();
        assert_eq!(none.nodes, [4, 5].map(NodeId).into());
        assert!(collect_evidence(&t, &[parent(99, 1.0)], 1, 2, 1.0).is_err());
    }

    #[test]
    fn evidence_union_has_no_duplicates() {
        let t = chain_tree();
        let a = collect_evidence(&t, &[parent(5, 1.0)], 1, 2, 1.0).unwrap();
        let b = collect_evidence(&t, &[parent(4, 1.0)], 1, 2, 1.0).unwrap();
        let both = collect_evidence(&t, &[parent(5, 1.0), parent(4, 1.0)], 1, 2, 1.0).unwrap();
        let union: BTreeSet<NodeId> = a.nodes.union(&b.nodes).copied().collect();
        assert_eq!(both.nodes, union);
    }
}

//! The method repository: both trees, the node and edge stores, the audit
//! trail, and the offline build that fills them from a corpus.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::abstraction::{AbstractionTree, StubSummarizer, Summarizer};
use crate::audit::{Actor, AuditLog};
use crate::config::Config;
use crate::dedup::deduplicate;
use crate::embed::{CachedEmbedder, EmbeddingProvider, HttpEmbedder, StubEmbedder};
use crate::error::{Error, Result};
use crate::funnel::{cost_report, retrieve, CostReport};
use crate::ingest::{extract_all, segment, Document, ExtractOutcome, Extractor, HttpExtractor, RuleExtractor};
use crate::model::{normalize_shares, ContributionEdge, MethodNode, NodeId, NodeStatus, RetrievalContext, SourceRef};
use crate::provenance::{Demotion, ProvenanceTree};
use crate::quality::scoring::{HttpScorer, Scorer, StubScorer};
use crate::quality::verify::{builtin_verifier, default_safety, HttpVerifier, SafetyHook, Verifier};
use crate::synthesis::{Generator, HttpGenerator, StubGenerator};

/// The pluggable providers used by every stage.
pub struct Providers {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub extractor: Box<dyn Extractor>,
    pub summarizer: Box<dyn Summarizer>,
    pub generator: Box<dyn Generator>,
    pub scorer: Box<dyn Scorer>,
    pub verifier: Box<dyn Verifier>,
    pub safety: Box<SafetyHook>,
    cache: Option<Arc<CachedEmbedder<Box<dyn EmbeddingProvider>>>>,
}

impl Providers {
    /// Deterministic in-process providers throughout.
    pub fn stub(config: &Config) -> Result<Self> {
        Ok(Providers {
            embedder: Arc::new(StubEmbedder::new(config.dimension)),
            extractor: Box::new(RuleExtractor),
            summarizer: Box::new(StubSummarizer),
            generator: Box::new(StubGenerator),
            scorer: Box::new(StubScorer),
            verifier: builtin_verifier(&config.verify.verifier)?,
            safety: Box::new(default_safety),
            cache: None,
        })
    }

    /// Remote providers where endpoints are configured, stubs elsewhere.
    /// With `cache`, embeddings go through a content-addressed cache file.
    pub fn from_config(config: &Config, cache: Option<&Path>) -> Result<Self> {
        let mut p = Self::stub(config)?;
        let pr = &config.providers;
        let base: Box<dyn EmbeddingProvider> = match &pr.embedder {
            Some(url) => Box::new(HttpEmbedder::new(url.clone(), config.dimension)),
            None => Box::new(StubEmbedder::new(config.dimension)),
        };
        match cache {
            Some(path) => {
                let cached = Arc::new(CachedEmbedder::open(base, path)?);
                p.embedder = cached.clone();
                p.cache = Some(cached);
            }
            None => p.embedder = Arc::from(base),
        }
        if let Some(url) = &pr.extractor {
            p.extractor = Box::new(HttpExtractor::new(url.clone()));
        }
        if let Some(url) = &pr.generator {
            p.generator = Box::new(HttpGenerator::new(url.clone()));
        }
        if let Some(url) = &pr.scorer {
            p.scorer = Box::new(HttpScorer::new(url.clone()));
        }
        if let Some(url) = &pr.verifier {
            p.verifier = Box::new(HttpVerifier::new(url.clone()));
        }
        Ok(p)
    }

    /// Persists embeddings computed since the last flush.
    pub fn flush_cache(&self) -> Result<()> {
        self.cache.as_ref().map_or(Ok(()), |c| c.flush())
    }
}

#[derive(Clone, Debug)]
pub struct Repository {
    pub config: Config,
    /// Incremented once per write-back that adds at least one node.
    pub version: u64,
    pub nodes: BTreeMap<NodeId, MethodNode>,
    /// Append-only, in insertion order.
    pub edges: Vec<ContributionEdge>,
    pub provenance: ProvenanceTree,
    pub abstraction: AbstractionTree,
    pub demotions: Vec<Demotion>,
    pub audit: AuditLog,
    pub next_node_id: u64,
}

/// Equality over content; audit timestamps are ignored.
impl PartialEq for Repository {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.version == other.version
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.provenance == other.provenance
            && self.abstraction == other.abstraction
            && self.demotions == other.demotions
            && self.next_node_id == other.next_node_id
            && self.audit.same_content(&other.audit)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub documents: usize,
    pub segments: usize,
    pub rejected_segments: usize,
    pub mentions: usize,
    pub nodes: usize,
    pub edges: usize,
    pub merged_components: usize,
    pub demotions: usize,
    pub levels: Vec<usize>,
}

/// Sets `share` on every edge from its destination's incoming weights.
pub fn assign_shares(edges: &mut [ContributionEdge], epsilon: f64) -> Result<()> {
    let mut by_dst: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        by_dst.entry(e.dst).or_default().push(i);
    }
    for idx in by_dst.values() {
        let incoming: Vec<(usize, f64)> = idx.iter().map(|i| (*i, edges[*i].weight)).collect();
        for (i, share) in normalize_shares(&incoming, epsilon)? {
            edges[i].share = Some(share);
        }
    }
    Ok(())
}

impl Repository {
    pub fn empty(config: Config) -> Self {
        Repository {
            abstraction: AbstractionTree::empty(config.tree_params()),
            config,
            version: 0,
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            provenance: ProvenanceTree::default(),
            demotions: Vec::new(),
            audit: AuditLog::new(),
            next_node_id: 1,
        }
    }

    /// Offline construction: segment, extract, embed, deduplicate, then
    /// build the provenance and abstraction trees.
    pub fn build(docs: &[Document], config: Config, providers: &Providers) -> Result<(Self, BuildReport)> {
        config.validate()?;
        let mut repo = Repository::empty(config);
        let mut report = BuildReport {
            documents: docs.len(),
            ..BuildReport::default()
        };
        let mut segments = Vec::new();
        for d in docs {
            segments.extend(segment(d, repo.config.ingest.segment_length)?);
        }
        report.segments = segments.len();
        repo.log(Actor::Ingest, json!({"type": "segmented", "documents": docs.len(), "segments": segments.len()}));

        let mut mentions: Vec<(String, String, crate::ingest::MethodDescriptor)> = Vec::new();
        let mut raw_edges: Vec<(String, crate::ingest::RelationDescriptor)> = Vec::new();
        for outcome in extract_all(&segments, providers.extractor.as_ref())? {
            match outcome {
                ExtractOutcome::Accepted(rec) => {
                    for m in rec.methods() {
                        mentions.push((rec.doc_id.clone(), rec.segment_id.clone(), m.clone()));
                    }
                    for r in &rec.relations {
                        raw_edges.push((rec.segment_id.clone(), r.clone()));
                    }
                }
                ExtractOutcome::Rejected { segment_id, diagnostics } => {
                    report.rejected_segments += 1;
                    repo.log(
                        Actor::Ingest,
                        json!({"type": "extraction_rejected", "segment": segment_id, "diagnostics": diagnostics}),
                    );
                }
            }
        }
        report.mentions = mentions.len();

        let embedder = providers.embedder.as_ref();
        let embeddings: Vec<_> = mentions
            .par_iter()
            .map(|(_, _, m)| embedder.embed(&crate::model::embedding_text(&m.name, &m.summary, &m.keywords)))
            .collect::<Result<_>>()?;
        let mut ids: HashMap<(String, String), NodeId> = HashMap::new();
        let mut nodes = Vec::with_capacity(mentions.len());
        for ((doc, seg, m), embedding) in mentions.into_iter().zip(embeddings) {
            let id = NodeId(repo.next_node_id);
            repo.next_node_id += 1;
            ids.insert((seg.clone(), m.name.clone()), id);
            nodes.push(MethodNode {
                id,
                name: m.name,
                summary: m.summary,
                keywords: m.keywords,
                embedding,
                status: NodeStatus::Extracted,
                sources: vec![SourceRef {
                    doc_id: doc,
                    segment_id: seg,
                }],
                merged_from: vec![],
            });
        }
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (seg, r) in raw_edges {
            let src = ids[&(seg.clone(), r.src.clone())];
            let dst = ids[&(seg, r.dst.clone())];
            edges.push(ContributionEdge::new(src, dst, r.rating as u8, r.explanation)?);
        }
        repo.log(Actor::Ingest, json!({"type": "extracted", "mentions": nodes.len(), "relations": edges.len()}));

        let dd = deduplicate(&nodes, &edges, repo.config.dedup.delta_merge, embedder)?;
        for m in dd.merges.iter().filter(|m| m.members.len() > 1) {
            report.merged_components += 1;
            repo.log(
                Actor::Dedup,
                json!({"type": "merged", "canonical": m.canonical, "members": m.members, "delta_merge": m.delta_merge}),
            );
        }
        let mut edges = dd.edges;
        assign_shares(&mut edges, repo.config.epsilon)?;

        let (provenance, demotions) = ProvenanceTree::build(dd.nodes.iter().map(|n| n.id), &edges)?;
        for e in &mut edges {
            e.kind = provenance.edge_kind(e.src, e.dst);
        }
        for d in &demotions {
            repo.log(
                Actor::Ingest,
                json!({"type": "demoted", "src": d.src, "dst": d.dst, "weight": d.weight}),
            );
        }
        provenance.check_invariants()?;

        let leaves: Vec<&MethodNode> = dd.nodes.iter().collect();
        let abstraction = AbstractionTree::build(
            &leaves,
            repo.config.tree_params(),
            providers.summarizer.as_ref(),
            embedder,
        )?;
        report.levels = abstraction.level_sizes();
        repo.log(Actor::Ingest, json!({"type": "tree_built", "levels": report.levels}));

        report.nodes = dd.nodes.len();
        report.edges = edges.len();
        report.demotions = demotions.len();
        repo.nodes = dd.nodes.into_iter().map(|n| (n.id, n)).collect();
        repo.edges = edges;
        repo.provenance = provenance;
        repo.abstraction = abstraction;
        repo.demotions = demotions;
        Ok((repo, report))
    }

    pub fn log(&mut self, actor: Actor, event: serde_json::Value) -> u64 {
        self.audit.append(actor, self.version, event)
    }

    /// Funnel retrieval followed by provenance backtracking.
    pub fn query(&mut self, text: &str, providers: &Providers) -> Result<RetrievalContext> {
        let q = providers.embedder.embed(text)?;
        let r = retrieve(&self.abstraction, &self.nodes, &q, self.config.funnel_params())?;
        let cfg = &self.config.retrieval;
        let (ancestors, backtrack) =
            self.provenance
                .collect_context(&r.leaves, cfg.tau, cfg.m_max, self.config.epsilon)?;
        let ctx = RetrievalContext {
            query: text.to_string(),
            query_embedding: q,
            leaves: r.leaves,
            ancestors,
            trace: r.trace,
            backtrack,
        };
        let cost = self.cost(&ctx);
        self.log(
            Actor::Retrieval,
            json!({
                "type": "retrieved",
                "query": text,
                "leaves": ctx.leaves.iter().map(|l| l.id).collect::<Vec<_>>(),
                "ancestors": ctx.ancestors.iter().map(|a| a.id).collect::<Vec<_>>(),
                "comparisons": cost.total_comparisons,
            }),
        );
        Ok(ctx)
    }

    pub fn cost(&self, ctx: &RetrievalContext) -> CostReport {
        cost_report(&ctx.trace, self.config.retrieval.k1, self.config.retrieval.eta)
    }

    pub fn node(&self, id: NodeId) -> Result<&MethodNode> {
        self.nodes.get(&id).ok_or_else(|| Error::lookup(format!("no node {id}")))
    }

    pub fn status_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for n in self.nodes.values() {
            *h.entry(n.status.as_str().to_string()).or_default() += 1;
        }
        h
    }

    /// Primary-parent chain rendered as `m9 <- m4 (0.75) <- m1 (0.50)`.
    pub fn derivation_chain(&self, id: NodeId) -> String {
        let mut s = id.to_string();
        for (a, w) in self.provenance.chain(id) {
            s.push_str(&format!(" <- {a} ({w:.2})"));
        }
        s
    }

    /// Abstraction path from the top cluster to the node, as `c9 > c4 > m12`.
    pub fn navigation_path(&self, id: NodeId) -> String {
        let mut parts: Vec<String> = self.abstraction.path_to_leaf(id).iter().map(ToString::to_string).collect();
        parts.push(id.to_string());
        parts.join(" > ")
    }

    /// Structural checks: backbone, cluster partition, edge weights and ids.
    pub fn check_invariants(&self) -> Result<()> {
        self.provenance.check_invariants()?;
        self.abstraction
            .check_partition(&self.nodes.keys().copied().collect())?;
        for e in &self.edges {
            if e.weight != crate::model::rating_to_weight(e.rating)? {
                return Err(Error::integrity(format!("edge {} -> {} weight drifted from rating", e.src, e.dst)));
            }
            if !self.nodes.contains_key(&e.src) || !self.nodes.contains_key(&e.dst) {
                return Err(Error::integrity(format!("edge {} -> {} dangles", e.src, e.dst)));
            }
        }
        for n in self.nodes.values() {
            if let Some(m) = n.merged_from.iter().find(|m| self.nodes.contains_key(m)) {
                return Err(Error::integrity(format!("{m} merged into {} but still live", n.id)));
            }
        }
        Ok(())
    }
}

//! Retrieval cost benchmark over synthetic topic corpora.
//!
//! Each size gets its own corpus and abstraction tree. For every query the
//! harness records funnel comparisons (pool sizes per step), checks the
//! selected counts against the analytic budget bound, and contrasts with a
//! flat exact scan and an ANN scan.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractionTree, StubSummarizer, TreeParams};
use crate::embed::{EmbeddingProvider, StubEmbedder};
use crate::error::Result;
use crate::funnel::{budget_bound, cost_report, retrieve, FunnelParams};
use crate::index::{AnnParams, SimilarityIndex};
use crate::model::{embedding_text, MethodNode, NodeId, NodeStatus};

pub const DEFAULT_SIZES: [usize; 3] = [256, 512, 1024];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub sizes: Vec<usize>,
    /// Queries per size.
    pub trials: usize,
    pub tree: TreeParams,
    pub funnel: FunnelParams,
    /// Independent corpora (and trees) averaged per size.
    pub replicates: usize,
    pub dimension: usize,
    /// Corpus size divided by this gives the topic count.
    pub leaves_per_topic: usize,
    pub seed: u64,
    /// Neighbours compared when measuring ANN recall.
    pub recall_k: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            sizes: DEFAULT_SIZES.to_vec(),
            trials: 32,
            tree: TreeParams::default(),
            funnel: FunnelParams::default(),
            replicates: 8,
            dimension: 256,
            leaves_per_topic: 16,
            seed: 7,
            recall_k: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n0: usize,
    pub levels: Vec<usize>,
    pub queries: usize,
    /// Mean comparisons per query across all funnel steps.
    pub funnel_comparisons: f64,
    /// Mean comparisons per query over cluster levels only.
    pub cluster_comparisons: f64,
    pub flat_comparisons: f64,
    pub ann_comparisons: f64,
    pub ann_recall: f64,
    /// Σ k_t over the cluster levels.
    pub budget_total: usize,
    pub bound: f64,
    /// Largest Σ selected seen for any query.
    pub max_selected: usize,
    pub within_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Funnel comparison growth between consecutive sizes.
    pub fn growth(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].funnel_comparisons / w[0].funnel_comparisons)
            .collect()
    }

    pub fn flat_growth(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].flat_comparisons / w[0].flat_comparisons)
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "n0\tlevels\tfunnel_cmp\tcluster_cmp\tflat_cmp\tann_cmp\tann_recall\tsum_k\tbound\tmax_selected\twithin_bound\n",
        );
        for r in &self.rows {
            let levels: Vec<String> = r.levels.iter().map(ToString::to_string).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{:.2}\t{:.2}\t{:.0}\t{:.2}\t{:.4}\t{}\t{:.4}\t{}\t{}",
                r.n0,
                levels.join("/"),
                r.funnel_comparisons,
                r.cluster_comparisons,
                r.flat_comparisons,
                r.ann_comparisons,
                r.ann_recall,
                r.budget_total,
                r.bound,
                r.max_selected,
                r.within_bound
            );
        }
        for (i, g) in self.growth().iter().enumerate() {
            let _ = writeln!(
                out,
                "growth {}->{}: funnel x{:.3}, flat x{:.3}",
                self.rows[i].n0,
                self.rows[i + 1].n0,
                g,
                self.flat_growth()[i]
            );
        }
        out
    }
}

fn topic_words(t: usize) -> Vec<String> {
    (0..6).map(|w| format!("topic{t}w{w}")).collect()
}

/// `n` methods spread over `topics` topics; each mixes topic words with
/// filler drawn from a shared vocabulary.
pub fn synthetic_corpus(n: usize, topics: usize, dimension: usize, seed: u64) -> Result<Vec<MethodNode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedder = StubEmbedder::new(dimension);
    let filler: Vec<String> = (0..400).map(|i| format!("term{i}")).collect();
    (0..n)
        .map(|i| {
            let topic = rng.random_range(0..topics);
            let words = topic_words(topic);
            let mut tokens: Vec<String> = words.choose_multiple(&mut rng, 3).cloned().collect();
            tokens.extend(filler.choose_multiple(&mut rng, 3).cloned());
            let name = format!("method{i}");
            let summary = tokens.join(" ");
            let keywords = vec![words[0].clone()];
            let embedding = embedder.embed(&embedding_text(&name, &summary, &keywords))?;
            Ok(MethodNode {
                id: NodeId(i as u64 + 1),
                name,
                summary,
                keywords,
                embedding,
                status: NodeStatus::Extracted,
                sources: vec![],
                merged_from: vec![],
            })
        })
        .collect()
}

#[derive(Default)]
struct Tally {
    funnel: usize,
    cluster: usize,
    flat: usize,
    ann: usize,
    max_selected: usize,
    within: bool,
    recall_hits: usize,
    recall_total: usize,
    queries: usize,
    levels: Vec<usize>,
    n_levels: usize,
}

fn run_replicate(params: &BenchParams, n0: usize, seed: u64, tally: &mut Tally) -> Result<()> {
    let embedder = StubEmbedder::new(params.dimension);
    let topics = (n0 / params.leaves_per_topic.max(1)).max(1);
    let corpus = synthetic_corpus(n0, topics, params.dimension, seed)?;
    let refs: Vec<&MethodNode> = corpus.iter().collect();
    let tree_params = TreeParams {
        seed,
        ..params.tree.clone()
    };
    let tree = AbstractionTree::build(&refs, tree_params, &StubSummarizer, &embedder)?;
    let nodes: BTreeMap<NodeId, MethodNode> = corpus.iter().map(|n| (n.id, n.clone())).collect();
    let entries: Vec<(NodeId, _)> = corpus.iter().map(|n| (n.id, n.embedding.clone())).collect();
    let flat = SimilarityIndex::exact(entries.clone())?;
    let ann = SimilarityIndex::ann(
        entries,
        AnnParams {
            seed,
            ..AnnParams::default()
        },
    )?;
    tally.levels = tree.level_sizes();
    tally.n_levels = tree.level_count();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for _ in 0..params.trials {
        let topic = rng.random_range(0..topics);
        let words: Vec<String> = topic_words(topic).choose_multiple(&mut rng, 2).cloned().collect();
        let q = embedder.embed(&words.join(" "))?;
        let r = retrieve(&tree, &nodes, &q, params.funnel)?;
        let cost = cost_report(&r.trace, params.funnel.k1, params.funnel.eta);
        tally.funnel += cost.total_comparisons;
        tally.cluster += cost.levels.iter().filter(|l| l.level > 0).map(|l| l.comparisons).sum::<usize>();
        tally.max_selected = tally.max_selected.max(cost.selected_total);
        tally.within &= cost.levels.iter().all(|l| l.selected <= l.budget) && cost.selected_total as f64 <= cost.bound;

        let exact = flat.search(&q, params.recall_k)?;
        let approx = ann.search(&q, params.recall_k)?;
        tally.recall_total += exact.len();
        tally.recall_hits += exact.iter().filter(|e| approx.iter().any(|a| a.id == e.id)).count();
        tally.queries += 1;
    }
    tally.flat += flat.comparisons() as usize;
    tally.ann += ann.comparisons() as usize;
    Ok(())
}

pub fn run(params: &BenchParams) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(params.sizes.len());
    for (si, &n0) in params.sizes.iter().enumerate() {
        let mut tally = Tally {
            within: true,
            ..Tally::default()
        };
        for r in 0..params.replicates.max(1) {
            let seed = params.seed.wrapping_add((si * 1000 + r) as u64);
            run_replicate(params, n0, seed, &mut tally)?;
        }
        let budget_total: usize = (1..=tally.n_levels)
            .map(|t| crate::funnel::budget(params.funnel.k1, params.funnel.eta, t))
            .sum::<Result<usize>>()?;
        let q = tally.queries.max(1) as f64;
        rows.push(BenchRow {
            n0,
            levels: tally.levels,
            queries: tally.queries,
            funnel_comparisons: tally.funnel as f64 / q,
            cluster_comparisons: tally.cluster as f64 / q,
            flat_comparisons: tally.flat as f64 / q,
            ann_comparisons: tally.ann as f64 / q,
            ann_recall: if tally.recall_total == 0 {
                1.0
            } else {
                tally.recall_hits as f64 / tally.recall_total as f64
            },
            budget_total,
            bound: budget_bound(params.funnel.k1, params.funnel.eta, tally.n_levels),
            max_selected: tally.max_selected,
            within_bound: tally.within,
        });
    }
    Ok(BenchReport { rows })
}

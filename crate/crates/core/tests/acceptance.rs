//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use methodtree::abstraction::{schedule, AbstractionTree, StubSummarizer, TreeParams};
use methodtree::bench::{self, BenchParams};
use methodtree::config::ScoringConfig;
use methodtree::dedup::{deduplicate, DEFAULT_MERGE_THRESHOLD};
use methodtree::embed::{EmbeddingProvider, StubEmbedder};
use methodtree::funnel::{budget, retrieve, FunnelParams};
use methodtree::model::{
    rating_to_weight, CandidateInnovation, CandidateStatus, ContributionEdge, Embedding, MethodNode, NodeId,
    NodeStatus, SourceRef,
};
use methodtree::provenance::ProvenanceTree;
use methodtree::quality::evolve::{broken_derivations, innovation_round, run_loop, LoopParams, RoundOptions};
use methodtree::quality::scoring::{combine_score, prune, Rubric};
use methodtree::quality::writeback::check_append_only;
use methodtree::repo::{assign_shares, Repository};

type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_rating_weight() -> Check {
    for r in 1..=5u8 {
        let w = rating_to_weight(r).map_err(|e| e.to_string())?;
        ensure(w == (f64::from(r) - 1.0) / 4.0, || format!("r={r} gave {w}"))?;
    }
    for r in [0u8, 6, 200] {
        ensure(rating_to_weight(r).is_err(), || format!("r={r} accepted"))?;
    }
    Ok(())
}

/// Smallest m with m^(n-1) * k1^(t-1) >= k1^(n-1) * kn^(t-1).
fn exact_level_size(k1: u128, kn: u128, n: u32, t: u32) -> u128 {
    let rhs = k1.pow(n - 1) * kn.pow(t - 1);
    let scale = k1.pow(t - 1);
    (1..=k1).find(|m| m.pow(n - 1) * scale >= rhs).unwrap()
}

fn c2_schedule() -> Check {
    for k1 in [10usize, 16, 32] {
        for kn in [5usize, 8] {
            for n in [2usize, 3, 4] {
                let s = schedule(10_000, n, Some(k1), Some(kn), 1).map_err(|e| e.to_string())?;
                let rho = (kn as f64 / k1 as f64).powf(1.0 / (n as f64 - 1.0));
                ensure((s.rho - rho).abs() <= 1e-12, || format!("rho {} vs {rho}", s.rho))?;
                let want: Vec<usize> = (1..=n as u32)
                    .map(|t| exact_level_size(k1 as u128, kn as u128, n as u32, t) as usize)
                    .collect();
                ensure(s.sizes == want, || format!("K1={k1} Kn={kn} n={n}: {:?} vs {want:?}", s.sizes))?;
                ensure(s.sizes.windows(2).all(|w| w[0] >= w[1]), || format!("{:?} increases", s.sizes))?;
                ensure(s.sizes[0] == k1 && s.sizes[n - 1] == kn, || format!("{:?} endpoints", s.sizes))?;
            }
        }
    }
    Ok(())
}

fn c3_budget_bound() -> Check {
    for k1 in 1..=32usize {
        for eta in [0.25, 0.5, 0.75] {
            for n in 1..=8usize {
                let total: usize = (1..=n).map(|t| budget(k1, eta, t).unwrap()).sum();
                let bound = k1 as f64 * (1.0 - f64::powi(eta, n as i32)) / (1.0 - eta) + n as f64;
                ensure(total as f64 <= bound, || format!("k1={k1} eta={eta} n={n}: {total} > {bound}"))?;
            }
        }
    }
    Ok(())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Embedding::normalized(v).unwrap()
}

fn bare_node(id: u64, embedding: Embedding) -> MethodNode {
    MethodNode {
        id: NodeId(id),
        name: format!("n{id}"),
        summary: format!("method {id}"),
        keywords: vec![format!("k{}", id % 7)],
        embedding,
        status: NodeStatus::Extracted,
        sources: vec![SourceRef {
            doc_id: "d".into(),
            segment_id: format!("s{id}"),
        }],
        merged_from: vec![],
    }
}

fn c4_funnel_saturates_to_flat() -> Check {
    let dim = 32;
    let embedder = StubEmbedder::new(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let n = rng.random_range(8..=256);
        let nodes: Vec<MethodNode> = (1..=n as u64).map(|i| bare_node(i, random_unit(&mut rng, dim))).collect();
        let refs: Vec<&MethodNode> = nodes.iter().collect();
        let params = TreeParams {
            levels: rng.random_range(1..=3),
            seed: trial,
            ..TreeParams::default()
        };
        let tree = AbstractionTree::build(&refs, params, &StubSummarizer, &embedder).map_err(|e| e.to_string())?;
        let map: BTreeMap<NodeId, MethodNode> = nodes.iter().map(|x| (x.id, x.clone())).collect();
        let q = random_unit(&mut rng, dim);
        let k = rng.random_range(1..=n);
        let fp = FunnelParams {
            k1: 1 << 20,
            eta: 0.5,
            k_leaf: Some(k),
        };
        let got = retrieve(&tree, &map, &q, fp).map_err(|e| e.to_string())?;
        let mut flat: Vec<(NodeId, f64)> = nodes
            .iter()
            .map(|x| (x.id, x.embedding.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a * b).sum()))
            .collect();
        flat.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        flat.truncate(k);
        let got: Vec<(NodeId, f64)> = got.leaves.iter().map(|s| (s.id, s.similarity)).collect();
        ensure(got == flat, || format!("trial {trial} (n={n}, k={k}) differs from flat top-k"))?;
    }
    Ok(())
}

fn random_provenance(rng: &mut ChaCha8Rng, n: u64) -> (ProvenanceTree, Vec<ContributionEdge>) {
    let mut edges = Vec::new();
    for dst in 2..=n {
        let parents = rng.random_range(0..=3usize);
        let mut srcs: Vec<u64> = (1..dst).collect();
        srcs.shuffle(rng);
        for src in srcs.into_iter().take(parents) {
            edges.push(ContributionEdge::new(NodeId(src), NodeId(dst), rng.random_range(1..=5), "").unwrap());
        }
    }
    assign_shares(&mut edges, 1e-9).unwrap();
    let (tree, _) = ProvenanceTree::build((1..=n).map(NodeId), &edges).unwrap();
    (tree, edges)
}

/// Walks the heaviest incoming edge (ties to the smaller source) and
/// multiplies the capped weights.
fn product_walk(edges: &[ContributionEdge], leaf: NodeId, tau: f64, m_max: usize, eps: f64) -> Vec<(NodeId, usize, f64)> {
    let mut out = Vec::new();
    let mut cur = leaf;
    let mut inf = 1.0;
    for depth in 1..=m_max {
        let Some(best) = edges
            .iter()
            .filter(|e| e.dst == cur)
            .max_by(|a, b| a.weight.total_cmp(&b.weight).then(b.src.cmp(&a.src)))
        else {
            break;
        };
        inf *= f64::min(best.weight + eps, 1.0);
        if inf < tau {
            break;
        }
        out.push((best.src, depth, inf));
        cur = best.src;
    }
    out
}

fn c5_backtracking() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-9;
    for trial in 0..30 {
        let n = if trial % 3 == 0 { rng.random_range(500..=1000u64) } else { rng.random_range(2..=60u64) };
        let (tree, edges) = random_provenance(&mut rng, n);
        for leaf in (1..=n).map(NodeId) {
            let tau = rng.random_range(0.01..0.99);
            let m = rng.random_range(1..=8);
            let got = tree.backtrack(leaf, tau, m, eps).map_err(|e| e.to_string())?;
            let want = product_walk(&edges, leaf, tau, m, eps);
            ensure(got.len() == want.len(), || format!("{leaf}: {} vs {} ancestors", got.len(), want.len()))?;
            for (g, w) in got.iter().zip(&want) {
                ensure(
                    g.id == w.0 && g.depth == w.1 && (g.influence - w.2).abs() <= 1e-12,
                    || format!("{leaf}: {g:?} vs {w:?}"),
                )?;
            }
        }
    }
    let (tree, _) = random_provenance(&mut rng, 80);
    for i in 0..10_000 {
        let leaf = NodeId(rng.random_range(1..=80));
        let (t1, t2) = (rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
        let (tau_lo, tau_hi) = (f64::min(t1, t2), f64::max(t1, t2));
        let (m1, m2) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (m_lo, m_hi) = (m1.min(m2), m1.max(m2));
        let ids = |tau, m| -> BTreeSet<NodeId> { tree.backtrack(leaf, tau, m, eps).unwrap().iter().map(|s| s.id).collect() };
        let wide = ids(tau_lo, m_hi);
        ensure(ids(tau_hi, m_hi).is_subset(&wide), || format!("sample {i}: tau nesting broken"))?;
        ensure(ids(tau_lo, m_lo).is_subset(&wide), || format!("sample {i}: depth nesting broken"))?;
    }
    Ok(())
}

fn primary_maximality(repo: &Repository) -> Check {
    for id in repo.nodes.keys() {
        let demoted: BTreeSet<NodeId> = repo.provenance.supporting(*id).iter().filter(|s| s.demoted).map(|s| s.src).collect();
        let best = repo
            .edges
            .iter()
            .filter(|e| e.dst == *id && !demoted.contains(&e.src))
            .max_by(|a, b| {
                a.weight
                    .total_cmp(&b.weight)
                    .then(a.share.unwrap_or(0.0).total_cmp(&b.share.unwrap_or(0.0)))
                    .then(b.src.cmp(&a.src))
            });
        let got = repo.provenance.primary_parent(*id).map(|p| p.parent);
        ensure(got == best.map(|e| e.src), || format!("{id}: primary {got:?}, expected {:?}", best.map(|e| e.src)))?;
    }
    Ok(())
}

fn structural(repo: &Repository, when: &str) -> Check {
    let order = repo.provenance.topological_order().map_err(|e| format!("{when}: {e}"))?;
    ensure(order.len() == repo.nodes.len(), || format!("{when}: backbone order misses nodes"))?;
    let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    for id in repo.nodes.keys() {
        if let Some(p) = repo.provenance.primary_parent(*id) {
            ensure(pos[&p.parent] < pos[id], || format!("{when}: backbone cycle through {id}"))?;
        }
    }
    primary_maximality(repo).map_err(|e| format!("{when}: {e}"))?;
    common::partition_oracle(repo).map_err(|e| format!("{when}: {e}"))?;
    repo.check_invariants().map_err(|e| format!("{when}: {e}"))
}

fn c6_invariants_after_writeback() -> Check {
    let (mut repo, providers) = common::fixture_repo();
    structural(&repo, "after build")?;
    let queries = [
        "noise injection for regularized gradient training",
        "adaptive momentum steps",
        "temperature controlled sampling",
        "shrinking weights and augmenting data",
    ];
    let operators = [None, Some("abd"), None, Some("ana")];
    for cycle in 0..100 {
        let before = repo.clone();
        let options = RoundOptions {
            j: 1 + cycle % 3,
            threshold: 0.0,
            operator: operators[cycle % operators.len()].map(String::from),
            max_verifications: usize::MAX,
        };
        match innovation_round(&mut repo, queries[cycle % queries.len()], &options, &providers) {
            Ok(_) | Err(methodtree::error::Error::NoOperator(_)) => {}
            Err(e) => return Err(format!("cycle {cycle}: {e}")),
        }
        check_append_only(&before, &repo).map_err(|e| format!("cycle {cycle}: {e}"))?;
        ensure(repo.nodes.len() >= before.nodes.len(), || format!("cycle {cycle}: nodes shrank"))?;
    }
    ensure(repo.version > 0 && repo.abstraction.rebuilds() > 0, || {
        format!("only {} versions and {} rebuilds", repo.version, repo.abstraction.rebuilds())
    })?;
    structural(&repo, "after 100 write-backs")
}

fn text_node(id: u64, words: &[String], embedder: &StubEmbedder, doc: &str) -> MethodNode {
    let summary = words.join(" ");
    let embedding = embedder.embed(&summary).unwrap();
    MethodNode {
        name: String::new(),
        summary,
        keywords: vec![],
        sources: vec![SourceRef {
            doc_id: doc.into(),
            segment_id: format!("{doc}#{id}"),
        }],
        ..bare_node(id, embedding)
    }
}

/// Components of the "cosine above threshold" graph by repeated relabeling.
fn closure_oracle(nodes: &[MethodNode], delta: f64) -> BTreeSet<BTreeSet<NodeId>> {
    let mut label: Vec<usize> = (0..nodes.len()).collect();
    loop {
        let mut changed = false;
        for i in 0..nodes.len() {
            for j in 0..nodes.len() {
                let c: f64 = nodes[i].embedding.as_slice().iter().zip(nodes[j].embedding.as_slice()).map(|(a, b)| a * b).sum();
                if i != j && c > delta && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        groups.entry(label[i]).or_default().insert(n.id);
    }
    groups.into_values().collect()
}

fn c7_dedup() -> Check {
    let embedder = StubEmbedder::new(256);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut chains_seen = 0;
    for trial in 0..50 {
        let mut nodes = Vec::new();
        let mut next = 1u64;
        let topics = rng.random_range(3..=10);
        for t in 0..topics {
            let vocab: Vec<String> = (0..40).map(|w| format!("t{trial}x{t}w{w}")).collect();
            let copies = rng.random_range(1..=3);
            for c in 0..copies {
                // Shifted 24-token windows: neighbours overlap in 23 tokens.
                let shift = if rng.random_bool(0.5) { c } else { 0 };
                nodes.push(text_node(next, &vocab[shift..shift + 24], &embedder, &format!("d{c}")));
                next += 1;
            }
        }
        nodes.shuffle(&mut rng);
        let mut edges = Vec::new();
        for i in 0..nodes.len().saturating_sub(1) {
            if rng.random_bool(0.5) {
                edges.push(ContributionEdge::new(nodes[i].id, nodes[i + 1].id, rng.random_range(1..=5), "").unwrap());
            }
        }
        let want = closure_oracle(&nodes, DEFAULT_MERGE_THRESHOLD);
        let first = deduplicate(&nodes, &edges, DEFAULT_MERGE_THRESHOLD, &embedder).map_err(|e| e.to_string())?;
        let got: BTreeSet<BTreeSet<NodeId>> = first.merges.iter().map(|m| m.members.iter().copied().collect()).collect();
        ensure(got == want, || format!("trial {trial}: components differ from the closure oracle"))?;
        for comp in &want {
            let ids: Vec<&MethodNode> = nodes.iter().filter(|n| comp.contains(&n.id)).collect();
            let direct = ids.iter().enumerate().any(|(i, a)| {
                ids[i + 1..].iter().any(|b| {
                    let c: f64 = a.embedding.as_slice().iter().zip(b.embedding.as_slice()).map(|(x, y)| x * y).sum();
                    c <= DEFAULT_MERGE_THRESHOLD
                })
            });
            chains_seen += usize::from(direct);
        }
        let sources_in: usize = nodes.iter().map(|n| n.sources.len()).sum();
        let sources_out: usize = first.nodes.iter().map(|n| n.sources.len()).sum();
        ensure(sources_in == sources_out, || format!("trial {trial}: sources {sources_in} -> {sources_out}"))?;
        let second = deduplicate(&first.nodes, &first.edges, DEFAULT_MERGE_THRESHOLD, &embedder).map_err(|e| e.to_string())?;
        ensure(
            second.nodes == first.nodes && second.edges == first.edges && second.merges.iter().all(|m| m.members.len() == 1),
            || format!("trial {trial}: second pass changed something"),
        )?;
    }
    ensure(chains_seen > 0, || "no transitive-only chain was planted".into())
}

fn c8_scoring() -> Check {
    let rubric = Rubric::from_config(&ScoringConfig::default());
    let full = combine_score(&rubric, [1.0; 4], true).map_err(|e| e.to_string())?;
    ensure(full == 1.0, || format!("all-ones score {full}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let dims = [(); 4].map(|_| rng.random_range(0.0..=1.0));
        let open = combine_score(&rubric, dims, true).unwrap();
        let shut = combine_score(&rubric, dims, false).unwrap();
        ensure(shut == open.min(0.25), || format!("{dims:?}: gated {shut} vs {open}"))?;
    }
    ensure(combine_score(&rubric, [1.0; 4], false).unwrap() == 0.25, || "gate does not clip to 0.25".into())?;
    for trial in 0..200 {
        let o = if trial % 10 == 0 { 0.5 } else { rng.random_range(0.0..=1.0) };
        let scores: Vec<f64> = (0..rng.random_range(0..20))
            .map(|_| if rng.random_bool(0.2) { 0.5 } else { rng.random_range(0.0..=1.0) })
            .collect();
        let cands: Vec<CandidateInnovation> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| CandidateInnovation {
                id: format!("c{i:02}"),
                summary: String::new(),
                operator: "ind".into(),
                parents: vec![],
                novelty_notes: String::new(),
                applicability: String::new(),
                validation_plan: String::new(),
                rubric: None,
                gate: true,
                score: Some(*s),
                status: CandidateStatus::Pending,
            })
            .collect();
        let (kept, _) = prune(cands, o).unwrap();
        let got: BTreeSet<String> = kept.into_iter().map(|c| c.id).collect();
        let want: BTreeSet<String> = scores.iter().enumerate().filter(|(_, s)| **s >= o).map(|(i, _)| format!("c{i:02}")).collect();
        ensure(got == want, || format!("trial {trial}: prune at {o} disagrees"))?;
    }
    Ok(())
}

const GOLDEN_QUERY: &str = "noise injection for regularized gradient training";

fn cli_session(dir: &std::path::Path) -> Result<Vec<u8>, String> {
    let bin = env!("CARGO_BIN_EXE_methodtree");
    let snap = dir.join("snap");
    let snap = snap.to_str().unwrap();
    let cfg = common::fixture("config.toml");
    let corpus = common::fixture("corpus.jsonl");
    let runs: Vec<Vec<&str>> = vec![
        vec!["--config", cfg.to_str().unwrap(), "build", "--corpus", corpus.to_str().unwrap(), "--snapshot", snap],
        vec!["query", "--snapshot", snap, "--q", GOLDEN_QUERY],
        vec!["innovate", "--snapshot", snap, "--q", GOLDEN_QUERY, "--j", "3", "--threshold", "0"],
        vec!["stats", "--snapshot", snap],
        vec!["export", "--snapshot", snap, "--format", "dot"],
    ];
    let mut all = Vec::new();
    for args in runs {
        let out = Command::new(bin).args(&args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
        all.extend(out.stdout);
    }
    for f in ["nodes.jsonl", "edges.jsonl", "clusters.jsonl", "tree.json", "provenance.json", "manifest.json"] {
        all.extend(std::fs::read(dir.join("snap").join(f)).map_err(|e| e.to_string())?);
    }
    Ok(all)
}

fn c9_fixture_golden() -> Check {
    let (mut repo, providers) = common::fixture_repo();
    let counts = |r: &Repository| (r.nodes.len(), r.edges.len(), r.abstraction.cluster_count());
    // 11 mentions, 2 cross-document duplicates; 7 relations; 4 + 2 clusters.
    ensure(counts(&repo) == (9, 7, 6), || format!("after build {:?}", counts(&repo)))?;
    let ctx = repo.query(GOLDEN_QUERY, &providers).map_err(|e| e.to_string())?;
    ensure(ctx.leaves.len() == 4, || format!("{} leaves retrieved", ctx.leaves.len()))?;
    let options = RoundOptions {
        j: 3,
        threshold: 0.0,
        operator: None,
        max_verifications: usize::MAX,
    };
    let round = innovation_round(&mut repo, GOLDEN_QUERY, &options, &providers).map_err(|e| e.to_string())?;
    ensure(round.writeback.written.len() == 3, || format!("{} written", round.writeback.written.len()))?;
    // Three candidates with three parents each.
    ensure(counts(&repo) == (12, 16, 6), || format!("after write-back {:?}", counts(&repo)))?;
    ensure(repo.version == 1, || format!("version {}", repo.version))?;

    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (x, y) = (cli_session(a.path())?, cli_session(b.path())?);
    let text = String::from_utf8_lossy(&x);
    ensure(text.contains("nodes: 12") && text.contains("edges: 16") && text.contains("clusters: 6"), || {
        "CLI stats disagree with the golden counts".into()
    })?;
    ensure(x == y, || "CLI output differs between runs".into())
}

fn c10_bench() -> Check {
    let report = bench::run(&BenchParams::default()).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = report.rows.iter().map(|r| r.n0).collect();
    ensure(sizes == [256, 512, 1024], || format!("sizes {sizes:?}"))?;
    for (g, f) in report.growth().iter().zip(report.flat_growth()) {
        ensure(*g < 1.5, || format!("funnel growth {g:.3}"))?;
        ensure(f == 2.0, || format!("flat growth {f:.3}"))?;
    }
    for r in &report.rows {
        let levels = r.levels.len();
        let bound = 8.0 * (1.0 - f64::powi(0.5, levels as i32)) / 0.5 + levels as f64;
        ensure(r.within_bound && (r.max_selected as f64) <= bound, || {
            format!("n0={}: selected {} vs bound {bound}", r.n0, r.max_selected)
        })?;
    }
    Ok(())
}

fn c11_loop() -> Check {
    let (start, providers) = common::fixture_repo();
    let mut params = LoopParams::from_repo(&start);
    params.iterations = 20;
    let mut a = start.clone();
    let report = run_loop(&mut a, &params, &providers).map_err(|e| e.to_string())?;
    ensure(report.iterations.len() == 20, || format!("{} iterations ({:?})", report.iterations.len(), report.halted))?;
    let traj = report.node_trajectory();
    ensure(traj.windows(2).all(|w| w[0] <= w[1]) && traj[0] >= start.nodes.len(), || format!("trajectory {traj:?}"))?;
    ensure(a.nodes.len() > start.nodes.len(), || "loop wrote nothing".into())?;
    for it in &report.iterations {
        for id in &it.written {
            let s = a.nodes[id].status;
            ensure(matches!(s, NodeStatus::Conjecture | NodeStatus::Verified), || format!("{id} is {s:?}"))?;
        }
    }
    let broken = broken_derivations(&a);
    ensure(broken.is_empty(), || format!("chains not reaching extracted roots: {broken:?}"))?;
    let mut b = start.clone();
    let replay = run_loop(&mut b, &params, &providers).map_err(|e| e.to_string())?;
    ensure(replay == report && a == b, || "replay diverged".into())
}

/// Name, check and time limit in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 rating to weight", c1_rating_weight, 1),
        ("2 cluster schedule", c2_schedule, 1),
        ("3 funnel budget bound", c3_budget_bound, 1),
        ("4 saturated funnel equals flat top-k", c4_funnel_saturates_to_flat, 30),
        ("5 backtracking influence and nesting", c5_backtracking, 30),
        ("6 invariants after build and write-back", c6_invariants_after_writeback, 60),
        ("7 deduplication", c7_dedup, 30),
        ("8 scoring, gate and prune", c8_scoring, 1),
        ("9 fixture golden counts and stable CLI", c9_fixture_golden, 60),
        ("10 bench scaling", c10_bench, 120),
        ("11 stub loop", c11_loop, 60),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check);
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(Ok(())) if secs > limit as f64 => Err(format!("took {secs:.2}s, limit {limit}s")),
            Ok(r) => r,
            Err(_) => Err("panicked".into()),
        };
        match outcome {
            Ok(()) => println!("PASS criterion {name} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.2}s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! One innovation round end to end, and the autonomous loop built on it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::Actor;
use crate::error::{Error, Result};
use crate::model::{CandidateInnovation, ClusterId, NodeId, NodeStatus, RetrievalContext};
use crate::repo::{Providers, Repository};
use crate::synthesis::{default_library, innovate, select_operator, ContextFacts, Diagnostic, Selection};

use super::verify::{label_for, formalization_request, Label, VerifierOutcome};
use super::writeback::{write_back, WriteBackReport};
use super::Evaluation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOptions {
    pub j: usize,
    pub threshold: f64,
    pub operator: Option<String>,
    pub max_verifications: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub context: RetrievalContext,
    pub selection: Selection,
    pub generated: usize,
    pub diagnostics: Vec<Diagnostic>,
    pub evaluation: Evaluation,
    pub writeback: WriteBackReport,
}

impl RoundOutcome {
    /// Accepted candidates paired with the node each became.
    pub fn written(&self) -> impl Iterator<Item = (&CandidateInnovation, NodeId)> {
        self.evaluation.accepted.iter().zip(self.writeback.written.iter().copied())
    }
}

/// Retrieve, select an operator, generate `j` candidates, evaluate them
/// and write the accepted ones back.
pub fn innovation_round(
    repo: &mut Repository,
    query: &str,
    options: &RoundOptions,
    providers: &Providers,
) -> Result<RoundOutcome> {
    let context = repo.query(query, providers)?;
    let facts = ContextFacts::of(&context, &repo.abstraction);
    let library = default_library();
    let (operator, selection) = select_operator(&library, &facts, options.operator.as_deref())?;
    repo.log(
        Actor::Synthesis,
        json!({"type": "operator_selected", "query": query, "selection": selection}),
    );
    let batch = innovate(
        operator,
        &context,
        &repo.nodes,
        options.j,
        providers.generator.as_ref(),
        repo.config.epsilon,
    )?;
    repo.log(
        Actor::Synthesis,
        json!({
            "type": "operator_applied",
            "operator": batch.operator,
            "generator": providers.generator.id(),
            "j": options.j,
            "candidates": batch.candidates.iter().map(|c| json!({
                "id": c.id,
                "parents": c.parents.iter().map(|p| json!({"id": p.id, "share": p.share})).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        }),
    );
    for d in &batch.diagnostics {
        repo.log(
            Actor::Synthesis,
            json!({"type": "candidate_diagnostic", "variant": d.variant, "message": d.message}),
        );
    }
    let generated = batch.candidates.len();
    let evaluation = repo.evaluate(
        &context,
        batch.candidates,
        options.threshold,
        options.max_verifications,
        providers,
    )?;
    let writeback = write_back(repo, &evaluation.accepted, providers)?;
    Ok(RoundOutcome {
        context,
        selection,
        generated,
        diagnostics: batch.diagnostics,
        evaluation,
        writeback,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub clusters: Vec<ClusterId>,
    pub cross_weight: f64,
    pub question: String,
}

fn leaves_under(repo: &Repository, top: ClusterId) -> BTreeSet<NodeId> {
    repo.abstraction
        .leaves()
        .filter(|l| repo.abstraction.top_cluster_of(*l) == Some(top))
        .collect()
}

/// The pair of top-level clusters with the least total edge weight running
/// between their leaf sets (ties to the smaller pair), phrased as a question.
pub fn find_gap(repo: &Repository) -> Option<Gap> {
    let tops = repo.abstraction.top_level().to_vec();
    let keywords = |c: ClusterId| {
        repo.abstraction
            .cluster(c)
            .map(|n| n.keywords.join(" "))
            .unwrap_or_default()
    };
    if tops.len() == 1 {
        return Some(Gap {
            clusters: tops.clone(),
            cross_weight: 0.0,
            question: format!("extend {}", keywords(tops[0])),
        });
    }
    let sets: BTreeMap<ClusterId, BTreeSet<NodeId>> = tops.iter().map(|c| (*c, leaves_under(repo, *c))).collect();
    let mut best: Option<(f64, ClusterId, ClusterId)> = None;
    for (i, a) in tops.iter().enumerate() {
        for b in &tops[i + 1..] {
            let w: f64 = repo
                .edges
                .iter()
                .filter(|e| {
                    (sets[a].contains(&e.src) && sets[b].contains(&e.dst))
                        || (sets[b].contains(&e.src) && sets[a].contains(&e.dst))
                })
                .map(|e| e.weight)
                .sum();
            if best.is_none_or(|(bw, _, _)| w < bw) {
                best = Some((w, *a, *b));
            }
        }
    }
    best.map(|(w, a, b)| Gap {
        clusters: vec![a, b],
        cross_weight: w,
        question: format!("bridge {} with {}", keywords(a), keywords(b)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    pub iterations: usize,
    pub j: usize,
    pub threshold: f64,
    /// Generator and verifier calls across the whole run.
    pub max_calls: usize,
    pub max_candidates: usize,
    pub falsifier_period: usize,
}

impl LoopParams {
    pub fn from_repo(repo: &Repository) -> Self {
        let c = &repo.config;
        LoopParams {
            iterations: c.evolve.iterations,
            j: c.synthesis.j,
            threshold: c.scoring.threshold,
            max_calls: c.evolve.max_calls,
            max_candidates: c.evolve.max_candidates,
            falsifier_period: c.evolve.falsifier_period,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub question: String,
    pub operator: String,
    pub generated: usize,
    pub kept: usize,
    pub rejected: usize,
    pub written: Vec<NodeId>,
    pub nodes: usize,
    pub edges: usize,
    pub statuses: BTreeMap<String, usize>,
    pub calls: usize,
    /// Conjectures re-checked by the falsifier this iteration.
    pub rechecked: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub iterations: Vec<IterationReport>,
    pub calls: usize,
    pub candidates: usize,
    pub halted: Option<String>,
}

impl LoopReport {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it).expect("report serializes"));
            out.push('\n');
        }
        if let Some(h) = &self.halted {
            out.push_str(&json!({"halted": h}).to_string());
            out.push('\n');
        }
        out
    }

    pub fn node_trajectory(&self) -> Vec<usize> {
        self.iterations.iter().map(|i| i.nodes).collect()
    }
}

/// Re-verifies every conjecture node; passing ones become verified and,
/// under the strict policy, failing ones become rejected.
pub fn falsify(repo: &mut Repository, providers: &Providers, max_calls: usize) -> Result<usize> {
    let targets: Vec<NodeId> = repo
        .nodes
        .values()
        .filter(|n| n.status == NodeStatus::Conjecture)
        .map(|n| n.id)
        .take(max_calls)
        .collect();
    let policy = repo.verify_policy();
    for id in &targets {
        let node = &repo.nodes[id];
        let outcome = providers
            .verifier
            .check(&formalization_request(&node.summary, ""))?;
        let label = match outcome {
            VerifierOutcome::NotFormalizable => Label::Conjecture,
            o => label_for(o, policy),
        };
        let status = label.status();
        if status != NodeStatus::Conjecture {
            repo.nodes.get_mut(id).unwrap().status = status;
        }
        repo.log(
            Actor::Verification,
            json!({"type": "falsifier", "extension": true, "node": id, "outcome": outcome, "status": status.as_str()}),
        );
    }
    Ok(targets.len())
}

/// Runs gap-driven innovation rounds until `iterations` or a budget runs out.
pub fn run_loop(repo: &mut Repository, params: &LoopParams, providers: &Providers) -> Result<LoopReport> {
    if params.iterations < 1 {
        return Err(Error::validation("loop needs at least one iteration"));
    }
    let mut report = LoopReport::default();
    for iteration in 1..=params.iterations {
        let calls_left = params.max_calls.saturating_sub(report.calls);
        let candidates_left = params.max_candidates.saturating_sub(report.candidates);
        let j = params.j.min(calls_left).min(candidates_left);
        if j == 0 {
            let why = if calls_left == 0 { "call budget exhausted" } else { "candidate budget exhausted" };
            report.halted = Some(why.into());
            repo.log(Actor::Loop, json!({"type": "halted", "iteration": iteration, "reason": why}));
            break;
        }
        let Some(gap) = find_gap(repo) else {
            report.halted = Some("repository has no clusters".into());
            break;
        };
        repo.log(Actor::Loop, json!({"type": "gap", "iteration": iteration, "gap": gap}));
        let options = RoundOptions {
            j,
            threshold: params.threshold,
            operator: None,
            max_verifications: calls_left - j,
        };
        let round = match innovation_round(repo, &gap.question, &options, providers) {
            Err(Error::NoOperator(why)) => {
                report.halted = Some(format!("no operator: {why}"));
                break;
            }
            other => other?,
        };
        let mut calls = j + round.evaluation.verifier_calls;
        report.candidates += j;
        let mut rechecked = 0;
        if params.falsifier_period > 0 && iteration % params.falsifier_period == 0 {
            let left = params.max_calls.saturating_sub(report.calls + calls);
            rechecked = falsify(repo, providers, left)?;
            calls += rechecked;
        }
        report.calls += calls;
        report.iterations.push(IterationReport {
            iteration,
            question: gap.question,
            operator: round.selection.operator,
            generated: round.generated,
            kept: round.evaluation.accepted.len(),
            rejected: round.evaluation.rejected.len(),
            written: round.writeback.written,
            nodes: repo.nodes.len(),
            edges: repo.edges.len(),
            statuses: repo.status_histogram(),
            calls,
            rechecked,
        });
        repo.log(Actor::Loop, json!({"type": "iteration", "report": report.iterations.last()}));
    }
    Ok(report)
}

/// Conjecture or verified nodes whose primary chain does not end at an
/// extracted root.
pub fn broken_derivations(repo: &Repository) -> Vec<NodeId> {
    repo.nodes
        .values()
        .filter(|n| matches!(n.status, NodeStatus::Conjecture | NodeStatus::Verified))
        .filter(|n| {
            let root = repo.provenance.chain(n.id).last().map(|(a, _)| a);
            !root
                .and_then(|r| repo.nodes.get(&r))
                .is_some_and(|r| r.status == NodeStatus::Extracted)
        })
        .map(|n| n.id)
        .collect()
}

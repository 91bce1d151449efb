//! Rubric scoring, the weighted combiner and threshold pruning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ScoringConfig;
use crate::embed::{dot, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::http::TextEndpoint;
use crate::model::{CandidateInnovation, Embedding, MethodNode, NodeId, RubricScores};
use crate::synthesis::Evidence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub novelty: f64,
    pub correctness: f64,
    pub usefulness: f64,
    pub explainability: f64,
    pub threshold: f64,
    pub clip: f64,
    pub gate_threshold: f64,
}

impl Default for Rubric {
    fn default() -> Self {
        Rubric::from_config(&ScoringConfig::default())
    }
}

impl Rubric {
    pub fn from_config(c: &ScoringConfig) -> Self {
        Rubric {
            novelty: c.weights.novelty,
            correctness: c.weights.correctness,
            usefulness: c.weights.usefulness,
            explainability: c.weights.explainability,
            threshold: c.threshold,
            clip: c.clip,
            gate_threshold: c.gate_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.novelty, self.correctness, self.usefulness, self.explainability];
        if w.iter().any(|x| *x < 0.0) {
            return Err(Error::validation("rubric weights must be non-negative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("rubric weights sum to {sum}")));
        }
        Ok(())
    }

    /// The four combined dimensions `(N, C, U, E)` read from stored rubric scores.
    pub fn dims(scores: &RubricScores) -> [f64; 4] {
        [scores.novelty, scores.consistency, scores.applicability, scores.consistency]
    }

    pub fn gate(&self, scores: &RubricScores) -> bool {
        scores.alignment >= self.gate_threshold
    }
}

/// `S* = w_N N + w_C C + w_U U + w_E E`, clipped when the gate fails.
pub fn combine_score(rubric: &Rubric, dims: [f64; 4], gate: bool) -> Result<f64> {
    if let Some(d) = dims.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::validation(format!("rubric dimension {d} outside [0, 1]")));
    }
    let s = rubric.novelty * dims[0]
        + rubric.correctness * dims[1]
        + rubric.usefulness * dims[2]
        + rubric.explainability * dims[3];
    let s = s.clamp(0.0, 1.0);
    Ok(if gate { s } else { s.min(rubric.clip) })
}

fn by_score_then_id(a: &CandidateInnovation, b: &CandidateInnovation) -> std::cmp::Ordering {
    b.score
        .unwrap_or(0.0)
        .total_cmp(&a.score.unwrap_or(0.0))
        .then_with(|| a.id.cmp(&b.id))
}

/// Splits scored candidates at `threshold` (ties kept); both halves sorted
/// by score descending then id.
pub fn prune(
    candidates: Vec<CandidateInnovation>,
    threshold: f64,
) -> Result<(Vec<CandidateInnovation>, Vec<CandidateInnovation>)> {
    if let Some(c) = candidates.iter().find(|c| c.score.is_none()) {
        return Err(Error::integrity(format!("candidate {} was never scored", c.id)));
    }
    let (mut kept, mut rejected): (Vec<_>, Vec<_>) =
        candidates.into_iter().partition(|c| c.score.unwrap() >= threshold);
    kept.sort_by(by_score_then_id);
    rejected.sort_by(by_score_then_id);
    Ok((kept, rejected))
}

/// Everything a scorer may look at for one candidate.
pub struct ScoreInput<'a> {
    pub candidate: &'a CandidateInnovation,
    pub candidate_embedding: &'a Embedding,
    pub query_embedding: &'a Embedding,
    pub nodes: &'a BTreeMap<NodeId, MethodNode>,
    pub evidence: &'a Evidence,
}

pub trait Scorer: Send + Sync {
    fn id(&self) -> &str;
    fn rubric(&self, input: &ScoreInput<'_>) -> Result<RubricScores>;
}

/// Embedding-geometry heuristics standing in for a judge model.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubScorer;

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn words(text: &str, full: usize) -> f64 {
    unit(text.split_whitespace().count() as f64 / full as f64)
}

impl Scorer for StubScorer {
    fn id(&self) -> &str {
        "stub-geometry"
    }

    fn rubric(&self, input: &ScoreInput<'_>) -> Result<RubricScores> {
        let c = input.candidate_embedding.as_slice();
        let nearest = input
            .nodes
            .values()
            .map(|n| dot(c, n.embedding.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut consistency = 0.0;
        for p in &input.candidate.parents {
            let node = input
                .nodes
                .get(&p.id)
                .ok_or_else(|| Error::lookup(format!("parent {} not in repository", p.id)))?;
            consistency += p.share * dot(c, node.embedding.as_slice());
        }
        let grounding = unit(input.evidence.nodes.len() as f64 / (2 * input.candidate.parents.len().max(1)) as f64);
        Ok(RubricScores {
            novelty: if nearest.is_finite() { unit(1.0 - nearest) } else { 1.0 },
            consistency: unit(0.5 * unit(consistency) + 0.5 * grounding),
            verifiability: words(&input.candidate.validation_plan, 8),
            applicability: words(&input.candidate.applicability, 4),
            alignment: unit(dot(c, input.query_embedding.as_slice())),
        })
    }
}

/// Remote judge: posts the candidate and reads five comma-separated scores
/// (novelty, consistency, verifiability, applicability, alignment).
pub struct HttpScorer {
    endpoint: TextEndpoint,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>) -> Self {
        HttpScorer {
            endpoint: TextEndpoint::new(url),
        }
    }
}

impl Scorer for HttpScorer {
    fn id(&self) -> &str {
        "http-scorer"
    }

    fn rubric(&self, input: &ScoreInput<'_>) -> Result<RubricScores> {
        let c = input.candidate;
        let body = format!(
            "SUMMARY: {}\nNOVELTY: {}\nAPPLICABILITY: {}\nPLAN: {}",
            c.summary, c.novelty_notes, c.applicability, c.validation_plan
        );
        let reply = self.endpoint.post(self.id(), &body)?;
        let bad = |m: String| Error::Provider {
            provider: self.id().into(),
            message: m,
            retriable: false,
        };
        let v: Vec<f64> = reply
            .trim()
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != 5 || v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(bad(format!("expected five scores in [0, 1], got `{}`", reply.trim())));
        }
        Ok(RubricScores {
            novelty: v[0],
            consistency: v[1],
            verifiability: v[2],
            applicability: v[3],
            alignment: v[4],
        })
    }
}

/// Scores one candidate in place: rubric, gate and combined score.
pub fn score_candidate(
    candidate: &mut CandidateInnovation,
    rubric: &Rubric,
    scorer: &dyn Scorer,
    embedder: &dyn EmbeddingProvider,
    query_embedding: &Embedding,
    nodes: &BTreeMap<NodeId, MethodNode>,
    evidence: &Evidence,
) -> Result<f64> {
    let embedding = embedder.embed(&candidate.summary)?;
    let scores = scorer.rubric(&ScoreInput {
        candidate,
        candidate_embedding: &embedding,
        query_embedding,
        nodes,
        evidence,
    })?;
    let gate = rubric.gate(&scores);
    let s = combine_score(rubric, Rubric::dims(&scores), gate)?;
    candidate.rubric = Some(scores);
    candidate.gate = gate;
    candidate.score = Some(s);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CandidateStatus;
    use proptest::prelude::*;

    fn weighted() -> Rubric {
        Rubric::default()
    }

    #[test]
    fn combiner_examples() {
        let r = weighted();
        assert!((combine_score(&r, [1.0; 4], true).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(combine_score(&r, [1.0; 4], false).unwrap(), 0.25);
        assert!((combine_score(&r, [1.0, 0.0, 0.0, 0.0], true).unwrap() - 0.20).abs() < 1e-12);
        assert!(combine_score(&r, [1.1, 0.0, 0.0, 0.0], true).is_err());
        assert!(combine_score(&r, [0.0, -0.1, 0.0, 0.0], true).is_err());
    }

    #[test]
    fn rubric_validation() {
        weighted().validate().unwrap();
        let bad = Rubric {
            novelty: 0.5,
            ..weighted()
        };
        assert!(bad.validate().is_err());
    }

    fn cand(id: &str, score: f64) -> CandidateInnovation {
        CandidateInnovation {
            id: id.into(),
            summary: "s".into(),
            operator: "abd".into(),
            parents: vec![],
            novelty_notes: String::new(),
            applicability: String::new(),
            validation_plan: String::new(),
            rubric: None,
            gate: true,
            score: Some(score),
            status: CandidateStatus::Pending,
        }
    }

    #[test]
    fn prune_examples() {
        let pool = vec![cand("a", 0.6), cand("b", 0.5), cand("c", 0.4)];
        let (k, r) = prune(pool.clone(), 0.5).unwrap();
        assert_eq!((k.len(), r.len()), (2, 1));
        assert_eq!(prune(pool.clone(), 0.0).unwrap().0.len(), 3);
        assert!(prune(pool, 1.0).unwrap().0.is_empty());
        let mut unscored = cand("z", 0.0);
        unscored.score = None;
        assert!(prune(vec![unscored], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn combiner_monotone_and_clipped(
            dims in prop::array::uniform4(0.0f64..=1.0),
            bump in 0.0f64..=1.0,
            which in 0usize..4,
        ) {
            let r = weighted();
            let mut hi = dims;
            hi[which] = (hi[which] + bump).min(1.0);
            for gate in [true, false] {
                let a = combine_score(&r, dims, gate).unwrap();
                let b = combine_score(&r, hi, gate).unwrap();
                prop_assert!(b >= a);
                prop_assert!((0.0..=1.0).contains(&a));
            }
            prop_assert!(combine_score(&r, dims, false).unwrap() <= r.clip);
        }

        #[test]
        fn prune_stable_under_permutation(
            scores in prop::collection::vec(0.0f64..=1.0, 0..20),
            o in 0.0f64..=1.0,
            rot in 0usize..20,
        ) {
            let pool: Vec<_> = scores.iter().enumerate().map(|(i, s)| cand(&format!("c{i:02}"), *s)).collect();
            let mut shuffled = pool.clone();
            if !shuffled.is_empty() {
                let n = rot % shuffled.len();
                shuffled.rotate_left(n);
                shuffled.reverse();
            }
            let a = prune(pool, o).unwrap();
            let b = prune(shuffled, o).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.0.iter().all(|c| c.score.unwrap() >= o));
            prop_assert!(a.1.iter().all(|c| c.score.unwrap() < o));
        }
    }

    #[test]
    fn http_scorer_parses_scores() {
        let url = crate::http::testing::serve(2, |body| {
            if body.contains("bad") { "1,2".into() } else { "0.1,0.2,0.3,0.4,0.5".into() }
        });
        let e = Embedding::normalized(vec![1.0]).unwrap();
        let nodes = BTreeMap::new();
        let ev = Evidence::default();
        let c = cand("x", 0.0);
        let input = ScoreInput {
            candidate: &c,
            candidate_embedding: &e,
            query_embedding: &e,
            nodes: &nodes,
            evidence: &ev,
        };
        let s = HttpScorer::new(url.clone()).rubric(&input).unwrap();
        assert_eq!(s.alignment, 0.5);
        let mut b = cand("y", 0.0);
        b.summary = "bad".into();
        let input = ScoreInput { candidate: &b, ..input };
        assert!(HttpScorer::new(url).rubric(&input).is_err());
    }
}

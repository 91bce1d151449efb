//! Candidate quality control and the evolution loop.
//!
//! Candidates are scored, pruned at the keep threshold, screened by the
//! safety hook, labeled by the verifier, and finally written back.

pub mod evolve;
pub mod scoring;
pub mod verify;
pub mod writeback;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::Actor;
use crate::error::Result;
use crate::model::{CandidateInnovation, CandidateStatus, RetrievalContext};
use crate::repo::{Providers, Repository};
use crate::synthesis::collect_evidence;

use scoring::{prune, score_candidate, Rubric};
use verify::{verify, Label, VerifyDecision, VerifyPolicy};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Kept, safe and labeled verified or conjecture; ready for write-back.
    pub accepted: Vec<CandidateInnovation>,
    /// Below threshold, unsafe, or rejected by verification.
    pub rejected: Vec<CandidateInnovation>,
    /// Kept but left unverified because the verification budget ran out.
    pub pending: Vec<CandidateInnovation>,
    pub decisions: Vec<VerifyDecision>,
    pub verifier_calls: usize,
}

impl Repository {
    pub fn verify_policy(&self) -> VerifyPolicy {
        if self.config.verify.strict {
            VerifyPolicy::Strict
        } else {
            VerifyPolicy::Downgrade
        }
    }

    /// Scores, prunes at `threshold`, applies the safety hook and verifies
    /// at most `max_verifications` kept candidates.
    pub fn evaluate(
        &mut self,
        context: &RetrievalContext,
        candidates: Vec<CandidateInnovation>,
        threshold: f64,
        max_verifications: usize,
        providers: &Providers,
    ) -> Result<Evaluation> {
        let rubric = Rubric::from_config(&self.config.scoring);
        rubric.validate()?;
        let ev = self.config.evidence.clone();
        let mut scored = Vec::with_capacity(candidates.len());
        for mut c in candidates {
            let evidence = collect_evidence(&self.provenance, &c.parents, ev.d_min, ev.d_range, ev.gamma)?;
            let s = score_candidate(
                &mut c,
                &rubric,
                providers.scorer.as_ref(),
                providers.embedder.as_ref(),
                &context.query_embedding,
                &self.nodes,
                &evidence,
            )?;
            self.log(
                Actor::Scoring,
                json!({
                    "type": "scored",
                    "candidate": c.id,
                    "score": s,
                    "gate": c.gate,
                    "rubric": c.rubric,
                    "evidence": evidence.nodes,
                }),
            );
            scored.push(c);
        }
        let (kept, below) = prune(scored, threshold)?;
        self.log(
            Actor::Scoring,
            json!({
                "type": "pruned",
                "threshold": threshold,
                "kept": kept.iter().map(|c| &c.id).collect::<Vec<_>>(),
                "rejected": below.iter().map(|c| &c.id).collect::<Vec<_>>(),
            }),
        );
        let mut out = Evaluation {
            rejected: below
                .into_iter()
                .map(|mut c| {
                    c.status = CandidateStatus::Rejected;
                    c
                })
                .collect(),
            ..Evaluation::default()
        };
        let policy = self.verify_policy();
        for mut c in kept {
            c.status = CandidateStatus::Kept;
            if let Some(reason) = (providers.safety)(&c) {
                self.log(Actor::Verification, json!({"type": "unsafe", "candidate": c.id, "reason": reason}));
                c.status = CandidateStatus::Rejected;
                out.rejected.push(c);
                continue;
            }
            if out.verifier_calls >= max_verifications {
                self.log(Actor::Verification, json!({"type": "verify_deferred", "candidate": c.id}));
                out.pending.push(c);
                continue;
            }
            out.verifier_calls += 1;
            let d = verify(&c, providers.verifier.as_ref(), policy)?;
            self.log(
                Actor::Verification,
                json!({
                    "type": "verified",
                    "candidate": c.id,
                    "verifier": d.verifier,
                    "outcome": d.outcome,
                    "policy": d.policy,
                    "label": d.label,
                }),
            );
            c.status = match d.label {
                Label::Verified => CandidateStatus::Verified,
                Label::Conjecture => CandidateStatus::Conjecture,
                Label::Rejected => CandidateStatus::Rejected,
            };
            if d.label == Label::Rejected {
                out.rejected.push(c);
            } else {
                out.accepted.push(c);
            }
            out.decisions.push(d);
        }
        Ok(out)
    }
}

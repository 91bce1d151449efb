//! Verifier providers, the labeling policy and the pre-write safety hook.

use serde::{Deserialize, Serialize};

use crate::embed::fnv1a;
use crate::error::{Error, Result};
use crate::http::TextEndpoint;
use crate::model::{CandidateInnovation, NodeStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierOutcome {
    Pass,
    Fail,
    Timeout,
    NotFormalizable,
}

impl VerifierOutcome {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pass" => Some(VerifierOutcome::Pass),
            "fail" => Some(VerifierOutcome::Fail),
            "timeout" => Some(VerifierOutcome::Timeout),
            "not_formalizable" => Some(VerifierOutcome::NotFormalizable),
            _ => None,
        }
    }
}

pub trait Verifier: Send + Sync {
    fn id(&self) -> &str;
    fn check(&self, request: &str) -> Result<VerifierOutcome>;
}

/// Declines every request; everything stays a conjecture.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullVerifier;

impl Verifier for NullVerifier {
    fn id(&self) -> &str {
        "null"
    }
    fn check(&self, _: &str) -> Result<VerifierOutcome> {
        Ok(VerifierOutcome::NotFormalizable)
    }
}

/// Returns the same outcome for every request.
#[derive(Clone, Copy, Debug)]
pub struct ConstVerifier(pub VerifierOutcome);

impl Verifier for ConstVerifier {
    fn id(&self) -> &str {
        match self.0 {
            VerifierOutcome::Pass => "always-pass",
            VerifierOutcome::Fail => "always-fail",
            VerifierOutcome::Timeout => "always-timeout",
            VerifierOutcome::NotFormalizable => "never-formal",
        }
    }
    fn check(&self, _: &str) -> Result<VerifierOutcome> {
        Ok(self.0)
    }
}

/// Deterministic mix of outcomes keyed on the request hash.
#[derive(Clone, Copy, Debug, Default)]
pub struct HashVerifier;

impl Verifier for HashVerifier {
    fn id(&self) -> &str {
        "hash"
    }
    fn check(&self, request: &str) -> Result<VerifierOutcome> {
        Ok(match fnv1a(request.as_bytes()) % 4 {
            0 => VerifierOutcome::Pass,
            1 => VerifierOutcome::Fail,
            2 => VerifierOutcome::Timeout,
            _ => VerifierOutcome::NotFormalizable,
        })
    }
}

/// Remote verifier answering one of `pass`, `fail`, `timeout`, `not_formalizable`.
pub struct HttpVerifier {
    endpoint: TextEndpoint,
}

impl HttpVerifier {
    pub fn new(url: impl Into<String>) -> Self {
        HttpVerifier {
            endpoint: TextEndpoint::new(url),
        }
    }
}

impl Verifier for HttpVerifier {
    fn id(&self) -> &str {
        "http-verifier"
    }
    fn check(&self, request: &str) -> Result<VerifierOutcome> {
        let reply = self.endpoint.post(self.id(), request)?;
        VerifierOutcome::parse(&reply).ok_or_else(|| Error::Provider {
            provider: self.id().into(),
            message: format!("unknown verdict `{}`", reply.trim()),
            retriable: false,
        })
    }
}

/// Built-in verifier by name: null | pass | fail | hash.
pub fn builtin_verifier(name: &str) -> Result<Box<dyn Verifier>> {
    Ok(match name {
        "null" => Box::new(NullVerifier),
        "pass" => Box::new(ConstVerifier(VerifierOutcome::Pass)),
        "fail" => Box::new(ConstVerifier(VerifierOutcome::Fail)),
        "hash" => Box::new(HashVerifier),
        other => return Err(Error::Config(format!("unknown verifier `{other}`"))),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyPolicy {
    /// Failed proofs become labeled conjectures.
    Downgrade,
    /// Failed proofs are rejected.
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Verified,
    Conjecture,
    Rejected,
}

impl Label {
    pub fn status(self) -> NodeStatus {
        match self {
            Label::Verified => NodeStatus::Verified,
            Label::Conjecture => NodeStatus::Conjecture,
            Label::Rejected => NodeStatus::Rejected,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyDecision {
    pub candidate: String,
    pub verifier: String,
    pub outcome: VerifierOutcome,
    pub policy: VerifyPolicy,
    pub label: Label,
}

pub fn label_for(outcome: VerifierOutcome, policy: VerifyPolicy) -> Label {
    match (outcome, policy) {
        (VerifierOutcome::Pass, _) => Label::Verified,
        (VerifierOutcome::NotFormalizable, _) => Label::Conjecture,
        (VerifierOutcome::Fail | VerifierOutcome::Timeout, VerifyPolicy::Downgrade) => Label::Conjecture,
        (VerifierOutcome::Fail | VerifierOutcome::Timeout, VerifyPolicy::Strict) => Label::Rejected,
    }
}

/// Text handed to the verifier for a candidate.
pub fn formalization_request(summary: &str, plan: &str) -> String {
    format!("CLAIM: {summary}\nPLAN: {plan}")
}

/// Runs the verifier and applies the policy. A verifier error leaves the
/// candidate pending and is returned as retriable.
pub fn verify(
    candidate: &CandidateInnovation,
    verifier: &dyn Verifier,
    policy: VerifyPolicy,
) -> Result<VerifyDecision> {
    let outcome = verifier
        .check(&formalization_request(&candidate.summary, &candidate.validation_plan))
        .map_err(|e| match e {
            Error::Provider { provider, message, .. } => Error::Provider {
                provider,
                message: format!("{}: {message}", candidate.id),
                retriable: true,
            },
            other => other,
        })?;
    Ok(VerifyDecision {
        candidate: candidate.id.clone(),
        verifier: verifier.id().into(),
        outcome,
        policy,
        label: label_for(outcome, policy),
    })
}

/// Deny-list predicate run before write-back; `Some(reason)` blocks the candidate.
pub type SafetyHook = dyn Fn(&CandidateInnovation) -> Option<String> + Send + Sync;

pub fn default_safety(candidate: &CandidateInnovation) -> Option<String> {
    candidate
        .validation_plan
        .trim()
        .is_empty()
        .then(|| "empty validation plan".to_string())
}

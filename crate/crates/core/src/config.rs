//! Engine configuration, loaded from TOML with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::TreeParams;
use crate::dedup::DEFAULT_MERGE_THRESHOLD;
use crate::embed::DEFAULT_DIMENSION;
use crate::error::{Error, Result};
use crate::funnel::{FunnelParams, DEFAULT_ETA, DEFAULT_K1};
use crate::ingest::DEFAULT_SEGMENT_LENGTH;
use crate::model::DEFAULT_EPSILON;
use crate::provenance::{DEFAULT_DEPTH_MIN, DEFAULT_DEPTH_RANGE, DEFAULT_GAMMA, DEFAULT_MAX_ANCESTORS, DEFAULT_TAU};

/// Environment variables that override provider endpoints.
pub const ENV_ENDPOINTS: [(&str, Provider); 5] = [
    ("METHODTREE_EMBEDDER_URL", Provider::Embedder),
    ("METHODTREE_EXTRACTOR_URL", Provider::Extractor),
    ("METHODTREE_GENERATOR_URL", Provider::Generator),
    ("METHODTREE_SCORER_URL", Provider::Scorer),
    ("METHODTREE_VERIFIER_URL", Provider::Verifier),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provider {
    Embedder,
    Extractor,
    Generator,
    Scorer,
    Verifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub segment_length: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            segment_length: DEFAULT_SEGMENT_LENGTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub delta_merge: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            delta_merge: DEFAULT_MERGE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub levels: usize,
    pub k1: Option<usize>,
    pub kn: Option<usize>,
    pub kmin: usize,
    pub rebuild_every: usize,
    pub batch_size: usize,
    pub max_iterations: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        let p = TreeParams::default();
        TreeConfig {
            levels: p.levels,
            k1: p.k1,
            kn: p.kn,
            kmin: p.kmin,
            rebuild_every: p.rebuild_every,
            batch_size: p.batch_size,
            max_iterations: p.max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k1: usize,
    pub eta: f64,
    pub k_leaf: Option<usize>,
    pub tau: f64,
    pub m_max: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k1: DEFAULT_K1,
            eta: DEFAULT_ETA,
            k_leaf: None,
            tau: DEFAULT_TAU,
            m_max: DEFAULT_MAX_ANCESTORS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceConfig {
    pub d_min: usize,
    pub d_range: usize,
    pub gamma: f64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig {
            d_min: DEFAULT_DEPTH_MIN,
            d_range: DEFAULT_DEPTH_RANGE,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub novelty: f64,
    pub correctness: f64,
    pub usefulness: f64,
    pub explainability: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            novelty: 0.20,
            correctness: 0.35,
            usefulness: 0.30,
            explainability: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Keep threshold `o`.
    pub threshold: f64,
    pub clip: f64,
    /// Minimum alignment for the goal gate to pass.
    pub gate_threshold: f64,
    pub weights: WeightsConfig,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            threshold: 0.4,
            clip: 0.25,
            gate_threshold: 0.1,
            weights: WeightsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub j: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { j: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Failed or timed-out proofs reject instead of downgrading.
    pub strict: bool,
    /// Built-in verifier when no endpoint is set: null | pass | fail | hash.
    pub verifier: String,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            strict: false,
            verifier: "null".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub iterations: usize,
    pub max_calls: usize,
    pub max_candidates: usize,
    /// Re-verify conjectures every this many iterations; 0 disables.
    pub falsifier_period: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            iterations: 20,
            max_calls: 10_000,
            max_candidates: 10_000,
            falsifier_period: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub embedder: Option<String>,
    pub extractor: Option<String>,
    pub generator: Option<String>,
    pub scorer: Option<String>,
    pub verifier: Option<String>,
}

impl ProvidersConfig {
    fn slot(&mut self, p: Provider) -> &mut Option<String> {
        match p {
            Provider::Embedder => &mut self.embedder,
            Provider::Extractor => &mut self.extractor,
            Provider::Generator => &mut self.generator,
            Provider::Scorer => &mut self.scorer,
            Provider::Verifier => &mut self.verifier,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub epsilon: f64,
    pub dimension: usize,
    pub ingest: IngestConfig,
    pub dedup: DedupConfig,
    pub tree: TreeConfig,
    pub retrieval: RetrievalConfig,
    pub evidence: EvidenceConfig,
    pub synthesis: SynthesisConfig,
    pub scoring: ScoringConfig,
    pub verify: VerifyConfig,
    #[serde(rename = "loop")]
    pub evolve: LoopConfig,
    pub providers: ProvidersConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            epsilon: DEFAULT_EPSILON,
            dimension: DEFAULT_DIMENSION,
            ingest: IngestConfig::default(),
            dedup: DedupConfig::default(),
            tree: TreeConfig::default(),
            retrieval: RetrievalConfig::default(),
            evidence: EvidenceConfig::default(),
            synthesis: SynthesisConfig::default(),
            scoring: ScoringConfig::default(),
            verify: VerifyConfig::default(),
            evolve: LoopConfig::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies endpoint overrides from `vars` (normally the process environment).
    pub fn apply_env(&mut self, vars: impl Fn(&str) -> Option<String>) {
        for (name, provider) in ENV_ENDPOINTS {
            if let Some(url) = vars(name).filter(|v| !v.is_empty()) {
                *self.providers.slot(provider) = Some(url);
            }
        }
    }

    /// sha256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        check(self.epsilon > 0.0, || format!("epsilon must be > 0, got {}", self.epsilon))?;
        check(self.dimension >= 1, || "dimension must be at least 1".into())?;
        check(self.ingest.segment_length >= 1, || "segment_length must be at least 1".into())?;
        let d = self.dedup.delta_merge;
        check(d > 0.0 && d < 1.0, || format!("delta_merge {d} outside (0, 1)"))?;
        let t = &self.tree;
        check(t.levels >= 1, || "tree.levels must be at least 1".into())?;
        check(t.kmin >= 1, || "tree.kmin must be at least 1".into())?;
        check(t.batch_size >= 1 && t.max_iterations >= 1, || "k-means batch size and iterations must be ≥ 1".into())?;
        if let (Some(k1), Some(kn)) = (t.k1, t.kn) {
            check(1 <= kn && kn <= k1, || format!("tree.kn = {kn} must be in [1, k1 = {k1}]"))?;
        }
        let r = &self.retrieval;
        check(r.k1 >= 1, || "retrieval.k1 must be at least 1".into())?;
        check(r.eta > 0.0 && r.eta < 1.0, || format!("retrieval.eta {} outside (0, 1)", r.eta))?;
        check(r.k_leaf != Some(0), || "retrieval.k_leaf must be at least 1".into())?;
        check(r.tau > 0.0 && r.tau < 1.0, || format!("retrieval.tau {} outside (0, 1)", r.tau))?;
        check(r.m_max >= 1, || "retrieval.m_max must be at least 1".into())?;
        check(self.evidence.gamma > 0.0, || "evidence.gamma must be > 0".into())?;
        check(self.synthesis.j >= 1, || "synthesis.j must be at least 1".into())?;
        let s = &self.scoring;
        check((0.0..=1.0).contains(&s.threshold), || format!("scoring.threshold {} outside [0, 1]", s.threshold))?;
        check((0.0..=1.0).contains(&s.clip), || format!("scoring.clip {} outside [0, 1]", s.clip))?;
        check((-1.0..=1.0).contains(&s.gate_threshold), || "scoring.gate_threshold outside [-1, 1]".into())?;
        let w = &s.weights;
        let ws = [w.novelty, w.correctness, w.usefulness, w.explainability];
        check(ws.iter().all(|x| *x >= 0.0), || "rubric weights must be non-negative".into())?;
        let sum: f64 = ws.iter().sum();
        check((sum - 1.0).abs() <= 1e-9, || format!("rubric weights sum to {sum}, not 1"))?;
        check(
            ["null", "pass", "fail", "hash"].contains(&self.verify.verifier.as_str()),
            || format!("unknown verifier `{}`", self.verify.verifier),
        )?;
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            levels: self.tree.levels,
            k1: self.tree.k1,
            kn: self.tree.kn,
            kmin: self.tree.kmin,
            seed: self.seed,
            rebuild_every: self.tree.rebuild_every,
            batch_size: self.tree.batch_size,
            max_iterations: self.tree.max_iterations,
        }
    }

    pub fn funnel_params(&self) -> FunnelParams {
        FunnelParams {
            k1: self.retrieval.k1,
            eta: self.retrieval.eta,
            k_leaf: self.retrieval.k_leaf,
        }
    }
}

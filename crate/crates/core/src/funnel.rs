//! Top-down funnel retrieval over the abstraction tree.
//!
//! The descent starts at the top cluster level with budget `k_1` and keeps
//! only the children of the selected clusters at each step (beam search),
//! with `k_t = max(1, ceil(k_1 η^(t−1)))`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::abstraction::{ceil_tolerant, AbstractionTree};
use crate::embed::dot;
use crate::error::{Error, Result};
use crate::index::rank_top_k;
use crate::model::{Embedding, MethodNode, NodeId, Scored, TraceStep, TreeRef};

pub const DEFAULT_K1: usize = 8;
pub const DEFAULT_ETA: f64 = 0.5;

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("decay η = {eta} outside (0, 1)")))
    }
}

/// Selection budget at step `t` (1-based).
pub fn budget(k1: usize, eta: f64, t: usize) -> Result<usize> {
    check_eta(eta)?;
    if k1 < 1 || t < 1 {
        return Err(Error::validation("budget needs k1 ≥ 1 and t ≥ 1"));
    }
    Ok(ceil_tolerant(k1 as f64 * eta.powi(t as i32 - 1)).max(1))
}

/// `k_1 (1 − η^n) / (1 − η) + n`.
pub fn budget_bound(k1: usize, eta: f64, levels: usize) -> f64 {
    k1 as f64 * (1.0 - eta.powi(levels as i32)) / (1.0 - eta) + levels as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnelParams {
    pub k1: usize,
    pub eta: f64,
    /// Leaf-stage budget; defaults to the next budget in the schedule.
    pub k_leaf: Option<usize>,
}

impl Default for FunnelParams {
    fn default() -> Self {
        FunnelParams {
            k1: DEFAULT_K1,
            eta: DEFAULT_ETA,
            k_leaf: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub leaves: Vec<Scored<NodeId>>,
    pub trace: Vec<TraceStep>,
}

/// Descends from the top level to the leaves.
pub fn retrieve(
    tree: &AbstractionTree,
    leaves: &BTreeMap<NodeId, MethodNode>,
    query: &Embedding,
    params: FunnelParams,
) -> Result<Retrieval> {
    if tree.is_empty() {
        return Err(Error::lookup("abstraction tree is empty"));
    }
    let levels = tree.level_count();
    let mut trace = Vec::with_capacity(levels + 1);
    let mut pool: Vec<TreeRef> = tree.top_level().iter().map(|c| TreeRef::Cluster(*c)).collect();

    for step in 1..=levels {
        let level = levels + 1 - step;
        let k = budget(params.k1, params.eta, step)?;
        let scored: Vec<Scored<TreeRef>> = pool
            .iter()
            .map(|r| {
                let TreeRef::Cluster(c) = r else {
                    return Err(Error::integrity(format!("{r} found in a cluster pool")));
                };
                let node = tree
                    .cluster(*c)
                    .ok_or_else(|| Error::integrity(format!("{c} missing from tree")))?;
                Ok(Scored {
                    id: *r,
                    similarity: dot(query.as_slice(), node.summary_embedding.as_slice()),
                })
            })
            .collect::<Result<_>>()?;
        let selected: Vec<TreeRef> = rank_top_k(scored.clone(), k).into_iter().map(|s| s.id).collect();
        let mut next = Vec::new();
        for r in &selected {
            if let TreeRef::Cluster(c) = r {
                next.extend(tree.cluster(*c).map(|n| n.children.refs()).unwrap_or_default());
            }
        }
        next.sort();
        trace.push(TraceStep {
            step,
            level,
            budget: k,
            pool: scored,
            selected,
        });
        pool = next;
    }

    let k = match params.k_leaf {
        Some(k) if k >= 1 => k,
        Some(_) => return Err(Error::validation("k_leaf must be at least 1")),
        None => budget(params.k1, params.eta, levels + 1)?,
    };
    let scored: Vec<Scored<NodeId>> = pool
        .iter()
        .map(|r| {
            let TreeRef::Leaf(id) = r else {
                return Err(Error::integrity(format!("{r} found in the leaf pool")));
            };
            let node = leaves
                .get(id)
                .ok_or_else(|| Error::lookup(format!("leaf {id} has no node")))?;
            Ok(Scored {
                id: *id,
                similarity: dot(query.as_slice(), node.embedding.as_slice()),
            })
        })
        .collect::<Result<_>>()?;
    let top = rank_top_k(scored.clone(), k);
    trace.push(TraceStep {
        step: levels + 1,
        level: 0,
        budget: k,
        pool: scored
            .into_iter()
            .map(|s| Scored {
                id: TreeRef::Leaf(s.id),
                similarity: s.similarity,
            })
            .collect(),
        selected: top.iter().map(|s| TreeRef::Leaf(s.id)).collect(),
    });
    Ok(Retrieval { leaves: top, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCost {
    pub step: usize,
    pub level: usize,
    pub comparisons: usize,
    pub selected: usize,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub levels: Vec<LevelCost>,
    /// Comparisons across all steps, leaf stage included.
    pub total_comparisons: usize,
    /// Σ selected over the cluster levels.
    pub selected_total: usize,
    /// Σ k_t over the cluster levels.
    pub budget_total: usize,
    pub bound: f64,
}

/// Per-step comparison counts (exact mode: pool size) and the analytic bound.
pub fn cost_report(trace: &[TraceStep], k1: usize, eta: f64) -> CostReport {
    let levels: Vec<LevelCost> = trace
        .iter()
        .map(|s| LevelCost {
            step: s.step,
            level: s.level,
            comparisons: s.pool.len(),
            selected: s.selected.len(),
            budget: s.budget,
        })
        .collect();
    let clusters = levels.iter().filter(|l| l.level > 0);
    let n = clusters.clone().count();
    CostReport {
        total_comparisons: levels.iter().map(|l| l.comparisons).sum(),
        selected_total: clusters.clone().map(|l| l.selected).sum(),
        budget_total: clusters.map(|l| l.budget).sum(),
        bound: budget_bound(k1, eta, n),
        levels,
    }
}

/// One line per step: `step level budget pool selected` and scored pool.
pub fn format_trace(trace: &[TraceStep]) -> String {
    let mut out = String::new();
    for s in trace {
        let selected: Vec<String> = s.selected.iter().map(ToString::to_string).collect();
        let pool: Vec<String> = s
            .pool
            .iter()
            .map(|p| format!("{}={:.6}", p.id, p.similarity))
            .collect();
        let level = if s.level == 0 { "leaf".to_string() } else { s.level.to_string() };
        let _ = writeln!(
            out,
            "step={} level={} budget={} pool={} selected=[{}] scores=[{}]",
            s.step,
            level,
            s.budget,
            s.pool.len(),
            selected.join(","),
            pool.join(",")
        );
    }
    out
}

//! Append-only audit trail.
//!
//! Records carry a gap-free sequence number and the snapshot version they
//! were emitted against. Persistence only ever appends to the log file.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Ingest,
    Dedup,
    Retrieval,
    Synthesis,
    Scoring,
    Verification,
    Writeback,
    Loop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub actor: Actor,
    pub event: Value,
    pub snapshot_version: u64,
}

#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<AuditRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.seq != i as u64 + 1 {
                return Err(Error::integrity(format!(
                    "audit record {} has sequence {} (expected {})",
                    i,
                    r.seq,
                    i + 1
                )));
            }
        }
        Ok(AuditLog { records })
    }

    pub fn append(&mut self, actor: Actor, snapshot_version: u64, event: Value) -> u64 {
        let seq = self.records.len() as u64 + 1;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.records.push(AuditRecord {
            seq,
            timestamp,
            actor,
            event,
            snapshot_version,
        });
        seq
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    pub fn by_actor(&self, actor: Actor) -> impl Iterator<Item = &AuditRecord> {
        self.records.iter().filter(move |r| r.actor == actor)
    }

    /// Records whose `event.type` equals `kind`.
    pub fn events_of(&self, kind: &str) -> impl Iterator<Item = &AuditRecord> + '_ {
        let kind = kind.to_string();
        self.records
            .iter()
            .filter(move |r| r.event.get("type").and_then(Value::as_str) == Some(kind.as_str()))
    }

    /// Same sequence, actors, payloads and versions; timestamps ignored.
    pub fn same_content(&self, other: &AuditLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.seq == b.seq
                    && a.actor == b.actor
                    && a.event == b.event
                    && a.snapshot_version == b.snapshot_version
            })
    }
}

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::io::{self, Write};

use super::{EntityId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    TriageStart,
    TriageDone,
    ResourceRequest,
    ResourceGrant,
    ResourceRelease,
    TreatmentStart,
    TreatmentDone,
    TreatmentError,
    Deterioration,
    Death,
    Lwbs,
    Discharge,
    ShiftChange,
    InterventionApplied,
    Checkpoint,
    AdmissionBlocked,
}

/// Kind-specific key/value data attached to a record. Keys are kept sorted so
/// serialized ledgers are byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Payload(pub BTreeMap<String, Value>);

impl Payload {
    pub fn new() -> Self {
        Payload(BTreeMap::new())
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(Value::as_u64)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub time: SimTime,
    pub kind: EventKind,
    pub subject: EntityId,
    pub payload: Payload,
}

/// Append-only event log.
///
/// Only the sequence counter is part of serialized run state; records are an
/// output stream that the run driver drains and archives.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ledger {
    next_seq: u64,
    #[serde(skip)]
    records: Vec<EventRecord>,
}

impl Ledger {
    pub fn append(
        &mut self,
        time: SimTime,
        kind: EventKind,
        subject: EntityId,
        payload: Payload,
    ) -> u64 {
        debug_assert!(self.records.last().is_none_or(|r| r.time <= time));
        let seq = self.next_seq;
        self.next_seq += 1;
        self.records.push(EventRecord {
            seq,
            time,
            kind,
            subject,
            payload,
        });
        seq
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    /// Removes and returns everything buffered so far.
    pub fn drain(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.records)
    }
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: Write>(mut out: W, records: &[EventRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<EventRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

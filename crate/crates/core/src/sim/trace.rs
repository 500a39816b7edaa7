//! Trace documents: a header line followed by one JSON event per line.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{ImpactError, MonitoredSet, ProcessId, SetSpec, Status, TrustSnapshot};
use crate::value::ImpactValue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    /// Hex digest of the scenario that produced the trace.
    pub scenario: String,
    pub seed: u64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<SetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heartbeat_period_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

impl TraceHeader {
    pub fn new(scenario: impl Into<String>, seed: u64) -> Self {
        TraceHeader {
            scenario: scenario.into(),
            seed,
            version: crate::sim::TOOL_VERSION.to_owned(),
            name: None,
            set: None,
            heartbeat_period_ms: None,
            sample_period_ms: None,
            duration_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "e", rename_all = "snake_case")]
pub enum EventKind {
    Crash {
        q: ProcessId,
    },
    HbSend {
        q: ProcessId,
        seq: u64,
    },
    Drop {
        q: ProcessId,
        seq: u64,
    },
    HbRecv {
        q: ProcessId,
        seq: u64,
    },
    Suspect {
        q: ProcessId,
    },
    Trust {
        q: ProcessId,
    },
    Sample {
        trusted: BTreeSet<ProcessId>,
        level: ImpactValue,
        status: Status,
    },
}

impl EventKind {
    /// Position among events sharing a timestamp.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::Crash { .. } => 0,
            EventKind::HbSend { .. } => 1,
            EventKind::Drop { .. } => 2,
            EventKind::HbRecv { .. } => 3,
            EventKind::Suspect { .. } | EventKind::Trust { .. } => 4,
            EventKind::Sample { .. } => 5,
        }
    }

    pub fn process(&self) -> Option<&ProcessId> {
        match self {
            EventKind::Crash { q }
            | EventKind::HbSend { q, .. }
            | EventKind::Drop { q, .. }
            | EventKind::HbRecv { q, .. }
            | EventKind::Suspect { q }
            | EventKind::Trust { q } => Some(q),
            EventKind::Sample { .. } => None,
        }
    }

    fn seq(&self) -> Option<u64> {
        match self {
            EventKind::HbSend { seq, .. }
            | EventKind::Drop { seq, .. }
            | EventKind::HbRecv { seq, .. } => Some(*seq),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(t: u64, kind: EventKind) -> Self {
        Event { t, kind }
    }

    pub fn sample(snapshot: &TrustSnapshot) -> Self {
        Event {
            t: snapshot.at,
            kind: EventKind::Sample {
                trusted: snapshot.trusted.clone(),
                level: snapshot.trust_level,
                status: snapshot.status,
            },
        }
    }

    /// Total order: time, event type, process id, sequence number.
    pub fn sort_key(&self) -> (u64, u8, Option<&ProcessId>, Option<u64>) {
        (
            self.t,
            self.kind.rank(),
            self.kind.process(),
            self.kind.seq(),
        )
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for e in &self.events {
            serde_json::to_writer(&mut out, e).expect("event serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Trace, TraceError> {
        let text = std::str::from_utf8(bytes).map_err(|e| TraceError::Parse {
            line: 0,
            reason: format!("not UTF-8: {e}"),
        })?;
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => {
                serde_json::from_str::<TraceHeader>(line).map_err(|e| TraceError::Parse {
                    line: 1,
                    reason: format!("bad header: {e}"),
                })?
            }
            None => {
                return Err(TraceError::Parse {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        };
        let mut events = Vec::new();
        for (i, line) in lines {
            let event = serde_json::from_str::<Event>(line).map_err(|e| TraceError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(Trace { header, events })
    }

    /// The monitored set recorded in the header.
    pub fn monitored_set(&self) -> Result<MonitoredSet, TraceError> {
        let spec = self
            .header
            .set
            .as_ref()
            .ok_or_else(|| TraceError::Malformed("header carries no monitored set".into()))?;
        spec.validate()
            .map_err(|e: ImpactError| TraceError::Malformed(format!("header set is invalid: {e}")))
    }

    /// Horizon of the observation: the run duration if recorded, else the
    /// last event time.
    pub fn end_time(&self) -> u64 {
        let last = self.events.last().map_or(0, |e| e.t);
        self.header.duration_ms.map_or(last, |d| d.max(last))
    }

    pub fn samples(
        &self,
    ) -> impl Iterator<Item = (u64, &BTreeSet<ProcessId>, ImpactValue, Status)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Sample {
                trusted,
                level,
                status,
            } => Some((e.t, trusted, *level, *status)),
            _ => None,
        })
    }

    /// Checks ordering, membership and crash-stop consistency.
    pub fn validate(&self) -> Result<(), TraceError> {
        let set = match &self.header.set {
            Some(_) => Some(self.monitored_set()?),
            None => None,
        };
        for pair in self.events.windows(2) {
            if pair[0].sort_key() > pair[1].sort_key() {
                return Err(TraceError::Malformed(format!(
                    "events out of order at t={}",
                    pair[1].t
                )));
            }
        }
        let mut crashed = BTreeSet::new();
        for e in &self.events {
            let mut mentioned: Vec<&ProcessId> = e.kind.process().into_iter().collect();
            if let EventKind::Sample { trusted, .. } = &e.kind {
                mentioned.extend(trusted);
            }
            if let Some(set) = &set {
                if let Some(q) = mentioned.iter().find(|q| !set.contains(q.as_str())) {
                    return Err(TraceError::Malformed(format!(
                        "t={}: {q} is not in the monitored set",
                        e.t
                    )));
                }
            }
            match &e.kind {
                EventKind::Crash { q } => {
                    if !crashed.insert(q.clone()) {
                        return Err(TraceError::Malformed(format!("{q} crashes twice")));
                    }
                }
                EventKind::HbSend { q, .. } if crashed.contains(q) => {
                    return Err(TraceError::Malformed(format!(
                        "t={}: {q} sends a heartbeat after crashing",
                        e.t
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn failure_pattern(&self) -> Result<FailurePattern, TraceError> {
        FailurePattern::from_trace(self)
    }
}

/// F(t) recovered from the CRASH events of a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailurePattern {
    crashes: BTreeMap<ProcessId, u64>,
    universe: BTreeSet<ProcessId>,
}

impl FailurePattern {
    pub fn from_trace(trace: &Trace) -> Result<Self, TraceError> {
        let mut universe: BTreeSet<ProcessId> = match &trace.header.set {
            Some(_) => trace.monitored_set()?.ids().cloned().collect(),
            None => BTreeSet::new(),
        };
        let mut crashes = BTreeMap::new();
        for e in &trace.events {
            if let EventKind::Crash { q } = &e.kind {
                if crashes.insert(q.clone(), e.t).is_some() {
                    return Err(TraceError::Malformed(format!("{q} crashes twice")));
                }
            }
            if trace.header.set.is_none() {
                universe.extend(e.kind.process().cloned());
                if let EventKind::Sample { trusted, .. } = &e.kind {
                    universe.extend(trusted.iter().cloned());
                }
            }
        }
        if let Some(q) = crashes.keys().find(|q| !universe.contains(*q)) {
            return Err(TraceError::Malformed(format!(
                "crash of unknown process {q}"
            )));
        }
        Ok(FailurePattern { crashes, universe })
    }

    /// Processes that failed before or at `t`.
    pub fn at(&self, t: u64) -> BTreeSet<ProcessId> {
        self.crashes
            .iter()
            .filter(|(_, &c)| c <= t)
            .map(|(q, _)| q.clone())
            .collect()
    }

    pub fn crash_time(&self, q: &str) -> Option<u64> {
        self.crashes.get(q).copied()
    }

    pub fn crashes(&self) -> &BTreeMap<ProcessId, u64> {
        &self.crashes
    }

    pub fn faulty(&self) -> BTreeSet<ProcessId> {
        self.crashes.keys().cloned().collect()
    }

    pub fn correct(&self) -> BTreeSet<ProcessId> {
        self.universe
            .iter()
            .filter(|q| !self.crashes.contains_key(*q))
            .cloned()
            .collect()
    }

    pub fn last_crash(&self) -> Option<u64> {
        self.crashes.values().copied().max()
    }
}

//! The Impact detector output: monitored sets, trust levels and status.
//!
//! Everything here is a pure function of immutable values. Estimating which
//! processes are trusted is the job of [`crate::liveness`]; this module only
//! turns a trusted subset into a trust level and a TRUSTED / NOT_TRUSTED
//! judgment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::value::{ImpactValue, ParseDecimalError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImpactError {
    #[error("monitored set is empty")]
    EmptySet,
    #[error("process id must be non-empty")]
    EmptyId,
    #[error("impact factor of {0} must be strictly positive (NonPositiveImpact)")]
    NonPositiveImpact(ProcessId),
    #[error("impact factor of {0} exceeds the fault margin (ImpactExceedsMargin)")]
    ImpactExceedsMargin(ProcessId),
    #[error("sum of impact factors is below the fault margin (SumBelowMargin)")]
    SumBelowMargin,
    #[error("sum of impact factors does not fit the fixed-point range")]
    SumOverflow,
    #[error("process {0} listed more than once (DuplicateId)")]
    DuplicateId(ProcessId),
    #[error("{0} (BadDecimal)")]
    BadDecimal(#[from] ParseDecimalError),
    #[error("process {0} is not a member of the monitored set (UnknownProcess)")]
    UnknownProcess(ProcessId),
}

/// Name of a process. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProcessId(String);

impl ProcessId {
    pub fn new(name: impl Into<String>) -> Result<Self, ImpactError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ImpactError::EmptyId);
        }
        Ok(ProcessId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ProcessId {
    type Error = ImpactError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ProcessId::new(value)
    }
}

impl From<ProcessId> for String {
    fn from(id: ProcessId) -> String {
        id.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for ProcessId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "TRUSTED")]
    Trusted,
    #[serde(rename = "NOT_TRUSTED")]
    NotTrusted,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Trusted => "TRUSTED",
            Status::NotTrusted => "NOT_TRUSTED",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated monitored set S with its impact factors and fault margin.
///
/// Immutable once built: `0 < I_q <= fault_margin` for every member and
/// `sum(S) >= fault_margin`, so the trust limit is never negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitoredSet {
    members: BTreeMap<ProcessId, ImpactValue>,
    fault_margin: ImpactValue,
    monitor: ProcessId,
    total: ImpactValue,
}

impl MonitoredSet {
    pub fn members(&self) -> &BTreeMap<ProcessId, ImpactValue> {
        &self.members
    }

    pub fn ids(&self) -> impl Iterator<Item = &ProcessId> {
        self.members.keys()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, q: &str) -> bool {
        self.members.contains_key(q)
    }

    pub fn impact(&self, q: &str) -> Option<ImpactValue> {
        self.members.get(q).copied()
    }

    pub fn fault_margin(&self) -> ImpactValue {
        self.fault_margin
    }

    pub fn monitor(&self) -> &ProcessId {
        &self.monitor
    }

    /// sum(S)
    pub fn total(&self) -> ImpactValue {
        self.total
    }

    /// sum(S) − fault_margin
    pub fn trust_limit(&self) -> ImpactValue {
        ImpactValue::from_micro(self.total.micro() - self.fault_margin.micro())
    }

    /// Raw form of this set, suitable for writing back to a config file.
    pub fn to_spec(&self) -> SetSpec {
        SetSpec {
            members: self
                .members
                .iter()
                .map(|(q, i)| (q.to_string(), i.to_string()))
                .collect(),
            fault_margin: self.fault_margin.to_string(),
            monitor: self.monitor.to_string(),
        }
    }
}

/// Builds a [`MonitoredSet`] from raw decimal strings.
pub fn validate_set<'a, I>(
    members: I,
    fault_margin: &str,
    monitor: &str,
) -> Result<MonitoredSet, ImpactError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let fault_margin = ImpactValue::parse(fault_margin)?;
    let monitor = ProcessId::new(monitor)?;

    let mut parsed = BTreeMap::new();
    for (name, impact) in members {
        let id = ProcessId::new(name)?;
        if parsed.contains_key(&id) {
            return Err(ImpactError::DuplicateId(id));
        }
        let impact = ImpactValue::parse(impact)?;
        if impact.is_zero() {
            return Err(ImpactError::NonPositiveImpact(id));
        }
        if impact > fault_margin {
            return Err(ImpactError::ImpactExceedsMargin(id));
        }
        parsed.insert(id, impact);
    }
    if parsed.is_empty() {
        return Err(ImpactError::EmptySet);
    }

    let total = parsed
        .values()
        .try_fold(ImpactValue::ZERO, |acc, &i| acc.checked_add(i))
        .ok_or(ImpactError::SumOverflow)?;
    if total < fault_margin {
        return Err(ImpactError::SumBelowMargin);
    }

    Ok(MonitoredSet {
        members: parsed,
        fault_margin,
        monitor,
        total,
    })
}

/// Exact sum of the impact factors of `subset`.
pub fn sum_impacts<'a, I>(set: &MonitoredSet, subset: I) -> Result<ImpactValue, ImpactError>
where
    I: IntoIterator<Item = &'a ProcessId>,
{
    let mut seen = BTreeSet::new();
    let mut total = ImpactValue::ZERO;
    for q in subset {
        let impact = set
            .impact(q.as_str())
            .ok_or_else(|| ImpactError::UnknownProcess(q.clone()))?;
        // A set counts each member once, however often the caller lists it.
        if seen.insert(q) {
            total = total + impact;
        }
    }
    Ok(total)
}

/// The detector output at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustSnapshot {
    pub at: u64,
    pub trusted: BTreeSet<ProcessId>,
    pub trust_level: ImpactValue,
    pub status: Status,
}

/// Status rule: TRUSTED iff the trust level strictly exceeds the trust limit.
pub fn status_for(set: &MonitoredSet, trust_level: ImpactValue) -> Status {
    if trust_level > set.trust_limit() {
        Status::Trusted
    } else {
        Status::NotTrusted
    }
}

pub fn trust_level<'a, I>(
    set: &MonitoredSet,
    trusted: I,
    at: u64,
) -> Result<TrustSnapshot, ImpactError>
where
    I: IntoIterator<Item = &'a ProcessId>,
{
    let trusted: BTreeSet<ProcessId> = trusted.into_iter().cloned().collect();
    let level = sum_impacts(set, &trusted)?;
    Ok(TrustSnapshot {
        at,
        status: status_for(set, level),
        trusted,
        trust_level: level,
    })
}

/// Status computed from the untrusted side: TRUSTED iff the impact lost to
/// untrusted processes is strictly below the fault margin.
///
/// Algebraically equivalent to [`trust_level`]'s rule and kept separate so
/// the two can check each other.
pub fn status_via_untrusted<'a, I>(set: &MonitoredSet, untrusted: I) -> Result<Status, ImpactError>
where
    I: IntoIterator<Item = &'a ProcessId>,
{
    let lost = sum_impacts(set, untrusted)?;
    Ok(if lost < set.fault_margin() {
        Status::Trusted
    } else {
        Status::NotTrusted
    })
}

/// One row of the worked example: F(t) and the resulting output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fig1Row {
    pub failed: BTreeSet<ProcessId>,
    pub snapshot: TrustSnapshot,
}

/// The four-process example set: q1..q4 with impacts 0.2, 0.8, 1, 0.6 and
/// fault margin 1.
pub fn fig1_set() -> MonitoredSet {
    validate_set(
        [("q1", "0.2"), ("q2", "0.8"), ("q3", "1"), ("q4", "0.6")],
        "1",
        "p",
    )
    .expect("example set is valid")
}

/// Failure patterns F(t) for t = 1..=5 of the worked example.
pub const FIG1_PATTERNS: [&[&str]; 5] = [&["q1"], &["q1", "q2"], &["q4"], &["q1", "q3"], &["q3"]];

/// Computes the five rows of the worked example from its set and failure
/// patterns, with trusted(t) = S ∖ F(t).
pub fn fig1_table() -> Vec<Fig1Row> {
    let set = fig1_set();
    FIG1_PATTERNS
        .iter()
        .zip(1u64..)
        .map(|(pattern, t)| {
            let failed: BTreeSet<ProcessId> = pattern
                .iter()
                .map(|q| ProcessId::new(*q).expect("non-empty"))
                .collect();
            let trusted = set.ids().filter(|q| !failed.contains(*q));
            let snapshot = trust_level(&set, trusted, t).expect("members only");
            Fig1Row { failed, snapshot }
        })
        .collect()
}

/// Raw, unvalidated set description as it appears in config files.
///
/// `members` keeps duplicates so validation can report them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSpec {
    #[serde(
        serialize_with = "serialize_members",
        deserialize_with = "deserialize_members"
    )]
    pub members: Vec<(String, String)>,
    pub fault_margin: String,
    pub monitor: String,
}

impl SetSpec {
    pub fn validate(&self) -> Result<MonitoredSet, ImpactError> {
        validate_set(
            self.members.iter().map(|(q, i)| (q.as_str(), i.as_str())),
            &self.fault_margin,
            &self.monitor,
        )
    }
}

fn serialize_members<S: Serializer>(members: &[(String, String)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(members.iter().map(|(q, i)| (q, i)))
}

fn deserialize_members<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, String)>, D::Error> {
    struct Entries;

    impl<'de> Visitor<'de> for Entries {
        type Value = Vec<(String, String)>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map from process id to decimal impact string")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(entry) = map.next_entry::<String, String>()? {
                out.push(entry);
            }
            Ok(out)
        }
    }

    d.deserialize_map(Entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<ProcessId> {
        names.iter().map(|n| ProcessId::new(*n).unwrap()).collect()
    }

    fn v(s: &str) -> ImpactValue {
        ImpactValue::parse(s).unwrap()
    }

    #[test]
    fn fig1_set_totals() {
        let set = fig1_set();
        assert_eq!(set.total(), v("2.6"));
        assert_eq!(set.trust_limit(), v("1.6"));
        assert_eq!(set.fault_margin(), v("1"));
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            validate_set([("q1", "0")], "1", "p"),
            Err(ImpactError::NonPositiveImpact(
                ProcessId::new("q1").unwrap()
            ))
        );
        assert_eq!(
            validate_set([("q1", "0")], "0", "p"),
            Err(ImpactError::NonPositiveImpact(
                ProcessId::new("q1").unwrap()
            ))
        );
        assert_eq!(
            validate_set([("q1", "1.2")], "1", "p"),
            Err(ImpactError::ImpactExceedsMargin(
                ProcessId::new("q1").unwrap()
            ))
        );
        assert_eq!(
            validate_set([("q1", "0.4"), ("q2", "0.4")], "1", "p"),
            Err(ImpactError::SumBelowMargin)
        );
        assert_eq!(
            validate_set(std::iter::empty::<(&str, &str)>(), "1", "p"),
            Err(ImpactError::EmptySet)
        );
        assert_eq!(
            validate_set([("q1", "0.5"), ("q1", "0.5")], "1", "p"),
            Err(ImpactError::DuplicateId(ProcessId::new("q1").unwrap()))
        );
        assert!(matches!(
            validate_set([("q1", "0.5000001")], "1", "p"),
            Err(ImpactError::BadDecimal(_))
        ));
        assert!(matches!(
            validate_set([("q1", "0.5")], "1e0", "p"),
            Err(ImpactError::BadDecimal(_))
        ));
        assert_eq!(
            validate_set([("", "0.5")], "0.5", "p"),
            Err(ImpactError::EmptyId)
        );
    }

    #[test]
    fn sum_equal_to_margin_is_valid() {
        let set = validate_set([("a", "0.5"), ("b", "0.5")], "1", "p").unwrap();
        assert_eq!(set.trust_limit(), ImpactValue::ZERO);
        // Everything trusted: 1 > 0.
        assert_eq!(
            trust_level(&set, set.ids(), 0).unwrap().status,
            Status::Trusted
        );
    }

    #[test]
    fn sums_over_subsets() {
        let set = fig1_set();
        assert_eq!(
            sum_impacts(&set, &ids(&["q2", "q3", "q4"])).unwrap(),
            v("2.4")
        );
        assert_eq!(sum_impacts(&set, &ids(&[])).unwrap(), ImpactValue::ZERO);
        assert_eq!(
            sum_impacts(&set, &ids(&["q1", "q2", "q3", "q4"])).unwrap(),
            v("2.6")
        );
        assert_eq!(
            sum_impacts(&set, &ids(&["q9"])),
            Err(ImpactError::UnknownProcess(ProcessId::new("q9").unwrap()))
        );
    }

    #[test]
    fn trust_level_rows() {
        let set = fig1_set();
        let cases = [
            (&["q2", "q3", "q4"][..], "2.4", Status::Trusted),
            (&["q3", "q4"][..], "1.6", Status::NotTrusted),
            (&["q2", "q4"][..], "1.4", Status::NotTrusted),
            (&["q1", "q2", "q3"][..], "2", Status::Trusted),
        ];
        for (trusted, level, status) in cases {
            let snap = trust_level(&set, &ids(trusted), 7).unwrap();
            assert_eq!(snap.trust_level, v(level));
            assert_eq!(snap.status, status);
            assert_eq!(snap.at, 7);
        }
    }

    #[test]
    fn untrusted_dual() {
        let set = fig1_set();
        assert_eq!(
            status_via_untrusted(&set, &ids(&["q1"])).unwrap(),
            Status::Trusted
        );
        assert_eq!(
            status_via_untrusted(&set, &ids(&["q1", "q2"])).unwrap(),
            Status::NotTrusted
        );
        assert_eq!(
            status_via_untrusted(&set, &ids(&[])).unwrap(),
            Status::Trusted
        );
        assert!(status_via_untrusted(&set, &ids(&["zz"])).is_err());
    }

    #[test]
    fn fig1_rows_are_computed() {
        let rows = fig1_table();
        let expected = [
            (&["q2", "q3", "q4"][..], "2.4", Status::Trusted),
            (&["q3", "q4"][..], "1.6", Status::NotTrusted),
            (&["q1", "q2", "q3"][..], "2", Status::Trusted),
            (&["q2", "q4"][..], "1.4", Status::NotTrusted),
            (&["q1", "q2", "q4"][..], "1.6", Status::NotTrusted),
        ];
        assert_eq!(rows.len(), 5);
        for (row, (trusted, level, status)) in rows.iter().zip(expected) {
            let want: BTreeSet<_> = ids(trusted).into_iter().collect();
            assert_eq!(row.snapshot.trusted, want);
            assert_eq!(row.snapshot.trust_level, v(level));
            assert_eq!(row.snapshot.status, status);
        }
    }

    #[test]
    fn set_spec_keeps_duplicates_from_json() {
        let spec: SetSpec = serde_json::from_str(
            r#"{"members": {"q1": "0.5", "q1": "0.5"}, "fault_margin": "1", "monitor": "p"}"#,
        )
        .unwrap();
        assert_eq!(spec.members.len(), 2);
        assert!(matches!(spec.validate(), Err(ImpactError::DuplicateId(_))));
    }

    #[test]
    fn set_spec_round_trip() {
        let spec = fig1_set().to_spec();
        let json = serde_json::to_string(&spec).unwrap();
        let back: SetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.validate().unwrap(), fig1_set());
    }
}
